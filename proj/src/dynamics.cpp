#include "omcavity/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "omcavity/expm.hpp"

namespace omcav {

std::vector<std::string> validate_noise(const NoiseParams& noise) {
    if (noise.kappa < 0.0)
        throw ConfigError("kappa must be non-negative, got " + std::to_string(noise.kappa));
    if (noise.gamma_m < 0.0)
        throw ConfigError("gamma_m must be non-negative, got " + std::to_string(noise.gamma_m));
    if (noise.nbar_bath < 0.0)
        throw ConfigError("nbar_bath must be non-negative, got " +
                          std::to_string(noise.nbar_bath));
    std::vector<std::string> warnings;
    if (noise.kappa >= 0.1)
        warnings.push_back("kappa = " + std::to_string(noise.kappa) +
                           " approaches the mechanical frequency; the resolved-sideband "
                           "picture behind the protocol degrades");
    return warnings;
}

IntegratorConfig default_ket_config() { return IntegratorConfig{}; }

IntegratorConfig default_density_config() {
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-6;
    cfg.abs_tol = 1e-10;
    return cfg;
}

static void validate_integrator(const IntegratorConfig& cfg) {
    if (!(cfg.rel_tol > 0.0) || !(cfg.abs_tol > 0.0))
        throw ConfigError("integrator tolerances must be positive");
    if (!(cfg.max_step > 0.0)) throw ConfigError("integrator max_step must be positive");
}

// ---- rotating-frame Hamiltonian -------------------------------------------

ModeOperator hamiltonian_rotating(double t, const ProtocolParams& params,
                                  const PhaseSchedule& schedule, int dim_cavity,
                                  int dim_mirror) {
    validate_params(params);
    const double t_total = params.total_time();
    if (t < -1e-9 || t > t_total + 1e-9)
        throw ConfigError("time t=" + std::to_string(t) + " outside the protocol window [0, " +
                          std::to_string(t_total) + "]");
    const double m = params.detuning == Detuning::One ? 1.0 : 2.0;
    const cd u = 2.0 * params.eta * std::cos(m * t) *
                 std::exp(cd(0.0, schedule.phase_at(std::clamp(t, 0.0, t_total))));

    ModeOperator drive_c = annihilation(dim_cavity, Mode::Cavity);
    drive_c.mat = cd(0.0, 1.0) * (u * SpMat(drive_c.mat.adjoint()) - std::conj(u) * drive_c.mat);
    ModeOperator xt = annihilation(dim_mirror, Mode::Mirror);
    xt.mat = std::exp(cd(0.0, -t)) * xt.mat + std::exp(cd(0.0, t)) * SpMat(xt.mat.adjoint());

    ModeOperator h = tensor(drive_c, identity_op(dim_mirror, Mode::Mirror));
    h.mat = h.mat - params.k * tensor(number_op(dim_cavity, Mode::Cavity), xt).mat;
    h.mat.prune(cd(0.0, 0.0));
    return h;
}

// ---- classical drive envelope with cavity damping folded in ----------------

namespace {

/* f(t) = ∫_0^t e^{-kappa (t-s)/2} u(s) ds tabulated on a fine grid; between
 * anchors a cubic Hermite interpolant uses the exact slopes
 * f' = u - (kappa/2) f.  Anchors align with period boundaries so each
 * interval sees a single phase step. */
class DampedEnvelope {
  public:
    static constexpr int kAnchorsPerPeriod = 2048;

    DampedEnvelope(const ProtocolParams& params, const PhaseSchedule& schedule, double kappa)
        : params_(params), schedule_(schedule), kappa_(kappa) {
        if (params_.N != schedule_.N)
            throw ConfigError("params.N and schedule.N disagree in drive envelope");
        dt_ = kPeriod / kAnchorsPerPeriod;
        const size_t count =
            static_cast<size_t>(kAnchorsPerPeriod) * static_cast<size_t>(params_.N) + 1;
        anchors_.resize(count);
        anchors_[0] = cd(0.0, 0.0);
        const double decay = std::exp(-kappa_ * dt_ / 2.0);
        for (size_t i = 1; i < count; ++i) {
            const double a = dt_ * static_cast<double>(i - 1);
            const double mid_ref = a + 0.5 * dt_;
            cd acc(0.0, 0.0);
            const int panels = 4;
            const double h = dt_ / panels;
            for (int p = 0; p < panels; ++p) {
                const double x0 = a + p * h;
                auto g = [&](double x) {
                    return std::exp(-kappa_ * (a + dt_ - x) / 2.0) * u(x, mid_ref);
                };
                acc += (h / 6.0) * (g(x0) + 4.0 * g(x0 + 0.5 * h) + g(x0 + h));
            }
            anchors_[i] = decay * anchors_[i - 1] + acc;
        }
    }

    /* drive coefficient u(t) = 2 eta e^{i phi} cos(mt); for step schedules the
     * phase is resolved from t_ref so interval endpoints stay one-sided */
    cd u(double t, double t_ref) const {
        double phi;
        if (schedule_.kind == ScheduleKind::Step) {
            int s = static_cast<int>(std::floor(t_ref / kPeriod));
            s = std::max(0, std::min(s, schedule_.N - 1));
            phi = schedule_.phases[static_cast<size_t>(s)];
        } else {
            phi = schedule_.phase_at(t);
        }
        const double m = params_.detuning == Detuning::One ? 1.0 : 2.0;
        return 2.0 * params_.eta * std::cos(m * t) * std::exp(cd(0.0, phi));
    }

    cd f(double t) const {
        const double t_max = dt_ * static_cast<double>(anchors_.size() - 1);
        if (t <= 0.0) return cd(0.0, 0.0);
        if (t > t_max + 1e-9) throw NumericalError("drive envelope queried beyond t = NT");
        const double pos = std::min(t, t_max) / dt_;
        auto i = static_cast<size_t>(std::floor(pos));
        if (i >= anchors_.size() - 1) i = anchors_.size() - 2;
        const double theta = pos - static_cast<double>(i);
        const double t0 = dt_ * static_cast<double>(i);
        const double t1 = t0 + dt_;
        const double mid = 0.5 * (t0 + t1);
        const cd p0 = anchors_[i], p1 = anchors_[i + 1];
        const cd m0 = (u(t0, mid) - 0.5 * kappa_ * p0) * dt_;
        const cd m1 = (u(t1, mid) - 0.5 * kappa_ * p1) * dt_;
        const double h00 = (1.0 + 2.0 * theta) * (1.0 - theta) * (1.0 - theta);
        const double h10 = theta * (1.0 - theta) * (1.0 - theta);
        const double h01 = theta * theta * (3.0 - 2.0 * theta);
        const double h11 = theta * theta * (theta - 1.0);
        return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1;
    }

  private:
    ProtocolParams params_;
    PhaseSchedule schedule_;
    double kappa_ = 0.0;
    double dt_ = 0.0;
    std::vector<cd> anchors_;
};

/* Precomputed composite sparse operators shared by the right-hand sides.
 * The displaced-frame Hamiltonian is
 *   H(t) = -k [ e^{-it} S(f) + e^{+it} S(f)† ],
 *   S(f) = (n_c + |f|² + f a† + f* a) ⊗ b,
 * so each right-hand-side evaluation combines fixed sparse matrices with
 * time-dependent scalar weights. */
struct Workspace {
    int dc = 0, dm = 0, n = 0;
    SpMat ncb, ib, adagb, ab;      /* (n_c | 1 | a† | a) ⊗ b   */
    SpMat ncbd, ibd, adagbd, abd;  /* (n_c | 1 | a | a†) ⊗ b†: adjoints of the above */
    SpMat a_comp, b_comp, bd_comp; /* a⊗1, 1⊗b, 1⊗b† for dissipators */
    VectorXd nc_diag, nm_diag;

    Workspace(int dim_cavity, int dim_mirror) : dc(dim_cavity), dm(dim_mirror), n(dc * dm) {
        ModeOperator nc = number_op(dc, Mode::Cavity);
        ModeOperator ic = identity_op(dc, Mode::Cavity);
        ModeOperator ac = annihilation(dc, Mode::Cavity);
        ModeOperator adc = creation(dc, Mode::Cavity);
        ModeOperator bm = annihilation(dm, Mode::Mirror);
        ModeOperator im = identity_op(dm, Mode::Mirror);
        ncb = tensor(nc, bm).mat;
        ib = tensor(ic, bm).mat;
        adagb = tensor(adc, bm).mat;
        ab = tensor(ac, bm).mat;
        ncbd = SpMat(ncb.adjoint());
        ibd = SpMat(ib.adjoint());
        adagbd = SpMat(adagb.adjoint()); /* (a† ⊗ b)† = a ⊗ b† */
        abd = SpMat(ab.adjoint());       /* (a ⊗ b)†  = a† ⊗ b† */
        a_comp = tensor(ac, im).mat;
        b_comp = ib;
        bd_comp = SpMat(ib.adjoint());
        nc_diag.resize(n);
        nm_diag.resize(n);
        CompositeIndex idx{dc, dm};
        for (int i = 0; i < n; ++i) {
            nc_diag[i] = static_cast<double>(idx.cavity_of(i));
            nm_diag[i] = static_cast<double>(idx.mirror_of(i));
        }
    }

    /* dpsi/dt = -i H psi = +ik [e^{-it} S psi + e^{+it} S† psi] */
    void rhs_ket(double t, cd f, double k, const VectorXcd& psi, VectorXcd& out) const {
        const double ff = std::norm(f);
        const cd em = std::exp(cd(0.0, -t)), ep = std::conj(em);
        out.noalias() = ncb * psi;
        out.noalias() += ff * (ib * psi);
        out.noalias() += f * (adagb * psi);
        out.noalias() += std::conj(f) * (ab * psi);
        out *= em;
        VectorXcd w = ncbd * psi;
        w.noalias() += ff * (ibd * psi);
        w.noalias() += std::conj(f) * (adagbd * psi);
        w.noalias() += f * (abd * psi);
        out.noalias() += ep * w;
        out *= cd(0.0, k);
    }

    /* drho/dt = -i[H, rho] + dissipators; the coherent part is Y + Y† with
     * Y = (-iH) rho, which keeps the update manifestly Hermitian. */
    void rhs_density(double t, cd f, double k, const NoiseParams& noise, const MatrixXcd& rho,
                     MatrixXcd& out, MatrixXcd& scratch) const {
        const double ff = std::norm(f);
        const cd em = std::exp(cd(0.0, -t)), ep = std::conj(em);
        scratch.noalias() = ncb * rho;
        scratch.noalias() += ff * (ib * rho);
        scratch.noalias() += f * (adagb * rho);
        scratch.noalias() += std::conj(f) * (ab * rho);
        scratch *= em;
        MatrixXcd w = ncbd * rho;
        w.noalias() += ff * (ibd * rho);
        w.noalias() += std::conj(f) * (adagbd * rho);
        w.noalias() += f * (abd * rho);
        scratch.noalias() += ep * w;
        scratch *= cd(0.0, k);
        out = scratch + scratch.adjoint().eval();

        if (noise.kappa > 0.0) {
            w.noalias() = a_comp * rho;
            out.noalias() += noise.kappa * (w * SpMat(a_comp.adjoint()));
            out.noalias() -= (0.5 * noise.kappa) * (nc_diag.asDiagonal() * rho);
            out.noalias() -= (0.5 * noise.kappa) * (rho * nc_diag.asDiagonal());
        }
        if (noise.gamma_m > 0.0) {
            const double gdown = noise.gamma_m * (noise.nbar_bath + 1.0);
            const double gup = noise.gamma_m * noise.nbar_bath;
            w.noalias() = b_comp * rho;
            out.noalias() += gdown * (w * bd_comp);
            out.noalias() -= (0.5 * gdown) * (nm_diag.asDiagonal() * rho);
            out.noalias() -= (0.5 * gdown) * (rho * nm_diag.asDiagonal());
            if (gup > 0.0) {
                w.noalias() = bd_comp * rho;
                out.noalias() += gup * (w * b_comp);
                VectorXd bbd = nm_diag.array() + 1.0;
                out.noalias() -= (0.5 * gup) * (bbd.asDiagonal() * rho);
                out.noalias() -= (0.5 * gup) * (rho * bbd.asDiagonal());
            }
        }
    }
};

/* Dormand–Prince 5(4) adaptive stepper with FSAL, used for both kets and
 * density matrices. */
template <class Y, class Rhs, class OnAccept>
void dopri5(const Rhs& rhs, Y& y, double t0, double t1, const IntegratorConfig& cfg,
            int& n_accepted, long& n_evals, const OnAccept& on_accept) {
    static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static const double a21 = 1.0 / 5;
    static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
    static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

    const double span = t1 - t0;
    if (span <= 0.0) return;
    double t = t0;
    double h = std::min(cfg.max_step, span);
    Y k1 = y, k2 = y, k3 = y, k4 = y, k5 = y, k6 = y, k7 = y, ytmp = y, ynew = y, yerr = y;
    rhs(t, y, k1);
    ++n_evals;
    bool fsal_fresh = true;
    while (t < t1 - 1e-13 * span) {
        h = std::min(h, t1 - t);
        if (h < 1e-14 * span)
            throw NumericalError("step-size underflow at t = " + std::to_string(t));
        if (!fsal_fresh) {
            rhs(t, y, k1);
            ++n_evals;
            fsal_fresh = true;
        }
        ytmp = y + h * a21 * k1;
        rhs(t + c2 * h, ytmp, k2);
        ytmp = y + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, ytmp, k3);
        ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, ytmp, k4);
        ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, ytmp, k5);
        ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, ytmp, k6);
        ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        rhs(t + h, ynew, k7);
        n_evals += 6;
        yerr = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        const auto scale = (cfg.abs_tol +
                            cfg.rel_tol * y.array().abs().max(ynew.array().abs()))
                               .eval();
        const double err = std::sqrt(
            (yerr.array().abs() / scale).square().sum() / static_cast<double>(y.size()));
        if (err <= 1.0) {
            t += h;
            y = ynew;
            k1 = k7; /* first-same-as-last */
            ++n_accepted;
            on_accept(t, y);
            fsal_fresh = true;
        } else {
            fsal_fresh = true; /* k1 still valid at unchanged t */
        }
        const double factor =
            std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
        h = std::min(factor * h, cfg.max_step);
    }
}

template <class Y, class Rhs, class OnAccept>
void rk4_fixed(const Rhs& rhs, Y& y, double t0, double t1, const IntegratorConfig& cfg,
               int& n_accepted, long& n_evals, const OnAccept& on_accept) {
    const double span = t1 - t0;
    if (span <= 0.0) return;
    const int steps = std::max(1, static_cast<int>(std::ceil(span / cfg.max_step)));
    const double h = span / steps;
    Y k1 = y, k2 = y, k3 = y, k4 = y, ytmp = y;
    for (int i = 0; i < steps; ++i) {
        const double t = t0 + i * h;
        rhs(t, y, k1);
        ytmp = y + (0.5 * h) * k1;
        rhs(t + 0.5 * h, ytmp, k2);
        ytmp = y + (0.5 * h) * k2;
        rhs(t + 0.5 * h, ytmp, k3);
        ytmp = y + h * k3;
        rhs(t + h, ytmp, k4);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        n_evals += 4;
        ++n_accepted;
        on_accept(t + h, y);
    }
}

template <class Y, class Rhs, class OnAccept>
void integrate_protocol(const Rhs& rhs, Y& y, int periods, const IntegratorConfig& cfg,
                        int& n_accepted, long& n_evals, const OnAccept& on_accept) {
    for (int s = 0; s < periods; ++s) {
        const double t0 = s * kPeriod, t1 = (s + 1) * kPeriod;
        if (cfg.method == IntegratorMethod::AdaptiveRK)
            dopri5(rhs, y, t0, t1, cfg, n_accepted, n_evals, on_accept);
        else
            rk4_fixed(rhs, y, t0, t1, cfg, n_accepted, n_evals, on_accept);
    }
}

SpMat cavity_displacement_composite(int dc, int dm, cd alpha) {
    const MatrixXcd d = displacement_operator(dc, alpha);
    std::vector<Triplet> trip;
    trip.reserve(static_cast<size_t>(dc) * dc * dm);
    for (int ic = 0; ic < dc; ++ic)
        for (int jc = 0; jc < dc; ++jc) {
            if (std::abs(d(ic, jc)) < 1e-16) continue;
            for (int im = 0; im < dm; ++im)
                trip.emplace_back(ic * dm + im, jc * dm + im, d(ic, jc));
        }
    SpMat out(dc * dm, dc * dm);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

std::ofstream open_diagnostics(const std::string& path, const char* weight_name) {
    std::ofstream out;
    if (path.empty()) return out;
    out.open(path);
    if (!out) throw ConfigError("cannot open diagnostics file '" + path + "'");
    out << std::setprecision(15);
    out << "t," << weight_name << ",tail_population\n";
    return out;
}

}  // namespace

// ---- Schrödinger propagation ----------------------------------------------

QuantumState schrodinger_propagate(const QuantumState& psi0, const ProtocolParams& params,
                                   const PhaseSchedule& schedule, int dim_cavity,
                                   int dim_mirror, const IntegratorConfig& config) {
    validate_params(params);
    validate_integrator(config);
    if (psi0.kind != StateKind::Ket) throw ConfigError("schrodinger_propagate expects a ket");
    if (psi0.mode != Mode::Composite || psi0.dim_cavity != dim_cavity ||
        psi0.dim_mirror != dim_mirror)
        throw ConfigError("psi0 must be a composite ket on the requested dimensions");
    if (std::abs(psi0.vec.norm() - 1.0) > 1e-8)
        throw ConfigError("psi0 must be normalized");

    const Workspace ws(dim_cavity, dim_mirror);
    const DampedEnvelope env(params, schedule, 0.0);
    std::ofstream diag = open_diagnostics(config.diagnostics_path, "norm");

    VectorXcd y = psi0.vec;
    int n_accepted = 0;
    long n_evals = 0;
    auto rhs = [&](double t, const VectorXcd& v, VectorXcd& out) {
        ws.rhs_ket(t, env.f(t), params.k, v, out);
    };
    auto on_accept = [&](double t, const VectorXcd& v) {
        if (diag.is_open()) {
            QuantumState probe;
            probe.kind = StateKind::Ket;
            probe.mode = Mode::Composite;
            probe.dim_cavity = dim_cavity;
            probe.dim_mirror = dim_mirror;
            probe.vec = v;
            diag << t << ',' << v.norm() << ',' << tail_population(probe, 1) << '\n';
        }
    };
    integrate_protocol(rhs, y, params.N, config, n_accepted, n_evals, on_accept);

    /* local errors of size rel_tol accumulate over many steps; only drifts far
     * beyond that budget indicate something actually went wrong */
    const double norm_err = std::abs(y.norm() - 1.0);
    if (norm_err > 5e-4)
        throw NumericalError("norm drift " + std::to_string(norm_err) +
                             " exceeds 5e-4; tighten tolerances or enlarge dimensions");
    y /= y.norm();

    /* displace back to the rotating frame */
    const cd f_final = env.f(params.total_time());
    if (std::abs(f_final) > 1e-12) {
        using RowMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<RowMat> psi_mat(y.data(), dim_cavity, dim_mirror);
        psi_mat = displacement_operator(dim_cavity, f_final) * psi_mat;
    }

    QuantumState out;
    out.kind = StateKind::Ket;
    out.mode = Mode::Composite;
    out.dim_cavity = dim_cavity;
    out.dim_mirror = dim_mirror;
    out.vec = std::move(y);
    out.metadata["frame"] = "rotating";
    out.metadata["steps"] = std::to_string(n_accepted);
    out.metadata["rhs_evals"] = std::to_string(n_evals);
    {
        std::ostringstream os;
        os << norm_err;
        out.metadata["norm_drift"] = os.str();
        os.str("");
        os << f_final.real() << (f_final.imag() < 0 ? "" : "+") << f_final.imag() << "i";
        out.metadata["drive_amplitude_final"] = os.str();
    }
    const double leak = tail_population(out, 1);
    if (leak > 1e-6)
        out.metadata["warning_truncation"] =
            "top-level population " + std::to_string(leak) + " exceeds 1e-6";
    return out;
}

// ---- Lindblad propagation --------------------------------------------------

QuantumState lindblad_propagate(const QuantumState& rho0, const ProtocolParams& params,
                                const PhaseSchedule& schedule, int dim_cavity, int dim_mirror,
                                const NoiseParams& noise, const IntegratorConfig& config) {
    validate_params(params);
    validate_noise(noise);
    validate_integrator(config);
    if (rho0.mode != Mode::Composite || rho0.dim_cavity != dim_cavity ||
        rho0.dim_mirror != dim_mirror)
        throw ConfigError("rho0 must be composite on the requested dimensions");
    MatrixXcd rho = rho0.density();
    if (std::abs(rho.trace().real() - 1.0) > 1e-8 || std::abs(rho.trace().imag()) > 1e-10)
        throw ConfigError("rho0 must have unit trace");

    const Workspace ws(dim_cavity, dim_mirror);
    const DampedEnvelope env(params, schedule, noise.kappa);
    std::ofstream diag = open_diagnostics(config.diagnostics_path, "trace");

    int n_accepted = 0;
    long n_evals = 0;
    MatrixXcd scratch(ws.n, ws.n);
    auto rhs = [&](double t, const MatrixXcd& r, MatrixXcd& out) {
        ws.rhs_density(t, env.f(t), params.k, noise, r, out, scratch);
    };
    auto on_accept = [&](double t, MatrixXcd& r) {
        r = 0.5 * (r + r.adjoint().eval()); /* keep Hermiticity exact */
        if (diag.is_open()) {
            QuantumState probe;
            probe.kind = StateKind::Density;
            probe.mode = Mode::Composite;
            probe.dim_cavity = dim_cavity;
            probe.dim_mirror = dim_mirror;
            probe.rho = r;
            diag << t << ',' << r.trace().real() << ',' << tail_population(probe, 1) << '\n';
        }
    };
    integrate_protocol(rhs, rho, params.N, config, n_accepted, n_evals, on_accept);

    const double trace_err = std::abs(rho.trace().real() - 1.0) + std::abs(rho.trace().imag());
    if (trace_err > 5e-4)
        throw NumericalError("trace drift " + std::to_string(trace_err) + " exceeds 5e-4");
    rho /= rho.trace().real();

    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(rho, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-6)
        throw NumericalError("density matrix lost positivity (min eigenvalue " +
                             std::to_string(min_eig) + "); integration unstable");

    const cd f_final = env.f(params.total_time());
    if (std::abs(f_final) > 1e-12) {
        const SpMat d = cavity_displacement_composite(dim_cavity, dim_mirror, f_final);
        rho = (d * rho * SpMat(d.adjoint())).eval();
    }

    QuantumState out;
    out.kind = StateKind::Density;
    out.mode = Mode::Composite;
    out.dim_cavity = dim_cavity;
    out.dim_mirror = dim_mirror;
    out.rho = std::move(rho);
    out.metadata["frame"] = "rotating";
    out.metadata["steps"] = std::to_string(n_accepted);
    out.metadata["rhs_evals"] = std::to_string(n_evals);
    out.metadata["min_eigenvalue"] = std::to_string(min_eig);
    {
        std::ostringstream os;
        os << trace_err;
        out.metadata["trace_drift"] = os.str();
    }
    const double leak = tail_population(out, 1);
    if (leak > 1e-6)
        out.metadata["warning_truncation"] =
            "top-level population " + std::to_string(leak) + " exceeds 1e-6";
    return out;
}

// ---- perturbative decoherence corrections ----------------------------------

namespace {

/* shared tail: positivity check, clamp of tiny negatives, renormalization.
 * A first-order perturbative state generically has small negative eigenvalues
 * of second order in the noise strength; what matters downstream is the total
 * negative mass clipped away, so that is what we bound. */
QuantumState finish_correction(MatrixXcd rho, const QuantumState& like) {
    rho = 0.5 * (rho + rho.adjoint().eval());
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(rho);
    const double min_eig = es.eigenvalues().minCoeff();
    const double neg_mass = -es.eigenvalues().cwiseMin(0.0).sum();
    if (neg_mass > 1e-2)
        throw NumericalError(
            "first-order correction drove the state non-positive (clipped mass " +
            std::to_string(neg_mass) + ", min eigenvalue " + std::to_string(min_eig) +
            "); outside the perturbative regime");
    if (min_eig < -1e-14) {
        VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
        clamped /= clamped.sum();
        rho = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().adjoint();
    }
    QuantumState out;
    out.kind = StateKind::Density;
    out.mode = like.mode;
    out.dim_cavity = like.dim_cavity;
    out.dim_mirror = like.dim_mirror;
    out.rho = std::move(rho);
    out.metadata = like.metadata;
    out.metadata["min_eigenvalue"] = std::to_string(min_eig);
    out.metadata["clipped_negative_mass"] = std::to_string(neg_mass);
    return out;
}

void add_dissipator(MatrixXcd& acc, const MatrixXcd& L, const MatrixXcd& rho, double weight) {
    const MatrixXcd LdL = L.adjoint() * L;
    acc.noalias() += weight * (L * rho * L.adjoint());
    acc.noalias() -= (0.5 * weight) * (LdL * rho);
    acc.noalias() -= (0.5 * weight) * (rho * LdL);
}

}  // namespace

QuantumState photon_loss_correction(const QuantumState& rho_ideal, const ProtocolParams& params,
                                    double kappa) {
    validate_params(params);
    if (kappa < 0.0) throw ConfigError("kappa must be non-negative");
    if (rho_ideal.mode == Mode::Cavity)
        throw ConfigError("photon_loss_correction needs the mirror or the composite state");
    MatrixXcd rho = rho_ideal.density();
    if (kappa == 0.0 || rho_ideal.mode == Mode::Mirror) {
        /* mirror-only input means the cavity factor is vacuum, and
         * ã†ã = a†a ⊗ 1 annihilates that sector: the correction is zero */
        QuantumState out = rho_ideal;
        out.kind = StateKind::Density;
        out.rho = std::move(rho);
        out.vec.resize(0);
        return out;
    }
    const int dc = rho_ideal.dim_cavity, dm = rho_ideal.dim_mirror;
    /* ã = a ⊗ e^{k(b-b†)}; the mirror factor is the displacement by -k */
    const MatrixXcd mirror_disp = displacement_operator(dm, cd(-params.k, 0.0));
    MatrixXcd atilde_full = MatrixXcd::Zero(dc * dm, dc * dm);
    for (int ic = 1; ic < dc; ++ic)
        atilde_full.block((ic - 1) * dm, ic * dm, dm, dm) = std::sqrt(double(ic)) * mirror_disp;
    MatrixXcd corrected = rho;
    add_dissipator(corrected, atilde_full, rho, kappa * params.total_time());
    return finish_correction(std::move(corrected), rho_ideal);
}

QuantumState mech_damping_correction(const QuantumState& rho_ideal, const ProtocolParams& params,
                                     const NoiseParams& noise, BtildeReading reading) {
    validate_params(params);
    validate_noise(noise);
    if (rho_ideal.mode == Mode::Cavity)
        throw ConfigError("mech_damping_correction needs the mirror or the composite state");
    MatrixXcd rho = rho_ideal.density();
    if (noise.gamma_m == 0.0) {
        QuantumState out = rho_ideal;
        out.kind = StateKind::Density;
        out.rho = std::move(rho);
        out.vec.resize(0);
        return out;
    }
    const double c = reading == BtildeReading::PrintedKappa ? noise.kappa : params.k;
    MatrixXcd btilde;
    if (rho_ideal.mode == Mode::Mirror) {
        const int dm = rho_ideal.dim_mirror;
        btilde = MatrixXcd(annihilation(dm, Mode::Mirror).mat);
        btilde.diagonal().array() -= cd(c * params.eta * params.eta / 2.0, 0.0);
    } else {
        const int dc = rho_ideal.dim_cavity, dm = rho_ideal.dim_mirror;
        btilde = MatrixXcd(
            tensor(identity_op(dc, Mode::Cavity), annihilation(dm, Mode::Mirror)).mat);
        btilde -= c * MatrixXcd(
                          tensor(number_op(dc, Mode::Cavity), identity_op(dm, Mode::Mirror)).mat);
        btilde.diagonal().array() -= cd(c * params.eta * params.eta / 2.0, 0.0);
    }
    const double gt = noise.gamma_m * params.total_time();
    MatrixXcd corrected = rho;
    add_dissipator(corrected, btilde, rho, gt * (noise.nbar_bath + 1.0));
    if (noise.nbar_bath > 0.0)
        add_dissipator(corrected, MatrixXcd(btilde.adjoint()), rho, gt * noise.nbar_bath);
    return finish_correction(std::move(corrected), rho_ideal);
}

}  // namespace omcav
