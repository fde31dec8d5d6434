#include "omcavity/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace omcav {

using json = nlohmann::json;

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;

double state_mean_n(const QuantumState& state) {
    double n = 0.0;
    if (state.kind == StateKind::Ket) {
        for (int m = 0; m < state.vec.size(); ++m) n += m * std::norm(state.vec(m));
    } else {
        for (int m = 0; m < state.rho.rows(); ++m) n += m * state.rho(m, m).real();
    }
    return n;
}

double state_purity(const QuantumState& state) {
    if (state.kind == StateKind::Ket) return 1.0;
    return state.rho.cwiseAbs2().sum();
}

void require_single_mode(const QuantumState& state, const char* who) {
    if (state.mode == Mode::Composite)
        throw ConfigError(std::string(who) +
                          " expects a single-mode state; take a partial_trace first");
}

/* Half-convention axes backing a requested grid: Paper axes are the same
 * points divided by √2 (values then halved on the way out). */
struct ResolvedAxes {
    VectorXd q;           // requested axes (per spec convention)
    VectorXd p;
    VectorXd q_half;      // the same axes in Half units
    VectorXd p_half;
    double value_scale = 1.0;  // multiply Half-convention W by this
};

VectorXd linspace(double lo, double hi, int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i)
        v(i) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

ResolvedAxes resolve_axes(const QuantumState& state, const WignerSpec& spec,
                          double enlarge) {
    if (spec.nq < 9 || spec.np < 9)
        throw ConfigError("wigner grid needs at least 9 points per axis");
    const double conv_scale =
        spec.convention == QuadratureConvention::Paper ? kSqrt2 : 1.0;
    const double auto_extent =
        (4.0 + 2.0 * std::sqrt(state_mean_n(state))) * conv_scale * enlarge;
    const double Lq = spec.q_extent > 0.0 ? spec.q_extent : auto_extent;
    const double Lp = spec.p_extent > 0.0 ? spec.p_extent : auto_extent;

    ResolvedAxes ax;
    ax.q = linspace(-Lq, Lq, spec.nq);
    ax.p = linspace(-Lp, Lp, spec.np);
    ax.q_half = ax.q / conv_scale;
    ax.p_half = ax.p / conv_scale;
    ax.value_scale = spec.convention == QuadratureConvention::Paper ? 0.5 : 1.0;
    return ax;
}

/* Highest Fock index carrying more than ~1e−12 of the state's mass; sets
 * both the wavefunction support and its fastest oscillation. */
int significant_levels(const QuantumState& state) {
    const int dim = state.dim();
    double tail = 0.0;
    for (int n = dim - 1; n > 0; --n) {
        tail += state.kind == StateKind::Ket
                    ? std::norm(state.vec(n))
                    : std::max(0.0, state.rho(n, n).real());
        if (tail > 1e-12) return n + 1;
    }
    return 1;
}

/* Harmonic-oscillator eigenfunctions φ_0..φ_{dim−1} at the given points
 * (Half units), by the stable three-term recurrence.  Column n = φ_n. */
MatrixXd hermite_functions(const VectorXd& x, int dim) {
    const int nx = static_cast<int>(x.size());
    MatrixXd phi(nx, dim);
    const double norm0 = std::pow(kPi, -0.25);
    for (int i = 0; i < nx; ++i) {
        const double xi = x(i);
        phi(i, 0) = norm0 * std::exp(-0.5 * xi * xi);
        if (dim > 1) phi(i, 1) = kSqrt2 * xi * phi(i, 0);
        for (int n = 1; n + 1 < dim; ++n)
            phi(i, n + 1) = std::sqrt(2.0 / (n + 1.0)) * xi * phi(i, n) -
                            std::sqrt(n / (n + 1.0)) * phi(i, n - 1);
    }
    return phi;
}

/* Core eigenfunction route on Half-convention axes.  The y quadrature lives
 * on a fine grid commensurate with the q axis so every q ± y is a fine-grid
 * point; the Fourier kernel is applied as one dense product.  Kets sample
 * χ(q+y)χ̄(q−y) directly; density matrices sample the position kernel
 * ⟨q+y|ρ|q−y⟩ through B = Φρ, which keeps the cost independent of rank. */
MatrixXd wigner_half_eigenfunction(const QuantumState& state, const VectorXd& q,
                                   const VectorXd& p, int oversample) {
    const int nq = static_cast<int>(q.size());
    const int np = static_cast<int>(p.size());
    const int dim = state.dim();
    const double hq = q(1) - q(0);
    const double p_max = std::max(std::abs(p(0)), std::abs(p(np - 1)));

    /* resolve both the e^{−2ipy} kernel and the fastest wavefunction
     * component (local wavenumber ≈ √(2n+1) at the top occupied level) */
    const int top = significant_levels(state);
    const double k_fast = 2.0 * p_max + std::sqrt(2.0 * top + 1.0);
    const double hy_target = kPi / (2.0 * k_fast);
    const int r = oversample > 0
                      ? oversample
                      : std::max(1, static_cast<int>(std::ceil(hq / hy_target)));
    const double hy = hq / r;

    /* support of the wavefunctions: classical turning point of the top
     * occupied level, capped where φ_0 underflows */
    const double q_edge = std::max(std::abs(q(0)), std::abs(q(nq - 1)));
    const double support =
        std::min(36.0, std::max(q_edge + 4.0, std::sqrt(2.0 * top + 1.0) + 2.0));
    const int jmax = static_cast<int>(std::ceil(support / hy));

    /* fine grid anchored on q(0) so that every q_i ± y_j is exactly a fine
     * point: fine index of q_i is i·r + jmax */
    const int nf = (nq - 1) * r + 2 * jmax + 1;
    VectorXd xf(nf);
    for (int m = 0; m < nf; ++m) xf(m) = q(0) + (m - jmax) * hy;
    MatrixXd phi = hermite_functions(xf, dim);

    const int ny = 2 * jmax + 1;
    Eigen::MatrixXcd kernel(ny, np);
    for (int j = -jmax; j <= jmax; ++j) {
        const double y = j * hy;
        for (int k = 0; k < np; ++k)
            kernel(j + jmax, k) = std::exp(cd(0.0, -2.0 * p(k) * y)) * (hy / kPi);
    }

    Eigen::MatrixXcd m(nq, ny);
    if (state.kind == StateKind::Ket) {
        VectorXcd chi = phi.cast<cd>() * state.vec;
        for (int i = 0; i < nq; ++i) {
            const int ci = i * r + jmax;
            for (int j = -jmax; j <= jmax; ++j)
                m(i, j + jmax) = chi(ci + j) * std::conj(chi(ci - j));
        }
    } else {
        const MatrixXcd b = phi.cast<cd>() * state.rho;
        for (int i = 0; i < nq; ++i) {
            const int ci = i * r + jmax;
            for (int j = -jmax; j <= jmax; ++j) {
                cd acc = 0.0;
                const cd* bu = b.data() + (ci + j);
                const double* pv = phi.data() + (ci - j);
                for (int n = 0; n < dim; ++n)
                    acc += bu[static_cast<std::ptrdiff_t>(n) * nf] *
                           pv[static_cast<std::ptrdiff_t>(n) * nf];
                m(i, j + jmax) = acc;
            }
        }
    }

    Eigen::MatrixXcd wk = m * kernel;
    const double worst_imag = wk.imag().cwiseAbs().maxCoeff();
    if (worst_imag > 1e-10)
        throw NumericalError("Wigner evaluation left an imaginary residue of " +
                             std::to_string(worst_imag));
    return wk.real();
}

double ring_max(const MatrixXd& w) {
    const int nq = static_cast<int>(w.rows());
    const int np = static_cast<int>(w.cols());
    double m = 0.0;
    for (int i = 0; i < nq; ++i)
        m = std::max({m, std::abs(w(i, 0)), std::abs(w(i, np - 1))});
    for (int j = 0; j < np; ++j)
        m = std::max({m, std::abs(w(0, j)), std::abs(w(nq - 1, j))});
    return m;
}

WignerGrid assemble_grid(const ResolvedAxes& ax, const MatrixXd& w_half,
                         QuadratureConvention conv) {
    WignerGrid g;
    g.q_axis = ax.q;
    g.p_axis = ax.p;
    g.values = ax.value_scale * w_half;
    g.convention = conv;
    return g;
}

/* Auto-extent grids retry with a larger footprint when the boundary is hot;
 * explicit extents fail instead. */
template <typename Eval>
WignerGrid boundary_checked(const QuantumState& state, const WignerSpec& spec,
                            const Eval& eval) {
    const bool fixed = spec.q_extent > 0.0 && spec.p_extent > 0.0;
    double enlarge = 1.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        ResolvedAxes ax = resolve_axes(state, spec, enlarge);
        WignerGrid g = assemble_grid(ax, eval(ax), spec.convention);
        if (g.boundary_max() <= spec.boundary_tol) return g;
        if (fixed)
            throw NumericalError(
                "Wigner grid boundary carries |W| = " +
                std::to_string(g.boundary_max()) +
                " > " + std::to_string(spec.boundary_tol) + ": enlarge the grid");
        enlarge *= 1.3;
    }
    throw NumericalError("Wigner grid failed to contain the state after repeated "
                         "enlargement; the state may be truncation-limited");
}

/* Exact displaced-parity value at one phase-space point:
 *
 *   W(q,p) = (1/π) Σ_{jk} ρ_{jk} (−1)^k ⟨k|D(−2α)|j⟩,   α = (q+ip)/√2,
 *
 * using tr[D†(α)|j⟩⟨k|D(α)Π] = (−1)^k ⟨k|D(−2α)|j⟩ and the closed-form
 * displacement matrix elements ⟨m|D(β)|n⟩ = √(n!/m!) β^{m−n} e^{−|β|²/2}
 * L_n^{(m−n)}(|β|²) (m ≥ n).  Exact for the truncated ρ at every point, so
 * it stays faithful where a truncated-matrix D would lose unitarity. */
double displaced_parity_value(const MatrixXcd& rho, const VectorXd& lgamma_tab,
                              cd alpha) {
    const int dim = static_cast<int>(rho.rows());
    const cd beta = -2.0 * alpha;
    const double t = std::norm(beta);
    if (t == 0.0) {  /* D(0) = 1: plain parity expectation */
        double s = 0.0;
        for (int j = 0; j < dim; ++j)
            s += (j % 2 == 0 ? 1.0 : -1.0) * rho(j, j).real();
        return s / kPi;
    }
    const double log_abs_beta = 0.5 * std::log(t);
    const double arg_beta = std::arg(beta);

    cd sum = 0.0;
    std::vector<double> lag(dim);
    for (int a = 0; a < dim; ++a) {
        /* L_j^{(a)}(t) by the three-term recurrence */
        for (int j = 0; j + a < dim; ++j) {
            if (j == 0)
                lag[j] = 1.0;
            else if (j == 1)
                lag[j] = 1.0 + a - t;
            else
                lag[j] = ((2.0 * j - 1.0 + a - t) * lag[j - 1] -
                          (j - 1.0 + a) * lag[j - 2]) /
                         static_cast<double>(j);
        }
        for (int j = 0; j + a < dim; ++j) {
            const int k = j + a;
            const double lmag = a * log_abs_beta - 0.5 * t +
                                0.5 * (lgamma_tab(j) - lgamma_tab(k));
            const double mag = std::exp(lmag) * lag[j];
            const double parity_j = (j % 2 == 0) ? 1.0 : -1.0;
            const double parity_k = (k % 2 == 0) ? 1.0 : -1.0;
            /* k ≥ j block: ρ_{jk} (−1)^k ⟨k|D(β)|j⟩ */
            sum += rho(j, k) * parity_k * std::polar(mag, a * arg_beta);
            if (a > 0) {
                /* k < j block: ⟨j'|D(β)|k'⟩ with j' = j, k' = k uses −β̄ */
                sum += rho(k, j) * parity_j *
                       std::polar(mag, a * (kPi - arg_beta));
            }
        }
    }
    return sum.real() / kPi;
}

}  // namespace

double WignerGrid::dq() const { return q_axis(1) - q_axis(0); }
double WignerGrid::dp() const { return p_axis(1) - p_axis(0); }

double WignerGrid::normalization() const {
    const int nq = static_cast<int>(q_axis.size());
    const int np = static_cast<int>(p_axis.size());
    double sum = 0.0;
    for (int i = 0; i < nq; ++i) {
        const double wq = (i == 0 || i == nq - 1) ? 0.5 : 1.0;
        for (int j = 0; j < np; ++j) {
            const double wp = (j == 0 || j == np - 1) ? 0.5 : 1.0;
            sum += wq * wp * values(i, j);
        }
    }
    return sum * dq() * dp();
}

double WignerGrid::boundary_max() const { return ring_max(values); }

WignerGrid wigner(const QuantumState& state, const WignerSpec& spec) {
    require_single_mode(state, "wigner");
    return boundary_checked(state, spec, [&](const ResolvedAxes& ax) {
        return wigner_half_eigenfunction(state, ax.q_half, ax.p_half,
                                         spec.oversample);
    });
}

WignerGrid wigner_displaced_parity(const QuantumState& state,
                                   const WignerSpec& spec) {
    require_single_mode(state, "wigner_displaced_parity");
    const MatrixXcd rho = state.density();
    const int dim = static_cast<int>(rho.rows());

    VectorXd lgamma_tab(dim);
    for (int n = 0; n < dim; ++n) lgamma_tab(n) = std::lgamma(n + 1.0);

    auto eval = [&](const ResolvedAxes& ax) {
        const int nq = static_cast<int>(ax.q_half.size());
        const int np = static_cast<int>(ax.p_half.size());
        MatrixXd w(nq, np);
        for (int i = 0; i < nq; ++i) {
            for (int j = 0; j < np; ++j) {
                const cd alpha(ax.q_half(i) / kSqrt2, ax.p_half(j) / kSqrt2);
                w(i, j) = displaced_parity_value(rho, lgamma_tab, alpha);
            }
        }
        return w;
    };
    return boundary_checked(state, spec, eval);
}

void wigner_to_csv(const WignerGrid& grid, std::ostream& os) {
    os << "q,p,w\n";
    std::ostringstream line;
    line.precision(12);
    for (int i = 0; i < grid.q_axis.size(); ++i)
        for (int j = 0; j < grid.p_axis.size(); ++j) {
            line.str("");
            line << grid.q_axis(i) << ',' << grid.p_axis(j) << ','
                 << grid.values(i, j) << '\n';
            os << line.str();
        }
}

void wigner_write(const WignerGrid& grid, const std::string& base_path) {
    const std::string csv_path = base_path + ".csv";
    {
        std::ofstream csv(csv_path);
        if (!csv) throw ConfigError("cannot open " + csv_path + " for writing");
        wigner_to_csv(grid, csv);
    }
    json header;
    header["convention"] =
        grid.convention == QuadratureConvention::Paper ? "paper" : "half";
    header["nq"] = grid.q_axis.size();
    header["np"] = grid.p_axis.size();
    header["q_min"] = grid.q_axis(0);
    header["q_max"] = grid.q_axis(grid.q_axis.size() - 1);
    header["p_min"] = grid.p_axis(0);
    header["p_max"] = grid.p_axis(grid.p_axis.size() - 1);
    header["normalization"] = grid.normalization();
    header["payload"] = csv_path.substr(csv_path.find_last_of('/') + 1);
    std::ofstream js(base_path + ".json");
    if (!js) throw ConfigError("cannot open " + base_path + ".json for writing");
    js << header.dump(2) << '\n';
}

namespace {

/* Curvature C = −s_c ∬W∇²W and purity P = s_p ∬W² from the grid, with the
 * convention-dependent scales that make both convention-independent. */
void grid_curvature_purity(const WignerGrid& g, double* curvature,
                           double* purity) {
    const int nq = static_cast<int>(g.q_axis.size());
    const int np = static_cast<int>(g.p_axis.size());
    const double hq = g.dq(), hp = g.dp();
    double lap_term = 0.0, sq_term = 0.0;
    for (int i = 1; i + 1 < nq; ++i) {
        for (int j = 1; j + 1 < np; ++j) {
            const double w = g.values(i, j);
            const double lap =
                (g.values(i + 1, j) - 2.0 * w + g.values(i - 1, j)) / (hq * hq) +
                (g.values(i, j + 1) - 2.0 * w + g.values(i, j - 1)) / (hp * hp);
            lap_term += w * lap;
            sq_term += w * w;
        }
    }
    lap_term *= hq * hp;
    sq_term *= hq * hp;
    const bool paper = g.convention == QuadratureConvention::Paper;
    *curvature = (paper ? -2.0 * kPi : -kPi / 2.0) * lap_term;
    *purity = (paper ? 4.0 * kPi : 2.0 * kPi) * sq_term;
}

NonClassicality assemble_measure(double curvature, double purity, double mean_n) {
    NonClassicality out;
    out.value = curvature - 0.5 * purity * purity;
    out.mean_n = mean_n;
    out.ratio = mean_n > 0.0 ? out.value / mean_n : 0.0;
    return out;
}

}  // namespace

NonClassicality nonclassicality(const WignerGrid& grid) {
    double curvature = 0.0, purity = 0.0;
    grid_curvature_purity(grid, &curvature, &purity);

    /* second moments give ⟨n⟩:  ∬W(q²+p²) = 2⟨n⟩+1 (Half) or 2(2⟨n⟩+1) */
    const int nq = static_cast<int>(grid.q_axis.size());
    const int np = static_cast<int>(grid.p_axis.size());
    double m2 = 0.0;
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < np; ++j) {
            const double wq = (i == 0 || i == nq - 1) ? 0.5 : 1.0;
            const double wp = (j == 0 || j == np - 1) ? 0.5 : 1.0;
            m2 += wq * wp * grid.values(i, j) *
                  (grid.q_axis(i) * grid.q_axis(i) + grid.p_axis(j) * grid.p_axis(j));
        }
    m2 *= grid.dq() * grid.dp();
    const bool paper = grid.convention == QuadratureConvention::Paper;
    const double mean_n = paper ? (m2 - 2.0) / 4.0 : (m2 - 1.0) / 2.0;
    return assemble_measure(curvature, purity, mean_n);
}

NonClassicality nonclassicality(const QuantumState& state, const WignerSpec& spec) {
    require_single_mode(state, "nonclassicality");
    const double mean_n = state_mean_n(state);
    const double purity = state_purity(state);

    WignerSpec work = spec;
    double previous = 0.0;
    bool have_previous = false;
    for (int pass = 0; pass < 4; ++pass) {
        WignerGrid g = wigner(state, work);
        double curvature = 0.0, grid_purity = 0.0;
        grid_curvature_purity(g, &curvature, &grid_purity);
        NonClassicality candidate = assemble_measure(curvature, purity, mean_n);
        if (have_previous &&
            std::abs(candidate.value - previous) <=
                std::max(5e-3 * std::abs(candidate.value), 2e-4))
            return candidate;
        previous = candidate.value;
        have_previous = true;
        work.nq = static_cast<int>(work.nq * 1.5) | 1;
        work.np = static_cast<int>(work.np * 1.5) | 1;
    }
    throw NumericalError(
        "non-classicality failed to stabilise under grid refinement");
}

double fidelity(const QuantumState& a, const QuantumState& b) {
    if (a.dim() != b.dim())
        throw ConfigError("fidelity needs matching dimensions, got " +
                          std::to_string(a.dim()) + " and " +
                          std::to_string(b.dim()));

    if (a.kind == StateKind::Ket && b.kind == StateKind::Ket) {
        const cd overlap = a.vec.dot(b.vec);
        return std::min(1.0, std::norm(overlap));
    }
    if (a.kind == StateKind::Ket || b.kind == StateKind::Ket) {
        const QuantumState& ket = a.kind == StateKind::Ket ? a : b;
        const QuantumState& dens = a.kind == StateKind::Ket ? b : a;
        const cd val = ket.vec.dot(dens.rho * ket.vec);
        return std::clamp(val.real(), 0.0, 1.0);
    }

    auto psd_sqrt = [](const MatrixXcd& rho, const char* label) {
        Eigen::SelfAdjointEigenSolver<MatrixXcd> es(rho);
        if (es.info() != Eigen::Success)
            throw NumericalError(std::string("eigendecomposition failed in fidelity (") +
                                 label + ")");
        VectorXd lam = es.eigenvalues();
        for (int i = 0; i < lam.size(); ++i) {
            if (lam(i) < -1e-10)
                throw NumericalError(std::string("fidelity input ") + label +
                                     " is not positive semidefinite (eigenvalue " +
                                     std::to_string(lam(i)) + ")");
            lam(i) = std::sqrt(std::max(lam(i), 0.0));
        }
        return MatrixXcd(es.eigenvectors() * lam.asDiagonal() *
                         es.eigenvectors().adjoint());
    };

    const MatrixXcd ra = psd_sqrt(a.rho, "A");
    const MatrixXcd inner = ra * b.rho * ra;
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(inner);
    if (es.info() != Eigen::Success)
        throw NumericalError("eigendecomposition failed in fidelity (inner)");
    double sum = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double lam = es.eigenvalues()(i);
        if (lam < -1e-10)
            throw NumericalError(
                "fidelity inner product is not positive semidefinite (eigenvalue " +
                std::to_string(lam) + ")");
        sum += std::sqrt(std::max(lam, 0.0));
    }
    return std::min(1.0, sum * sum);
}

QuadratureStats quadrature_stats(const QuantumState& state,
                                 QuadratureConvention conv) {
    require_single_mode(state, "quadrature_stats");

    cd mean_a = 0.0, mean_a2 = 0.0;
    double mean_n = 0.0;
    const int dim = state.dim();
    if (state.kind == StateKind::Ket) {
        for (int n = 0; n < dim; ++n) {
            mean_n += n * std::norm(state.vec(n));
            if (n + 1 < dim)
                mean_a += std::conj(state.vec(n)) * std::sqrt(n + 1.0) *
                          state.vec(n + 1);
            if (n + 2 < dim)
                mean_a2 += std::conj(state.vec(n)) *
                           std::sqrt((n + 1.0) * (n + 2.0)) * state.vec(n + 2);
        }
    } else {
        for (int n = 0; n < dim; ++n) {
            mean_n += n * state.rho(n, n).real();
            if (n + 1 < dim) mean_a += std::sqrt(n + 1.0) * state.rho(n + 1, n);
            if (n + 2 < dim)
                mean_a2 += std::sqrt((n + 1.0) * (n + 2.0)) * state.rho(n + 2, n);
        }
    }

    /* Half convention first:  x = (a+a†)/√2,  p = i(a†−a)/√2 */
    QuadratureStats s;
    s.mean_n = mean_n;
    s.mean_x = kSqrt2 * mean_a.real();
    s.mean_p = kSqrt2 * mean_a.imag();
    s.var_x = mean_a2.real() + mean_n + 0.5 - s.mean_x * s.mean_x;
    s.var_p = -mean_a2.real() + mean_n + 0.5 - s.mean_p * s.mean_p;
    /* ⟨(xp+px)/2⟩ = Im⟨a²⟩ */
    s.cov_xp = mean_a2.imag() - s.mean_x * s.mean_p;
    if (conv == QuadratureConvention::Paper) {
        /* X = a+a†, P = i(a†−a): exactly √2 the means, twice the variances */
        s.mean_x *= kSqrt2;
        s.mean_p *= kSqrt2;
        s.var_x *= 2.0;
        s.var_p *= 2.0;
        s.cov_xp *= 2.0;
    }
    return s;
}

std::pair<double, double> QuadratureStats::principal_variances() const {
    const double mid = 0.5 * (var_x + var_p);
    const double rad =
        std::sqrt(0.25 * (var_x - var_p) * (var_x - var_p) + cov_xp * cov_xp);
    return {mid - rad, mid + rad};
}

}  // namespace omcav
