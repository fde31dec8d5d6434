#include "omcavity/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "omcavity/analysis.hpp"
#include "omcavity/magnus.hpp"

namespace omcav {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---- preset tables ---------------------------------------------------------

struct PresetInfo {
    Preset preset;
    const char* name;
    const char* description;
};

const PresetInfo kPresetTable[] = {
    {Preset::Fig1Squeeze, "fig1_squeeze",
     "quadratic protocol k=1/400, eta=10: quadrature variances for N=3..11"},
    {Preset::Fig2Wigner, "fig2_wigner",
     "cubic protocol k=1/60, eta=20, N=20: Wigner grid and p=0 cut"},
    {Preset::Fig3Nonclassicality, "fig3_nonclassicality",
     "cubic protocol k=1/60, eta=20: non-classicality I and <n> for N=1..20"},
    {Preset::FigS1Order4, "figS1_order4",
     "order-3 vs order-4 propagator fidelity at k=1/90, eta=20 for N=1..20"},
    {Preset::FigS2PhotonLoss, "figS2_photon_loss",
     "first-order photon-loss correction on the quadratic protocol, kappa sweep"},
    {Preset::FigS3Thermal, "figS3_thermal",
     "cubic protocol from thermal states nbar in {0,1,10}: p=0 Wigner cuts"},
    {Preset::FigS4MechDamping, "figS4_mech_damping",
     "first-order mechanical-damping correction, gamma sweep at nbar in {0,1}"},
    {Preset::FigS5ContinuousPhase, "figS5_continuous_phase",
     "continuous-phase drive: cavity residual vs smoothing order d=0..3"},
    {Preset::Custom, "custom",
     "user-defined parameters: per-period observable curves"},
};

const PresetInfo& preset_info(Preset p) {
    for (const auto& info : kPresetTable)
        if (info.preset == p) return info;
    throw ConfigError("unknown preset enum value");
}

// ---- formatting / CSV ------------------------------------------------------

std::string fmt_sci(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17e", v);
    return buf;
}

std::string fmt_int(int v) { return std::to_string(v); }

void write_csv(const fs::path& dir, const std::string& name,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows,
               RunManifest& man) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + (dir / name).string() + " for writing");
    for (size_t i = 0; i < header.size(); ++i)
        os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << row[i];
        os << '\n';
    }
    man.outputs.push_back(name);
}

// ---- closed-form state helpers ---------------------------------------------

VectorXcd sparse_col0(const SpMat& m) {
    VectorXcd v = VectorXcd::Zero(m.rows());
    for (SpMat::InnerIterator it(m, 0); it; ++it) v(it.row()) = it.value();
    return v;
}

QuantumState mirror_ket_state(VectorXcd v) {
    QuantumState s;
    s.kind = StateKind::Ket;
    s.mode = Mode::Mirror;
    s.dim_mirror = static_cast<int>(v.size());
    s.vec = std::move(v);
    return s;
}

QuantumState mirror_density_state(MatrixXcd rho) {
    QuantumState s;
    s.kind = StateKind::Density;
    s.mode = Mode::Mirror;
    s.dim_mirror = static_cast<int>(rho.rows());
    s.rho = std::move(rho);
    return s;
}

VectorXcd cubic_ket(const ProtocolParams& p, int dim) {
    if (dim <= 2300) return sparse_col0(propagator_cubic(p, dim).first.mat);
    VectorXcd e0 = VectorXcd::Zero(dim);
    e0(0) = 1.0;
    return apply_propagator_cubic(p, dim, e0);
}

/* For a pure state the implemented non-classicality measure collapses to the
 * exact operator identity I = <n> - |<a>|^2; no grid is needed. */
double pure_nonclassicality(const QuantumState& ket) {
    QuadratureStats st = quadrature_stats(ket, QuadratureConvention::Half);
    return st.mean_n - 0.5 * (st.mean_x * st.mean_x + st.mean_p * st.mean_p);
}

/* p = 0 cut of a Wigner grid (axes are symmetric, odd-sized). */
std::vector<std::vector<std::string>> p0_cut_rows(const WignerGrid& grid) {
    const int np = static_cast<int>(grid.p_axis.size());
    const int j0 = (np - 1) / 2;
    if (std::abs(grid.p_axis(j0)) > 1e-12)
        throw NumericalError("Wigner grid has no p = 0 column");
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < grid.q_axis.size(); ++i)
        rows.push_back({fmt_sci(grid.q_axis(i)), fmt_sci(grid.values(i, j0))});
    return rows;
}

double p0_cut_min(const WignerGrid& grid) {
    const int j0 = (static_cast<int>(grid.p_axis.size()) - 1) / 2;
    return grid.values.col(j0).minCoeff();
}

// ---- continuous-phase residual cancellation --------------------------------

cd drive_residual(const ProtocolParams& params, const PhaseSchedule& sched) {
    return envelope_f(params.N * kPeriod, params, sched);
}

/* Zero the end-of-protocol drive displacement f(NT) by adjusting the
 * trailing sine amplitudes of a continuous schedule.  Two amplitudes give
 * two real knobs, enough to kill the complex residual (Newton with a
 * finite-difference Jacobian); with a single amplitude |f| is minimised
 * instead; with none the schedule is returned unchanged. */
PhaseSchedule cancel_drive_residual(PhaseSchedule sched,
                                    const ProtocolParams& params) {
    const int d = sched.smoothing_order();
    if (d == 0) return sched;

    const double f_scale = 2.0 * params.eta;  // |u| scale of the drive
    auto resid = [&](const PhaseSchedule& s) { return drive_residual(params, s); };

    if (d == 1) {
        /* one knob: Newton on d|f|^2/dA = 0 */
        double A = sched.amplitudes[0];
        const double h = 1e-5 * std::max(1.0, std::abs(A));
        for (int it = 0; it < 40; ++it) {
            auto val = [&](double a) {
                PhaseSchedule s = sched;
                s.amplitudes[0] = a;
                return std::norm(resid(s));
            };
            const double g = (val(A + h) - val(A - h)) / (2.0 * h);
            const double gg = (val(A + h) - 2.0 * val(A) + val(A - h)) / (h * h);
            if (std::abs(gg) < 1e-30) break;
            const double step = g / gg;
            A -= step;
            if (std::abs(step) < 1e-12 * std::max(1.0, std::abs(A))) break;
        }
        sched.amplitudes[0] = A;
        return sched;
    }

    /* two knobs: Newton on (Re f, Im f) over (A_{d-1}, A_d) */
    double a0 = sched.amplitudes[d - 2];
    double a1 = sched.amplitudes[d - 1];
    auto f_at = [&](double x0, double x1) {
        PhaseSchedule s = sched;
        s.amplitudes[d - 2] = x0;
        s.amplitudes[d - 1] = x1;
        return resid(s);
    };
    cd f = f_at(a0, a1);
    for (int it = 0; it < 40 && std::abs(f) > 1e-11 * f_scale; ++it) {
        const double h0 = 1e-6 * std::max(1.0, std::abs(a0));
        const double h1 = 1e-6 * std::max(1.0, std::abs(a1));
        const cd d0 = (f_at(a0 + h0, a1) - f_at(a0 - h0, a1)) / (2.0 * h0);
        const cd d1 = (f_at(a0, a1 + h1) - f_at(a0, a1 - h1)) / (2.0 * h1);
        const double det = d0.real() * d1.imag() - d0.imag() * d1.real();
        if (std::abs(det) < 1e-30)
            throw NumericalError("cancel_drive_residual: singular Jacobian");
        double s0 = (f.real() * d1.imag() - f.imag() * d1.real()) / det;
        double s1 = (f.imag() * d0.real() - f.real() * d0.imag()) / det;
        /* damped step: halve until the residual shrinks */
        double lam = 1.0;
        for (int half = 0; half < 12; ++half) {
            const cd f_try = f_at(a0 - lam * s0, a1 - lam * s1);
            if (std::abs(f_try) < std::abs(f)) {
                a0 -= lam * s0;
                a1 -= lam * s1;
                f = f_try;
                break;
            }
            lam *= 0.5;
            if (half == 11)
                throw NumericalError("cancel_drive_residual: line search failed");
        }
    }
    if (std::abs(f) > 1e-8 * f_scale)
        throw NumericalError("cancel_drive_residual: Newton did not converge");
    sched.amplitudes[d - 2] = a0;
    sched.amplitudes[d - 1] = a1;
    return sched;
}

// ---- pipelines -------------------------------------------------------------

int closed_form_dim(const ExperimentConfig& cfg) { return cfg.truncation; }

void pipeline_fig1(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    if (cfg.params.N < 3)
        throw ConfigError("fig1_squeeze needs N >= 3 (both phase sums must cancel)");
    const int dim = closed_form_dim(cfg);
    /* the protocol squeezes along a rotated axis, so the figure quantities
     * are the principal variances of the covariance ellipse */
    auto principal_at = [&](int n, int d) {
        ProtocolParams p = cfg.params;
        p.N = n;
        QuantumState ket = mirror_ket_state(sparse_col0(propagator_squeeze(p, d).mat));
        return quadrature_stats(ket, QuadratureConvention::Half).principal_variances();
    };
    std::vector<std::vector<std::string>> rows;
    for (int n = 3; n <= cfg.params.N; ++n) {
        const auto [vmin, vmax] = principal_at(n, dim);
        rows.push_back({fmt_int(n), fmt_sci(vmin), fmt_sci(vmax)});
        if (n == cfg.params.N) {
            man.summary["delta_x2_final"] = vmin;
            man.summary["delta_p2_final"] = vmax;
            man.summary["uncertainty_product"] = vmin * vmax;
        }
    }
    write_csv(dir, "squeeze_variances.csv", {"N", "delta_x2", "delta_p2"}, rows, man);
    man.summary["squeeze_r_exact"] = squeeze_parameters(cfg.params).squeeze_r_exact;

    man.truncation = truncation_scan(
        [&](int d) {
            const auto [vmin, vmax] = principal_at(cfg.params.N, d);
            return std::vector<double>{vmin, vmax};
        },
        {"delta_x2", "delta_p2"}, {dim / 2, 3 * dim / 4, dim});
}

void pipeline_fig2(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dim = closed_form_dim(cfg);
    QuantumState ket = mirror_ket_state(cubic_ket(cfg.params, dim));
    QuadratureStats st = quadrature_stats(ket, QuadratureConvention::Half);

    WignerSpec spec;
    spec.nq = spec.np = 301;
    WignerGrid grid = wigner(ket, spec);
    wigner_write(grid, (dir / "wigner_grid").string());
    man.outputs.push_back("wigner_grid.csv");
    man.outputs.push_back("wigner_grid.json");
    write_csv(dir, "wigner_cut_p0.csv", {"q", "w"}, p0_cut_rows(grid), man);

    man.summary["mean_n"] = st.mean_n;
    man.summary["nonclassicality"] = pure_nonclassicality(ket);
    man.summary["w_min"] = grid.values.minCoeff();
    man.summary["w_min_cut"] = p0_cut_min(grid);
    man.summary["grid_normalization"] = grid.normalization();

    man.truncation = truncation_scan(
        [&](int d) {
            QuantumState k2 = mirror_ket_state(cubic_ket(cfg.params, d));
            QuadratureStats s2 = quadrature_stats(k2, QuadratureConvention::Half);
            WignerGrid g2 = wigner(k2, spec);
            return std::vector<double>{s2.mean_n, p0_cut_min(g2)};
        },
        {"mean_n", "w_min_cut"}, {dim / 2, 3 * dim / 4, dim});
}

void pipeline_fig3(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dim = closed_form_dim(cfg);

    /* the cubic propagator is a one-parameter group in N: V(N theta_1) =
     * V(theta_1)^N, so the whole N-sweep is one dense exponential plus
     * matrix-vector products */
    auto orbit = [&](int d) {
        ProtocolParams p1 = cfg.params;
        p1.N = 1;
        SpMat step = propagator_cubic(p1, d).first.mat;
        VectorXcd psi = VectorXcd::Zero(d);
        psi(0) = 1.0;
        std::vector<std::pair<double, double>> curve;  // (I, mean_n) per N
        for (int n = 1; n <= cfg.params.N; ++n) {
            psi = step * psi;
            QuantumState ket = mirror_ket_state(psi);
            QuadratureStats st = quadrature_stats(ket, QuadratureConvention::Half);
            curve.emplace_back(pure_nonclassicality(ket), st.mean_n);
        }
        return curve;
    };

    auto curve = orbit(dim);
    std::vector<std::vector<std::string>> rows;
    for (int n = 1; n <= cfg.params.N; ++n)
        rows.push_back({fmt_int(n), fmt_sci(curve[n - 1].first),
                        fmt_sci(curve[n - 1].second)});
    write_csv(dir, "nonclassicality.csv", {"N", "I", "mean_n"}, rows, man);

    const auto [i_final, n_final] = curve.back();
    man.summary["I_final"] = i_final;
    man.summary["mean_n_final"] = n_final;
    man.summary["ratio_final"] = n_final > 0.0 ? i_final / n_final : 0.0;

    man.truncation = truncation_scan(
        [&](int d) {
            auto c = orbit(d);
            return std::vector<double>{c.back().first, c.back().second};
        },
        {"I_final", "mean_n_final"}, {dim / 2, 3 * dim / 4, dim});
}

void pipeline_figs1(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dim = closed_form_dim(cfg);
    auto f34_at = [&](int n, int d) {
        ProtocolParams p = cfg.params;
        p.N = n;
        VectorXcd psi3 = cubic_ket(p, d);
        VectorXcd psi4 = sparse_col0(propagator_fourth(p, d).mat);
        return std::norm(psi3.dot(psi4));
    };
    std::vector<std::vector<std::string>> rows;
    double f_final = 0.0, f_min_low = 1.0;
    for (int n = 1; n <= cfg.params.N; ++n) {
        const double f = f34_at(n, dim);
        rows.push_back({fmt_int(n), fmt_sci(f)});
        if (n == cfg.params.N) f_final = f;
        if (n <= 10) f_min_low = std::min(f_min_low, f);
    }
    write_csv(dir, "order_comparison.csv", {"N", "fidelity_34"}, rows, man);
    man.summary["f34_final"] = f_final;
    man.summary["f34_min_N_le_10"] = f_min_low;

    man.truncation = truncation_scan(
        [&](int d) { return std::vector<double>{f34_at(cfg.params.N, d)}; },
        {"f34_final"}, {dim / 2, 3 * dim / 4, dim});
}

void pipeline_figs2(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dc = cfg.params.dim_cavity, dm = cfg.params.dim_mirror;
    if (dc < 2 || dm < 2)
        throw ConfigError("figS2_photon_loss needs dim_cavity and dim_mirror");
    PhaseSchedule sched = schedule_squeeze(cfg.params.N);
    auto ideal_at = [&](int mirror_dim) {
        QuantumState psi0 = tensor_ket(vacuum_ket(dc, Mode::Cavity),
                                       vacuum_ket(mirror_dim, Mode::Mirror));
        return schrodinger_propagate(psi0, cfg.params, sched, dc, mirror_dim,
                                     cfg.integrator);
    };
    QuantumState ideal = ideal_at(dm);

    const double kappa_max = cfg.noise.kappa;
    double max_clipped = 0.0;
    auto loss_at = [&](const QuantumState& ref, double kappa) {
        QuantumState corrected = photon_loss_correction(ref, cfg.params, kappa);
        auto it = corrected.metadata.find("clipped_negative_mass");
        if (it != corrected.metadata.end())
            max_clipped = std::max(max_clipped, std::stod(it->second));
        return 1.0 - fidelity(ref, corrected);
    };
    std::vector<std::vector<std::string>> rows;
    std::vector<double> losses;
    const int npts = 10;
    for (int j = 0; j < npts; ++j) {
        const double kappa =
            std::pow(10.0, -4.0 + (std::log10(kappa_max) + 4.0) * j / (npts - 1.0));
        const double loss = loss_at(ideal, kappa);
        losses.push_back(loss);
        rows.push_back({fmt_sci(kappa), fmt_sci(1.0 - loss), fmt_sci(loss)});
    }
    write_csv(dir, "photon_loss.csv", {"kappa", "fidelity", "loss"}, rows, man);

    bool monotone = true;
    for (size_t j = 1; j < losses.size(); ++j)
        if (losses[j] < losses[j - 1] - 1e-15) monotone = false;
    man.summary["loss_kappa_max"] = losses.back();
    man.summary["fidelity_monotone_nonincreasing"] = monotone ? 1.0 : 0.0;
    man.summary["max_clipped_negative_mass"] = max_clipped;

    man.truncation = truncation_scan(
        [&](int d) { return std::vector<double>{loss_at(ideal_at(d), kappa_max)}; },
        {"loss_kappa_max"}, {dm / 2, 2 * dm / 3, dm});
}

void pipeline_figs3(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dim = closed_form_dim(cfg);
    const double nbars[] = {0.0, 1.0, 10.0};

    std::map<int, MatrixXcd> vm_cache;
    auto cut_min_at = [&](double nbar, int d, bool emit) {
        auto it = vm_cache.find(d);
        if (it == vm_cache.end())
            it = vm_cache
                     .emplace(d, MatrixXcd(propagator_cubic(cfg.params, d).first.mat))
                     .first;
        const MatrixXcd& vm = it->second;
        QuantumState rho0 = thermal_state(nbar, d, Mode::Mirror);
        MatrixXcd evolved = vm * rho0.rho * vm.adjoint();
        QuantumState st = mirror_density_state(std::move(evolved));
        WignerSpec spec;
        spec.nq = spec.np = 301;
        WignerGrid grid = wigner(st, spec);
        if (emit) {
            const std::string name =
                "wigner_cut_nbar" + std::to_string(static_cast<int>(nbar)) + ".csv";
            write_csv(dir, name, {"q", "w"}, p0_cut_rows(grid), man);
            double mean_n = 0.0;
            for (int m = 0; m < st.rho.rows(); ++m) mean_n += m * st.rho(m, m).real();
            const std::string tag = std::to_string(static_cast<int>(nbar));
            man.summary["mean_n_nbar" + tag] = mean_n;
            man.summary["w_min_cut_nbar" + tag] = p0_cut_min(grid);
            man.summary["w_min_grid_nbar" + tag] = grid.values.minCoeff();
            man.summary["neg_volume_nbar" + tag] =
                grid.values.cwiseMin(0.0).sum() * -grid.dq() * grid.dp();
        }
        return p0_cut_min(grid);
    };

    for (double nbar : nbars) cut_min_at(nbar, dim, true);

    man.truncation = truncation_scan(
        [&](int d) { return std::vector<double>{cut_min_at(10.0, d, false)}; },
        {"w_min_cut_nbar10"}, {dim / 2, 3 * dim / 4, dim});
}

void pipeline_figs4(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dim = closed_form_dim(cfg);
    auto loss_at = [&](int d, double gamma, double nbar) {
        QuantumState ket =
            mirror_ket_state(sparse_col0(propagator_squeeze(cfg.params, d).mat));
        NoiseParams noise;
        noise.gamma_m = gamma;
        noise.nbar_bath = nbar;
        QuantumState corrected = mech_damping_correction(ket, cfg.params, noise);
        return 1.0 - fidelity(ket, corrected);
    };
    std::vector<std::vector<std::string>> rows;
    const int npts = 10;
    const double g_lo = 1e-7, g_hi = 1e-4;
    double loss0_q5 = 0.0, loss1_q5 = 0.0;
    for (int j = 0; j < npts; ++j) {
        const double gamma =
            std::pow(10.0, std::log10(g_lo) +
                               (std::log10(g_hi) - std::log10(g_lo)) * j / (npts - 1.0));
        const double l0 = loss_at(dim, gamma, 0.0);
        const double l1 = loss_at(dim, gamma, 1.0);
        rows.push_back({fmt_sci(gamma), fmt_sci(l0), fmt_sci(l1)});
        if (std::abs(gamma - 1e-5) < 1e-12) {
            loss0_q5 = l0;
            loss1_q5 = l1;
        }
    }
    write_csv(dir, "mech_damping.csv", {"gamma", "loss_nbar0", "loss_nbar1"}, rows, man);
    man.summary["loss_gamma1e-5_nbar0"] = loss0_q5;
    man.summary["loss_gamma1e-5_nbar1"] = loss1_q5;

    man.truncation = truncation_scan(
        [&](int d) { return std::vector<double>{loss_at(d, 1e-5, 1.0)}; },
        {"loss_gamma1e-5_nbar1"}, {dim / 2, 3 * dim / 4, dim});
}

void pipeline_figs5(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dim = closed_form_dim(cfg);
    const ProtocolParams& p = cfg.params;

    auto mean_n_at = [&](int d) {
        QuantumState ket = mirror_ket_state(cubic_ket(p, d));
        return quadrature_stats(ket, QuadratureConvention::Half).mean_n;
    };
    const double mean_nm = mean_n_at(dim);

    std::vector<std::vector<std::string>> rows;
    double ratio_d0 = 0.0, ratio_d3 = 0.0;
    for (int d = 0; d <= 3; ++d) {
        PhaseSchedule base = with_correction(schedule_continuous(p.N, d), p.k, p.eta);
        const double rt = std::norm(drive_residual(p, base)) / mean_nm;
        PhaseSchedule cancelled = cancel_drive_residual(base, p);
        const double rc = std::norm(drive_residual(p, cancelled)) / mean_nm;
        rows.push_back({fmt_int(d), fmt_sci(rt), fmt_sci(rc)});
        if (d == 0) ratio_d0 = rt;
        if (d == 3) ratio_d3 = rc;
    }
    write_csv(dir, "continuous_phase.csv", {"d", "ratio_tangent", "ratio_cancelled"},
              rows, man);
    man.summary["mean_n_m"] = mean_nm;
    man.summary["ratio_d0"] = ratio_d0;
    man.summary["ratio_d3_cancelled"] = ratio_d3;
    man.summary["suppression_orders"] =
        std::log10(ratio_d0 / std::max(ratio_d3, 1e-300));

    /* quantum-level check at reduced N: evolve the true dynamics under the
     * step schedule and under the cancelled continuous schedule, compare */
    const int dc = p.dim_cavity, dm = p.dim_mirror;
    if (dc >= 2 && dm >= 2) {
        ProtocolParams p5 = p;
        p5.N = 5;
        PhaseSchedule step5 = schedule_cubic(p5.N, p5.k, p5.eta);
        PhaseSchedule cont5 = cancel_drive_residual(
            with_correction(schedule_continuous(p5.N, 3), p5.k, p5.eta), p5);
        QuantumState psi0 =
            tensor_ket(vacuum_ket(dc, Mode::Cavity), vacuum_ket(dm, Mode::Mirror));
        QuantumState a =
            schrodinger_propagate(psi0, p5, step5, dc, dm, cfg.integrator);
        QuantumState b =
            schrodinger_propagate(psi0, p5, cont5, dc, dm, cfg.integrator);
        man.summary["fidelity_step_vs_continuous_N5"] = fidelity(a, b);
        ModeOperator nc = lift(number_op(dc, Mode::Cavity), dc, dm);
        ModeOperator nm = lift(number_op(dm, Mode::Mirror), dc, dm);
        const double ncb = expectation(b, nc).real();
        const double nmb = expectation(b, nm).real();
        man.summary["mean_nc_continuous_N5"] = ncb;
        man.summary["mean_nm_continuous_N5"] = nmb;
        man.summary["quantum_ratio_continuous_N5"] = nmb > 0.0 ? ncb / nmb : 0.0;
    }

    man.truncation = truncation_scan(
        [&](int d) { return std::vector<double>{mean_n_at(d)}; }, {"mean_n_m"},
        {dim / 2, 3 * dim / 4, dim});
}

void pipeline_custom(const ExperimentConfig& cfg, RunManifest& man, const fs::path& dir) {
    const int dc = cfg.params.dim_cavity, dm = cfg.params.dim_mirror;
    if (dc < 2 || dm < 2)
        throw ConfigError("custom runs need dim_cavity >= 2 and dim_mirror >= 2");

    PhaseSchedule sched;
    if (cfg.schedule == ScheduleKind::Step) {
        sched = cfg.params.detuning == Detuning::One
                    ? schedule_squeeze(cfg.params.N)
                    : schedule_cubic(cfg.params.N, cfg.params.k, cfg.params.eta);
    } else {
        sched = schedule_continuous(cfg.params.N, cfg.smoothing_order);
        if (cfg.params.detuning == Detuning::Two)
            sched = with_correction(sched, cfg.params.k, cfg.params.eta);
    }

    const bool open_system =
        cfg.noise.kappa > 0.0 || cfg.noise.gamma_m > 0.0;
    QuantumState state =
        tensor_ket(vacuum_ket(dc, Mode::Cavity), vacuum_ket(dm, Mode::Mirror));
    if (open_system) {
        state.kind = StateKind::Density;
        state.rho = state.density();
        state.vec.resize(0);
    }

    ModeOperator num_c = lift(number_op(dc, Mode::Cavity), dc, dm);
    ModeOperator num_m = lift(number_op(dm, Mode::Mirror), dc, dm);
    std::vector<std::vector<std::string>> rows;
    auto emit = [&](int period) {
        QuantumState mirror = partial_trace(state, Mode::Mirror);
        QuadratureStats st = quadrature_stats(mirror, QuadratureConvention::Half);
        rows.push_back({fmt_int(period), fmt_sci(expectation(state, num_c).real()),
                        fmt_sci(expectation(state, num_m).real()),
                        fmt_sci(st.var_x), fmt_sci(st.var_p)});
    };
    emit(0);

    auto one_period = [&](int s) {
        ProtocolParams p1 = cfg.params;
        p1.N = 1;
        PhaseSchedule slice;
        slice.kind = ScheduleKind::Step;
        slice.N = 1;
        slice.phases = {sched.phases[s]};
        return open_system
                   ? lindblad_propagate(state, p1, slice, dc, dm, cfg.noise,
                                        cfg.integrator)
                   : schrodinger_propagate(state, p1, slice, dc, dm, cfg.integrator);
    };

    if (cfg.schedule == ScheduleKind::Step) {
        for (int s = 0; s < cfg.params.N; ++s) {
            state = one_period(s);
            emit(s + 1);
        }
    } else {
        /* the smooth phase spans the whole protocol; propagate in one piece */
        state = open_system
                    ? lindblad_propagate(state, cfg.params, sched, dc, dm, cfg.noise,
                                         cfg.integrator)
                    : schrodinger_propagate(state, cfg.params, sched, dc, dm,
                                            cfg.integrator);
        emit(cfg.params.N);
    }

    write_csv(dir, "observables.csv", {"period", "n_c", "n_m", "var_x_m", "var_p_m"},
              rows, man);
    const auto& last = rows.back();
    man.summary["n_c_final"] = std::strtod(last[1].c_str(), nullptr);
    man.summary["n_m_final"] = std::strtod(last[2].c_str(), nullptr);
    man.summary["var_x_m_final"] = std::strtod(last[3].c_str(), nullptr);
    man.summary["var_p_m_final"] = std::strtod(last[4].c_str(), nullptr);
    man.summary["tail_population"] = tail_population(state);
}

// ---- json helpers ----------------------------------------------------------

json truncation_to_json(const TruncationScanResult& t) {
    json out;
    out["names"] = t.names;
    out["dims"] = t.dims;
    out["values"] = t.values;
    out["last_rel_change"] = t.last_rel_change;
    out["converged"] = t.converged;
    out["all_converged"] = t.all_converged;
    return out;
}

template <typename T>
T get_field(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> known,
                         const std::string& where) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : known)
            if (item.key() == k) ok = true;
        if (!ok)
            throw ConfigError("unknown config key '" + item.key() + "' in " + where);
    }
}

}  // namespace

// ---- preset API ------------------------------------------------------------

std::string preset_name(Preset p) { return preset_info(p).name; }

std::string preset_description(Preset p) { return preset_info(p).description; }

Preset preset_from_name(const std::string& name) {
    for (const auto& info : kPresetTable)
        if (name == info.name) return info.preset;
    std::string known;
    for (const auto& info : kPresetTable)
        known += std::string(known.empty() ? "" : ", ") + info.name;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

const std::vector<Preset>& all_presets() {
    static const std::vector<Preset> list = [] {
        std::vector<Preset> v;
        for (const auto& info : kPresetTable) v.push_back(info.preset);
        return v;
    }();
    return list;
}

ExperimentConfig preset_config(Preset p) {
    ExperimentConfig c;
    c.preset = p;
    switch (p) {
        case Preset::Fig1Squeeze:
            c.params = {1.0 / 400.0, 10.0, 11, Detuning::One};
            c.truncation = 64;
            break;
        case Preset::Fig2Wigner:
            c.params = {1.0 / 60.0, 20.0, 20, Detuning::Two};
            c.truncation = 768;
            break;
        case Preset::Fig3Nonclassicality:
            c.params = {1.0 / 60.0, 20.0, 20, Detuning::Two};
            c.truncation = 768;
            break;
        case Preset::FigS1Order4:
            c.params = {1.0 / 90.0, 20.0, 20, Detuning::Two};
            c.truncation = 192;
            break;
        case Preset::FigS2PhotonLoss:
            c.params = {1.0 / 400.0, 10.0, 11, Detuning::One, 8, 64};
            c.noise.kappa = 1e-2;
            c.truncation = 64;
            break;
        case Preset::FigS3Thermal:
            c.params = {1.0 / 60.0, 20.0, 20, Detuning::Two};
            c.truncation = 768;
            break;
        case Preset::FigS4MechDamping:
            c.params = {1.0 / 400.0, 10.0, 11, Detuning::One};
            c.noise.gamma_m = 1e-5;
            c.noise.nbar_bath = 1.0;
            c.truncation = 64;
            break;
        case Preset::FigS5ContinuousPhase:
            c.params = {1.0 / 60.0, 20.0, 20, Detuning::Two, 24, 192};
            c.schedule = ScheduleKind::Continuous;
            c.smoothing_order = 3;
            c.truncation = 768;
            break;
        case Preset::Custom:
            c.params = {0.01, 1.0, 3, Detuning::One, 4, 16};
            c.truncation = 64;
            break;
    }
    return c;
}

// ---- config (de)serialization ----------------------------------------------

std::string config_to_json(const ExperimentConfig& c) {
    json out;
    out["schema_version"] = c.schema_version;
    out["preset"] = preset_name(c.preset);
    out["params"] = {{"k", c.params.k},
                     {"eta", c.params.eta},
                     {"N", c.params.N},
                     {"detuning", c.params.detuning == Detuning::One ? 1 : 2},
                     {"dim_cavity", c.params.dim_cavity},
                     {"dim_mirror", c.params.dim_mirror}};
    out["noise"] = {{"kappa", c.noise.kappa},
                    {"gamma_m", c.noise.gamma_m},
                    {"nbar_bath", c.noise.nbar_bath}};
    out["schedule"] = c.schedule == ScheduleKind::Step ? "step" : "continuous";
    out["smoothing_order"] = c.smoothing_order;
    out["integrator"] = {
        {"method",
         c.integrator.method == IntegratorMethod::AdaptiveRK ? "adaptive" : "fixed"},
        {"rel_tol", c.integrator.rel_tol},
        {"abs_tol", c.integrator.abs_tol},
        {"max_step", c.integrator.max_step}};
    out["truncation"] = c.truncation;
    out["output_dir"] = c.output_dir;
    out["seed"] = c.seed;
    return out.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ConfigError("config root must be a JSON object");

    reject_unknown_keys(obj,
                        {"schema_version", "preset", "params", "noise", "schedule",
                         "smoothing_order", "integrator", "truncation", "output_dir",
                         "seed"},
                        "config root");

    ExperimentConfig c = preset_config(
        obj.contains("preset")
            ? preset_from_name(get_field<std::string>(obj, "preset", "custom"))
            : Preset::Custom);

    c.schema_version = get_field<int>(obj, "schema_version", c.schema_version);
    if (c.schema_version != kConfigSchemaVersion)
        throw ConfigError("unsupported config schema_version " +
                          std::to_string(c.schema_version));

    if (obj.contains("params")) {
        const json& p = obj.at("params");
        if (!p.is_object()) throw ConfigError("'params' must be an object");
        reject_unknown_keys(p, {"k", "eta", "N", "detuning", "dim_cavity", "dim_mirror"},
                            "params");
        c.params.k = get_field<double>(p, "k", c.params.k);
        c.params.eta = get_field<double>(p, "eta", c.params.eta);
        c.params.N = get_field<int>(p, "N", c.params.N);
        if (p.contains("detuning")) {
            const int d = get_field<int>(p, "detuning", 1);
            if (d != 1 && d != 2) throw ConfigError("detuning must be 1 or 2");
            c.params.detuning = d == 1 ? Detuning::One : Detuning::Two;
        }
        c.params.dim_cavity = get_field<int>(p, "dim_cavity", c.params.dim_cavity);
        c.params.dim_mirror = get_field<int>(p, "dim_mirror", c.params.dim_mirror);
    }
    if (obj.contains("noise")) {
        const json& n = obj.at("noise");
        if (!n.is_object()) throw ConfigError("'noise' must be an object");
        reject_unknown_keys(n, {"kappa", "gamma_m", "nbar_bath"}, "noise");
        c.noise.kappa = get_field<double>(n, "kappa", c.noise.kappa);
        c.noise.gamma_m = get_field<double>(n, "gamma_m", c.noise.gamma_m);
        c.noise.nbar_bath = get_field<double>(n, "nbar_bath", c.noise.nbar_bath);
    }
    if (obj.contains("schedule")) {
        const std::string s = get_field<std::string>(obj, "schedule", "step");
        if (s == "step")
            c.schedule = ScheduleKind::Step;
        else if (s == "continuous")
            c.schedule = ScheduleKind::Continuous;
        else
            throw ConfigError("schedule must be 'step' or 'continuous'");
    }
    c.smoothing_order = get_field<int>(obj, "smoothing_order", c.smoothing_order);
    if (obj.contains("integrator")) {
        const json& i = obj.at("integrator");
        if (!i.is_object()) throw ConfigError("'integrator' must be an object");
        reject_unknown_keys(i, {"method", "rel_tol", "abs_tol", "max_step"},
                            "integrator");
        if (i.contains("method")) {
            const std::string m = get_field<std::string>(i, "method", "adaptive");
            if (m == "adaptive")
                c.integrator.method = IntegratorMethod::AdaptiveRK;
            else if (m == "fixed")
                c.integrator.method = IntegratorMethod::FixedStep;
            else
                throw ConfigError("integrator method must be 'adaptive' or 'fixed'");
        }
        c.integrator.rel_tol = get_field<double>(i, "rel_tol", c.integrator.rel_tol);
        c.integrator.abs_tol = get_field<double>(i, "abs_tol", c.integrator.abs_tol);
        c.integrator.max_step = get_field<double>(i, "max_step", c.integrator.max_step);
    }
    c.truncation = get_field<int>(obj, "truncation", c.truncation);
    c.output_dir = get_field<std::string>(obj, "output_dir", c.output_dir);
    c.seed = get_field<unsigned>(obj, "seed", c.seed);
    return c;
}

std::vector<std::string> validate_config(const ExperimentConfig& c) {
    std::vector<std::string> warnings = validate_params(c.params);
    for (auto& w : validate_noise(c.noise)) warnings.push_back(w);
    if (c.smoothing_order < 0)
        throw ConfigError("smoothing_order must be non-negative");
    if (c.smoothing_order > 0 && c.schedule == ScheduleKind::Step)
        warnings.push_back("smoothing_order is ignored for step schedules");
    if (c.truncation < 8)
        throw ConfigError("truncation must be at least 8");
    if (c.integrator.rel_tol <= 0.0 || c.integrator.abs_tol <= 0.0 ||
        c.integrator.max_step <= 0.0)
        throw ConfigError("integrator tolerances and max_step must be positive");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    return warnings;
}

// ---- manifest --------------------------------------------------------------

std::string manifest_to_json(const RunManifest& man) {
    json out;
    out["preset"] = man.preset;
    out["code_version"] = man.code_version;
    out["wall_time_s"] = man.wall_time_s;
    out["config"] = json::parse(man.config_json);
    out["truncation_report"] = truncation_to_json(man.truncation);
    out["outputs"] = man.outputs;
    out["summary"] = man.summary;
    out["warnings"] = man.warnings;
    out["errors"] = man.errors;
    return out.dump(2);
}

// ---- run / sweep -----------------------------------------------------------

RunManifest run(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest man;
    man.preset = preset_name(cfg.preset);
    man.config_json = config_to_json(cfg);
    man.warnings = validate_config(cfg);

    fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string());

    try {
        switch (cfg.preset) {
            case Preset::Fig1Squeeze: pipeline_fig1(cfg, man, dir); break;
            case Preset::Fig2Wigner: pipeline_fig2(cfg, man, dir); break;
            case Preset::Fig3Nonclassicality: pipeline_fig3(cfg, man, dir); break;
            case Preset::FigS1Order4: pipeline_figs1(cfg, man, dir); break;
            case Preset::FigS2PhotonLoss: pipeline_figs2(cfg, man, dir); break;
            case Preset::FigS3Thermal: pipeline_figs3(cfg, man, dir); break;
            case Preset::FigS4MechDamping: pipeline_figs4(cfg, man, dir); break;
            case Preset::FigS5ContinuousPhase: pipeline_figs5(cfg, man, dir); break;
            case Preset::Custom: pipeline_custom(cfg, man, dir); break;
        }
    } catch (const ConfigError& e) {
        throw ConfigError(man.preset + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(man.preset + ": " + e.what());
    }

    man.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.outputs.push_back("manifest.json");
    std::ofstream os(dir / "manifest.json", std::ios::binary);
    if (!os) throw ConfigError("cannot write manifest.json in " + dir.string());
    os << manifest_to_json(man) << '\n';
    return man;
}

namespace {

using AxisSetter = std::function<void(ExperimentConfig&, double)>;

AxisSetter axis_setter(const std::string& axis) {
    auto as_int = [axis](double v) {
        if (v < 0.0 || std::abs(v - std::round(v)) > 1e-9)
            throw ConfigError("axis '" + axis + "' needs non-negative integer values");
        return static_cast<int>(std::llround(v));
    };
    if (axis == "k") return [](ExperimentConfig& c, double v) { c.params.k = v; };
    if (axis == "eta") return [](ExperimentConfig& c, double v) { c.params.eta = v; };
    if (axis == "N")
        return [as_int](ExperimentConfig& c, double v) { c.params.N = as_int(v); };
    if (axis == "kappa")
        return [](ExperimentConfig& c, double v) { c.noise.kappa = v; };
    if (axis == "gamma_m")
        return [](ExperimentConfig& c, double v) { c.noise.gamma_m = v; };
    if (axis == "nbar_bath")
        return [](ExperimentConfig& c, double v) { c.noise.nbar_bath = v; };
    if (axis == "smoothing_order")
        return [as_int](ExperimentConfig& c, double v) { c.smoothing_order = as_int(v); };
    if (axis == "truncation")
        return [as_int](ExperimentConfig& c, double v) { c.truncation = as_int(v); };
    if (axis == "dim_cavity")
        return [as_int](ExperimentConfig& c, double v) { c.params.dim_cavity = as_int(v); };
    if (axis == "dim_mirror")
        return [as_int](ExperimentConfig& c, double v) { c.params.dim_mirror = as_int(v); };
    throw ConfigError(
        "unknown sweep axis '" + axis +
        "' (known: k, eta, N, kappa, gamma_m, nbar_bath, smoothing_order, "
        "truncation, dim_cavity, dim_mirror)");
}

}  // namespace

RunManifest sweep(const ExperimentConfig& cfg, const std::string& axis,
                  const std::vector<double>& values, int threads) {
    const auto t0 = std::chrono::steady_clock::now();
    if (values.empty()) throw ConfigError("sweep needs at least one axis value");
    AxisSetter set = axis_setter(axis);
    validate_config(cfg);

    fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string());

    const int n = static_cast<int>(values.size());
    std::vector<std::optional<RunManifest>> results(n);
    std::vector<std::string> errors(n);

    auto run_point = [&](int i) {
        ExperimentConfig point = cfg;
        point.output_dir = (dir / ("point_" + std::to_string(i))).string();
        try {
            set(point, values[i]);
            results[i] = run(point);
        } catch (const Error& e) {
            errors[i] = "point " + std::to_string(i) + " (" + axis + " = " +
                        fmt_sci(values[i]) + "): " + e.what();
        }
    };

    const int nthreads = std::clamp(threads, 1, n);
    if (nthreads <= 1) {
        for (int i = 0; i < n; ++i) run_point(i);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&, t] {
                for (int i = t; i < n; i += nthreads) run_point(i);
            });
        for (auto& th : pool) th.join();
    }

    RunManifest man;
    man.preset = preset_name(cfg.preset);
    man.config_json = config_to_json(cfg);

    /* merged CSV: axis column plus the union of the point summaries */
    std::vector<std::string> keys;
    for (const auto& r : results)
        if (r)
            for (const auto& [k, v] : r->summary)
                if (std::find(keys.begin(), keys.end(), k) == keys.end())
                    keys.push_back(k);
    std::sort(keys.begin(), keys.end());

    std::vector<std::string> header{axis};
    header.insert(header.end(), keys.begin(), keys.end());
    std::vector<std::vector<std::string>> rows;
    int n_failed = 0;
    for (int i = 0; i < n; ++i) {
        if (!results[i]) {
            ++n_failed;
            man.errors.push_back(errors[i]);
            continue;
        }
        std::vector<std::string> row{fmt_sci(values[i])};
        for (const auto& k : keys) {
            auto it = results[i]->summary.find(k);
            row.push_back(it == results[i]->summary.end() ? "nan"
                                                          : fmt_sci(it->second));
        }
        rows.push_back(std::move(row));
        for (const auto& out : results[i]->outputs)
            man.outputs.push_back("point_" + std::to_string(i) + "/" + out);
        for (const auto& w : results[i]->warnings) man.warnings.push_back(w);
    }
    write_csv(dir, "sweep.csv", header, rows, man);
    man.summary["n_points"] = n;
    man.summary["n_failed"] = n_failed;

    man.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.outputs.push_back("manifest.json");
    std::ofstream os(dir / "manifest.json", std::ios::binary);
    if (!os) throw ConfigError("cannot write manifest.json in " + dir.string());
    os << manifest_to_json(man) << '\n';
    return man;
}

}  // namespace omcav
