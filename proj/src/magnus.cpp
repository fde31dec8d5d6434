#include "omcavity/magnus.hpp"

#include <cmath>

#include "omcavity/expm.hpp"

namespace omcav {

namespace {

constexpr int kDenseCap = 2300;

void require_dims(const ProtocolParams& p) {
    if (p.dim_cavity < 2 || p.dim_mirror < 2)
        throw ConfigError("params.dim_cavity/dim_mirror must be set (>= 2) for "
                          "composite operator construction");
}

SpMat prune(const SpMat& m, double tol = 1e-14) {
    SpMat out = m;
    out.prune([tol](int, int, const cd& v) { return std::abs(v) > tol; });
    return out;
}

ModeOperator mirror_op(int dim, SpMat mat) {
    ModeOperator op;
    op.mode = Mode::Mirror;
    op.dim_mirror = dim;
    op.mat = std::move(mat);
    return op;
}

}  // namespace

double phase_pair_sum(int N) {
    if (N < 1) throw ConfigError("phase_pair_sum: N must be >= 1");
    if (N == 1) return 0.0;
    return 0.5 * N / std::tan(kPi / N);
}

MagnusTerm magnus1_squeeze(const ProtocolParams& params) {
    if (params.detuning != Detuning::One)
        throw ConfigError("magnus1_squeeze applies to the detuning-one (squeezing) scheme");
    require_dims(params);
    auto [Xc, Pc] = quadratures(params.dim_cavity, Mode::Cavity);
    auto [Xm, Pm] = quadratures(params.dim_mirror, Mode::Mirror);
    MagnusTerm term;
    term.order = 1;
    term.label = "M1";
    term.op = tensor(Xc, Pm);
    term.op.mat = prune(SpMat(-2.0 * kPi * params.k * params.eta * term.op.mat));
    return term;
}

SqueezeResult squeeze_parameters(const ProtocolParams& params) {
    SqueezeResult r;
    r.N = params.N;
    r.k = params.k;
    r.eta = params.eta;
    double pref = std::pow(2.0 * kPi * params.k * params.eta, 2);
    double mag = pref * 2.0 * phase_pair_sum(params.N);  // = (2πkη)² N cot(π/N)
    r.delta = std::atan(mag);
    r.zeta = cd(0.0, mag) * std::exp(cd(0.0, r.delta));
    r.squeeze_r_exact = std::asinh(mag);
    r.zeta_exact = cd(0.0, r.squeeze_r_exact) * std::exp(cd(0.0, -r.delta));
    return r;
}

ModeOperator propagator_squeeze(const ProtocolParams& params, int dim) {
    if (params.detuning != Detuning::One)
        throw ConfigError("propagator_squeeze applies to the detuning-one scheme");
    if (dim < 2) throw ConfigError("propagator_squeeze: dim must be >= 2");
    if (dim > kDenseCap)
        throw ConfigError("propagator_squeeze: dim exceeds dense materialisation cap");
    /* c = 2(πkη)² N cot(π/N) = (πkη)²·4·Σ_{l<s} sin(φ_s−φ_l) */
    double c = 4.0 * std::pow(kPi * params.k * params.eta, 2) * phase_pair_sum(params.N);
    auto [Xm, Pm] = quadratures(dim, Mode::Mirror);
    MatrixXcd P2 = MatrixXcd(Pm.mat) * MatrixXcd(Pm.mat);
    return mirror_op(dim, expm_i_hermitian(P2, c).sparseView());
}

ModeOperator qm_operator(int dim) {
    if (dim < 4) throw ConfigError("qm_operator: dim must be >= 4");
    auto [X, P] = quadratures(dim, Mode::Mirror);
    cd i(0.0, 1.0);
    SpMat B = X.mat + (i / std::sqrt(3.0)) * P.mat;
    SpMat Bd = X.mat - (i / std::sqrt(3.0)) * P.mat;
    SpMat q = SpMat(B * B) * B;
    q = q + SpMat(SpMat(Bd * Bd) * Bd);
    q = q + SpMat(1.5 * X.mat);
    return mirror_op(dim, prune(q));
}

namespace {

double cubic_theta(const ProtocolParams& p) { return kPi / 3.0 * p.N * std::pow(p.k, 3) * p.eta * p.eta; }

}  // namespace

std::pair<ModeOperator, ModeOperator> propagator_cubic(const ProtocolParams& params,
                                                       int dim) {
    if (params.detuning != Detuning::Two)
        throw ConfigError("propagator_cubic applies to the detuning-two scheme");
    if (dim < 4) throw ConfigError("propagator_cubic: mirror dim must be >= 4");
    if (dim > kDenseCap)
        throw ConfigError("propagator_cubic: dim exceeds dense materialisation cap; use "
                          "apply_propagator_cubic");
    ModeOperator Vm = mirror_op(
        dim, expm_i_hermitian(MatrixXcd(qm_operator(dim).mat), -cubic_theta(params))
                 .sparseView());

    int dc = params.dim_cavity >= 2 ? params.dim_cavity : 2;
    std::vector<Triplet> trips;
    trips.reserve(static_cast<size_t>(dc));
    for (int n = 0; n < dc; ++n) {
        double phase = 2.0 * kPi * params.k * params.k * params.N *
                       (static_cast<double>(n) * n + 2.0 / 3.0 * params.eta * params.eta * n);
        trips.emplace_back(n, n, std::exp(cd(0.0, phase)));
    }
    ModeOperator Vc;
    Vc.mode = Mode::Cavity;
    Vc.dim_cavity = dc;
    Vc.mat = SpMat(dc, dc);
    Vc.mat.setFromTriplets(trips.begin(), trips.end());
    return {Vm, Vc};
}

VectorXcd apply_propagator_cubic(const ProtocolParams& params, int dim,
                                 const VectorXcd& psi, double tol) {
    if (params.detuning != Detuning::Two)
        throw ConfigError("apply_propagator_cubic applies to the detuning-two scheme");
    if (psi.size() != dim) throw ConfigError("apply_propagator_cubic: ket size != dim");
    return expm_action_i_hermitian(qm_operator(dim).mat, -cubic_theta(params), psi, tol);
}

ModeOperator propagator_fourth(const ProtocolParams& params, int dim) {
    if (params.detuning != Detuning::Two)
        throw ConfigError("propagator_fourth applies to the detuning-two scheme");
    if (dim > kDenseCap)
        throw ConfigError("propagator_fourth: dim exceeds dense materialisation cap");
    const double k = params.k, eta = params.eta;
    const double N = params.N;
    double zeta4 = std::pow(kPi * k * k * eta, 2) * 2.0 * phase_pair_sum(params.N);

    ModeOperator b = annihilation(dim, Mode::Mirror);
    ModeOperator bd = creation(dim, Mode::Mirror);
    SpMat pair = prune(SpMat(SpMat(b.mat * b.mat) + SpMat(bd.mat * bd.mat)));
    MatrixXcd pair_d = MatrixXcd(pair);

    MatrixXcd shear_gen = pair_d * pair_d;                       // (b†² + b²)²
    MatrixXcd quad_gen = (124.0 * eta - 5.0) / 20.0 * pair_d +
                         (575.0 + 634.0 * eta) / 90.0 *
                             MatrixXcd(number_op(dim, Mode::Mirror).mat);

    MatrixXcd V3 = MatrixXcd(propagator_cubic(params, dim).first.mat);
    MatrixXcd Vshear = expm_i_hermitian(shear_gen, -zeta4 / 2.0);
    MatrixXcd Vquad =
        expm_i_hermitian(quad_gen, kPi * std::pow(k, 4) * eta * eta * N);
    return mirror_op(dim, MatrixXcd(V3 * Vshear * Vquad).sparseView());
}

std::vector<MagnusTerm> magnus_terms_single_period(const ProtocolParams& params) {
    if (params.detuning != Detuning::Two)
        throw ConfigError("magnus_terms_single_period applies to the detuning-two scheme");
    require_dims(params);
    const int dc = params.dim_cavity, dm = params.dim_mirror;
    const double k = params.k, eta = params.eta;
    cd i(0.0, 1.0);

    ModeOperator a = annihilation(dc, Mode::Cavity);
    ModeOperator ad = creation(dc, Mode::Cavity);
    ModeOperator nc = number_op(dc, Mode::Cavity);
    ModeOperator idc = identity_op(dc, Mode::Cavity);
    auto [Xc, Pc] = quadratures(dc, Mode::Cavity);
    ModeOperator b = annihilation(dm, Mode::Mirror);
    ModeOperator bd = creation(dm, Mode::Mirror);
    ModeOperator idm = identity_op(dm, Mode::Mirror);
    auto [Xm, Pm] = quadratures(dm, Mode::Mirror);
    ModeOperator qm = qm_operator(dm);

    auto comp = [&](const SpMat& cav, const SpMat& mir, int order,
                    const std::string& label) {
        ModeOperator c = idc, m = idm;
        c.mat = cav;
        m.mat = mir;
        MagnusTerm t;
        t.order = order;
        t.label = label;
        t.op = tensor(c, m);
        t.op.mat = prune(t.op.mat);
        return t;
    };

    SpMat mirror_pair = prune(SpMat(SpMat(b.mat * b.mat) + SpMat(bd.mat * bd.mat)));

    /* m_2^c = −2n_c² + (1/3)η²(X_c² − 6n_c),  cavity-only */
    SpMat m2c_cav = SpMat(-2.0 * SpMat(nc.mat * nc.mat)) +
                    SpMat(eta * eta / 3.0 *
                          SpMat(SpMat(Xc.mat * Xc.mat) - SpMat(6.0 * nc.mat)));
    /* m_2^I = η P_c (b² + b†²) */
    SpMat m2I_cav = SpMat(eta * Pc.mat);

    MagnusTerm m2c = comp(prune(m2c_cav), idm.mat, 2, "m2_c");
    MagnusTerm m2I = comp(prune(m2I_cav), mirror_pair, 2, "m2_I");

    /* M₂^{(1)} = πk²(m_2^c + m_2^I − (29/60)η⁴) */
    SpMat scalar = SpMat(-29.0 / 60.0 * std::pow(eta, 4) *
                         tensor(idc, idm).mat);
    MagnusTerm M2 = comp(idc.mat, idm.mat, 2, "M2");
    M2.op.mat = prune(SpMat(kPi * k * k * (SpMat(m2c.op.mat + m2I.op.mat) + scalar)));

    /* m_3^m = η Q_m,  mirror-only */
    MagnusTerm m3m = comp(idc.mat, SpMat(eta * qm.mat), 3, "m3_m");

    /* m_3^I = [14i(a†n_c − n_c a) − ((36/5)η² + 4)P_c]·X_m
     *         + [3X_c + 6iη(a² − a†²)]·P_m − (3/4)P_c·Q_m */
    SpMat t1_cav = SpMat(14.0 * i * (SpMat(ad.mat * nc.mat) - SpMat(nc.mat * a.mat))) -
                   SpMat((36.0 / 5.0 * eta * eta + 4.0) * Pc.mat);
    SpMat t2_cav = SpMat(3.0 * Xc.mat) +
                   SpMat(6.0 * i * eta * (SpMat(a.mat * a.mat) - SpMat(ad.mat * ad.mat)));
    MagnusTerm m3I = comp(idc.mat, idm.mat, 3, "m3_I");
    {
        ModeOperator c1 = idc, c2 = idc, c3 = idc;
        c1.mat = prune(t1_cav);
        c2.mat = prune(t2_cav);
        c3.mat = prune(SpMat(-0.75 * Pc.mat));
        ModeOperator mXm = Xm, mPm = Pm, mQm = qm;
        SpMat sum = tensor(c1, mXm).mat;
        sum = sum + tensor(c2, mPm).mat;
        sum = sum + tensor(c3, mQm).mat;
        m3I.op.mat = prune(sum);
    }

    /* M₃^{(1)} = (π/3)k³η(m_3^m + m_3^I) */
    MagnusTerm M3 = comp(idc.mat, idm.mat, 3, "M3");
    M3.op.mat = prune(SpMat(kPi / 3.0 * std::pow(k, 3) * eta *
                            SpMat(m3m.op.mat + m3I.op.mat)));

    return {M2, M3, m2c, m2I, m3m, m3I};
}

CancellationReport cancellation_check(const PhaseSchedule& schedule,
                                      const std::vector<MagnusTerm>& terms) {
    if (schedule.kind != ScheduleKind::Step)
        throw ConfigError("cancellation_check requires a step schedule");
    CancellationReport report;
    report.all_passed = true;

    for (const auto& term : terms) {
        if (!term.op.is_composite())
            throw ConfigError("cancellation_check: terms must live on the composite space");
        const int dc = term.op.dim_cavity, dm = term.op.dim_mirror;
        MatrixXcd M = MatrixXcd(term.op.mat);
        MatrixXcd S = MatrixXcd::Zero(M.rows(), M.cols());

        for (int s = 0; s < schedule.N; ++s) {
            double phi = schedule.phases[static_cast<size_t>(s)] - schedule.correction * s;
            /* W = e^{−i n_c φ} ⊗ 1 is diagonal: conjugation multiplies the
             * (ic,jc) cavity block by e^{i(ic−jc)φ}. */
            for (int ic = 0; ic < dc; ++ic)
                for (int jc = 0; jc < dc; ++jc)
                    S.block(ic * dm, jc * dm, dm, dm) +=
                        std::exp(cd(0.0, (ic - jc) * phi)) * M.block(ic * dm, jc * dm, dm, dm);
        }

        /* mirror part: (Tr_c S)/dim_c */
        MatrixXcd mir = MatrixXcd::Zero(dm, dm);
        for (int ic = 0; ic < dc; ++ic) mir += S.block(ic * dm, ic * dm, dm, dm);
        mir /= static_cast<double>(dc);
        for (int ic = 0; ic < dc; ++ic) S.block(ic * dm, ic * dm, dm, dm) -= mir;

        /* cavity part: (Tr_m of remainder)/dim_m (traceless by construction) */
        MatrixXcd cav = MatrixXcd::Zero(dc, dc);
        for (int ic = 0; ic < dc; ++ic)
            for (int jc = 0; jc < dc; ++jc)
                cav(ic, jc) = S.block(ic * dm, jc * dm, dm, dm).trace() /
                              static_cast<double>(dm);
        for (int ic = 0; ic < dc; ++ic)
            for (int jc = 0; jc < dc; ++jc)
                S.block(ic * dm, jc * dm, dm, dm) -=
                    cav(ic, jc) * MatrixXcd::Identity(dm, dm);

        CancellationEntry e;
        e.label = term.label;
        e.mirror_norm = mir.cwiseAbs().maxCoeff();
        e.cavity_norm = cav.cwiseAbs().maxCoeff();
        e.cross_norm = S.cwiseAbs().maxCoeff();
        e.reference = std::max(e.mirror_norm, schedule.N * max_abs(term.op.mat));
        e.passed = e.cavity_norm < 1e-8 * e.reference && e.cross_norm < 1e-8 * e.reference;
        report.all_passed = report.all_passed && e.passed;
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace omcav
