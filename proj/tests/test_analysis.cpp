#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "omcavity/analysis.hpp"
#include "omcavity/fock.hpp"

using namespace omcav;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

namespace {

QuantumState coherent_ket(cd alpha, int dim) {
    QuantumState s;
    s.kind = StateKind::Ket;
    s.mode = Mode::Mirror;
    s.dim_mirror = dim;
    s.vec = VectorXcd::Zero(dim);
    cd amp = std::exp(-0.5 * std::norm(alpha));
    for (int n = 0; n < dim; ++n) {
        s.vec(n) = amp;
        amp *= alpha / std::sqrt(n + 1.0);
    }
    return s;
}

/* S(r)|0⟩ along the x axis: coefficients (−tanh r)^m √((2m)!)/(2^m m!√cosh r),
 * so Δx² = e^{−2r}/2 and Δp² = e^{2r}/2 in the Half convention. */
QuantumState squeezed_ket(double r, int dim) {
    QuantumState s;
    s.kind = StateKind::Ket;
    s.mode = Mode::Mirror;
    s.dim_mirror = dim;
    s.vec = VectorXcd::Zero(dim);
    const double t = std::tanh(r);
    double amp = 1.0 / std::sqrt(std::cosh(r));
    for (int m = 0; 2 * m < dim; ++m) {
        s.vec(2 * m) = amp;
        amp *= -t * std::sqrt((2.0 * m + 1.0) * (2.0 * m + 2.0)) / (2.0 * m + 2.0);
    }
    return s;
}

QuantumState random_mixed(int dim, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatrixXcd g(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) g(i, j) = cd(gauss(gen), gauss(gen));
    MatrixXcd rho = g * g.adjoint();
    rho /= rho.trace().real();

    QuantumState s;
    s.kind = StateKind::Density;
    s.mode = Mode::Mirror;
    s.dim_mirror = dim;
    s.rho = rho;
    return s;
}

QuantumState random_ket(int dim, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorXcd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = cd(gauss(gen), gauss(gen));
    v.normalize();
    QuantumState s;
    s.kind = StateKind::Ket;
    s.mode = Mode::Mirror;
    s.dim_mirror = dim;
    s.vec = v;
    return s;
}

/* Independent pure-state oracle for the curvature measure: I = ⟨n⟩ − |⟨a⟩|²,
 * straight from the Fock coefficients. */
double pure_measure_oracle(const QuantumState& ket) {
    double n = 0.0;
    cd a = 0.0;
    const int dim = static_cast<int>(ket.vec.size());
    for (int m = 0; m < dim; ++m) {
        n += m * std::norm(ket.vec(m));
        if (m + 1 < dim)
            a += std::conj(ket.vec(m)) * std::sqrt(m + 1.0) * ket.vec(m + 1);
    }
    return n - std::norm(a);
}

}  // namespace

TEST_CASE("vacuum Wigner is the normalised Gaussian") {
    QuantumState vac = vacuum_ket(8, Mode::Mirror);
    WignerGrid g = wigner(vac);

    CHECK(g.normalization() == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(g.values.minCoeff() > -1e-12);

    /* W(q,p) = (1/π) e^{−q²−p²}: check the centre and an off-centre point */
    const int iq0 = static_cast<int>(g.q_axis.size()) / 2;
    const int ip0 = static_cast<int>(g.p_axis.size()) / 2;
    CHECK(g.q_axis(iq0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g.values(iq0, ip0) == doctest::Approx(1.0 / kPi).epsilon(1e-8));
    const double q1 = g.q_axis(iq0 + 20), p1 = g.p_axis(ip0 + 10);
    CHECK(g.values(iq0 + 20, ip0 + 10) ==
          doctest::Approx(std::exp(-q1 * q1 - p1 * p1) / kPi).epsilon(1e-8));

    WignerSpec paper;
    paper.convention = QuadratureConvention::Paper;
    WignerGrid gp = wigner(vac, paper);
    CHECK(gp.normalization() == doctest::Approx(1.0).epsilon(1e-3));
    const int jq0 = static_cast<int>(gp.q_axis.size()) / 2;
    const int jp0 = static_cast<int>(gp.p_axis.size()) / 2;
    CHECK(gp.values(jq0, jp0) == doctest::Approx(1.0 / (2.0 * kPi)).epsilon(1e-8));
}

TEST_CASE("Fock one has the textbook negative dip at the origin") {
    QuantumState one = fock_ket(1, 8, Mode::Mirror);

    WignerGrid g = wigner(one);
    const int iq0 = static_cast<int>(g.q_axis.size()) / 2;
    const int ip0 = static_cast<int>(g.p_axis.size()) / 2;
    CHECK(g.values(iq0, ip0) == doctest::Approx(-1.0 / kPi).epsilon(1e-8));
    CHECK(g.normalization() == doctest::Approx(1.0).epsilon(1e-3));

    /* displaced-parity route reproduces the same dip independently */
    WignerSpec spec;
    spec.q_extent = spec.p_extent = 6.0;
    spec.nq = spec.np = 33;
    WignerGrid o = wigner_displaced_parity(one, spec);
    const int jc = spec.nq / 2;
    CHECK(o.values(jc, jc) == doctest::Approx(-1.0 / kPi).epsilon(1e-9));

    /* analytic form W = (1/π)(2r²−1)e^{−r²} at an off-axis point */
    const double q = o.q_axis(jc + 7), p = o.p_axis(jc + 4);
    const double r2 = q * q + p * p;
    CHECK(o.values(jc + 7, jc + 4) ==
          doctest::Approx((2.0 * r2 - 1.0) * std::exp(-r2) / kPi).epsilon(1e-9));
}

TEST_CASE("the two Wigner routes agree on random mixed states") {
    WignerSpec spec;
    spec.nq = spec.np = 41;
    spec.q_extent = spec.p_extent = 15.0;
    std::mt19937 dims(7);
    for (unsigned trial = 0; trial < 20; ++trial) {
        const int dim = 10 + static_cast<int>(dims() % 21);  // 10..30
        QuantumState rho = random_mixed(dim, 100 + trial);
        WignerGrid a = wigner(rho, spec);
        WignerGrid b = wigner_displaced_parity(rho, spec);
        const double diff = (a.values - b.values).cwiseAbs().maxCoeff();
        CAPTURE(trial);
        CAPTURE(dim);
        CHECK(diff < 1e-6);
    }
}

TEST_CASE("coherent states land where the quadrature means point") {
    const cd alpha(1.2, -0.7);
    QuantumState coh = coherent_ket(alpha, 32);

    QuadratureStats st = quadrature_stats(coh, QuadratureConvention::Half);
    CHECK(st.mean_x == doctest::Approx(std::sqrt(2.0) * alpha.real()).epsilon(1e-10));
    CHECK(st.mean_p == doctest::Approx(std::sqrt(2.0) * alpha.imag()).epsilon(1e-10));
    CHECK(st.var_x == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(st.var_p == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(st.mean_n == doctest::Approx(std::norm(alpha)).epsilon(1e-10));

    /* the Wigner peak must sit at (√2 Re α, √2 Im α) on both routes */
    WignerSpec spec;
    spec.nq = spec.np = 81;
    spec.q_extent = spec.p_extent = 6.0;
    WignerGrid g = wigner(coh, spec);
    WignerGrid o = wigner_displaced_parity(coh, spec);
    CHECK((g.values - o.values).cwiseAbs().maxCoeff() < 1e-6);

    int bi = 0, bj = 0;
    g.values.maxCoeff(&bi, &bj);
    CHECK(std::abs(g.q_axis(bi) - std::sqrt(2.0) * alpha.real()) < 1.1 * g.dq());
    CHECK(std::abs(g.p_axis(bj) - std::sqrt(2.0) * alpha.imag()) < 1.1 * g.dp());
    const double peak =
        std::exp(-std::pow(g.q_axis(bi) - std::sqrt(2.0) * alpha.real(), 2) -
                 std::pow(g.p_axis(bj) - std::sqrt(2.0) * alpha.imag(), 2)) /
        kPi;
    CHECK(g.values(bi, bj) == doctest::Approx(peak).epsilon(1e-6));
}

TEST_CASE("non-classicality hits the known landmarks") {
    /* vacuum: exactly classical */
    NonClassicality vac = nonclassicality(vacuum_ket(8, Mode::Mirror));
    CHECK(std::abs(vac.value) < 1e-3);

    /* Fock |1⟩: maximal, I = ⟨n⟩ = 1 */
    NonClassicality one = nonclassicality(fock_ket(1, 8, Mode::Mirror));
    CHECK(one.value == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(one.mean_n == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(one.ratio == doctest::Approx(1.0).epsilon(1e-2));

    /* Fock |3⟩: I = 3 */
    NonClassicality three = nonclassicality(fock_ket(3, 12, Mode::Mirror));
    CHECK(three.value == doctest::Approx(3.0).epsilon(1e-2));

    /* coherent state: displaced classical, I ≈ 0 despite ⟨n⟩ > 0 */
    NonClassicality coh = nonclassicality(coherent_ket(cd(1.0, 0.5), 32));
    CHECK(std::abs(coh.value) < 1e-3);
    CHECK(coh.mean_n == doctest::Approx(1.25).epsilon(1e-10));

    /* squeezed vacuum: saturates the bound, I = sinh²r */
    const double r = 0.8;
    NonClassicality sq = nonclassicality(squeezed_ket(r, 48));
    CHECK(sq.value == doctest::Approx(std::sinh(r) * std::sinh(r)).epsilon(5e-3));
    CHECK(sq.ratio == doctest::Approx(1.0).epsilon(5e-3));

    /* thermal states: classical mixtures at I = 0 */
    NonClassicality th1 = nonclassicality(thermal_state(1.0, 32, Mode::Mirror));
    CHECK(std::abs(th1.value) < 1e-3);
    NonClassicality th2 = nonclassicality(thermal_state(2.0, 48, Mode::Mirror));
    CHECK(std::abs(th2.value) < 1e-3);

    /* bound holds across the corpus */
    for (const NonClassicality& m : {vac, one, three, coh, sq, th1, th2}) {
        CHECK(m.value >= -1e-3);
        CHECK(m.value <= m.mean_n * (1.0 + 1e-3) + 1e-3);
    }
}

TEST_CASE("grid-route non-classicality matches the pure-state oracle") {
    QuantumState mix = random_ket(16, 42);
    const double expected = pure_measure_oracle(mix);
    NonClassicality direct = nonclassicality(mix);
    CHECK(direct.value == doctest::Approx(expected).epsilon(5e-3));

    /* grid-only overload: ⟨n⟩ and purity recovered from the grid itself */
    WignerGrid g = wigner(fock_ket(1, 8, Mode::Mirror));
    NonClassicality from_grid = nonclassicality(g);
    CHECK(from_grid.value == doctest::Approx(1.0).epsilon(2e-2));
    CHECK(from_grid.mean_n == doctest::Approx(1.0).epsilon(2e-2));

    /* a Paper-convention grid must give the same convention-free number */
    WignerSpec paper;
    paper.convention = QuadratureConvention::Paper;
    NonClassicality from_paper = nonclassicality(wigner(fock_ket(1, 8, Mode::Mirror), paper));
    CHECK(from_paper.value == doctest::Approx(from_grid.value).epsilon(1e-3));
}

TEST_CASE("fidelity specialisations and cross-checks") {
    QuantumState a = random_ket(12, 1);
    QuantumState b = random_ket(12, 2);

    /* pure-pure: |⟨a|b⟩|² through all three code paths */
    const double pure_direct = fidelity(a, b);
    QuantumState bd = b;
    bd.kind = StateKind::Density;
    bd.rho = b.density();
    const double mixed_path = fidelity(a, bd);
    QuantumState ad = a;
    ad.kind = StateKind::Density;
    ad.rho = a.density();
    const double uhlmann_path = fidelity(ad, bd);
    CHECK(pure_direct == doctest::Approx(mixed_path).epsilon(1e-9));
    CHECK(pure_direct == doctest::Approx(uhlmann_path).epsilon(1e-8));

    /* self-fidelity and orthogonality */
    QuantumState rho = random_mixed(10, 3);
    CHECK(fidelity(rho, rho) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fidelity(fock_ket(0, 6, Mode::Mirror), fock_ket(1, 6, Mode::Mirror)) <
          1e-12);

    /* symmetry */
    QuantumState sig = random_mixed(10, 4);
    CHECK(fidelity(rho, sig) == doctest::Approx(fidelity(sig, rho)).epsilon(1e-9));

    /* F(vacuum, thermal nbar=1) = p_0 = 1/2, via both paths */
    QuantumState th = thermal_state(1.0, 40, Mode::Mirror);
    CHECK(fidelity(vacuum_ket(40, Mode::Mirror), th) ==
          doctest::Approx(0.5).epsilon(1e-6));
    QuantumState vd = vacuum_ket(40, Mode::Mirror);
    vd.kind = StateKind::Density;
    vd.rho = vacuum_ket(40, Mode::Mirror).density();
    CHECK(fidelity(vd, th) == doctest::Approx(0.5).epsilon(1e-6));

    /* depolarising both states toward I/d draws them together monotonically */
    const MatrixXcd eye = MatrixXcd::Identity(10, 10) / 10.0;
    double prev = fidelity(rho, sig);
    for (double lam : {0.25, 0.5, 0.75, 1.0}) {
        QuantumState r2 = rho, s2 = sig;
        r2.rho = (1.0 - lam) * rho.rho + lam * eye;
        s2.rho = (1.0 - lam) * sig.rho + lam * eye;
        const double f = fidelity(r2, s2);
        CHECK(f >= prev - 1e-12);
        prev = f;
    }

    /* errors: dimension mismatch, and a genuinely indefinite input */
    CHECK_THROWS_AS(fidelity(random_ket(8, 5), random_ket(9, 6)), ConfigError);
    QuantumState bad = rho;
    bad.rho(0, 0) = -1e-6;
    CHECK_THROWS_AS(fidelity(bad, sig), NumericalError);
}

TEST_CASE("quadrature statistics in both conventions") {
    QuantumState vac = vacuum_ket(6, Mode::Mirror);
    QuadratureStats h = quadrature_stats(vac, QuadratureConvention::Half);
    CHECK(h.var_x == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(h.var_p == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(h.mean_x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(h.mean_p == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(h.mean_n == doctest::Approx(0.0).epsilon(1e-12));

    /* squeezed vacuum: e^{∓2r}/2, minimum-uncertainty product */
    const double r = 0.65;
    QuantumState sq = squeezed_ket(r, 48);
    QuadratureStats hs = quadrature_stats(sq, QuadratureConvention::Half);
    CHECK(hs.var_x == doctest::Approx(std::exp(-2.0 * r) / 2.0).epsilon(1e-9));
    CHECK(hs.var_p == doctest::Approx(std::exp(2.0 * r) / 2.0).epsilon(1e-9));
    CHECK(hs.var_x * hs.var_p == doctest::Approx(0.25).epsilon(1e-9));

    /* paper convention is exactly twice the half variances, for any state */
    for (unsigned seed : {11u, 12u, 13u}) {
        QuantumState s = random_ket(20, seed);
        QuadratureStats half = quadrature_stats(s, QuadratureConvention::Half);
        QuadratureStats paper = quadrature_stats(s, QuadratureConvention::Paper);
        CHECK(paper.var_x == 2.0 * half.var_x);
        CHECK(paper.var_p == 2.0 * half.var_p);
        CHECK(paper.mean_n == half.mean_n);
    }
    QuantumState rho = random_mixed(14, 21);
    QuadratureStats half = quadrature_stats(rho, QuadratureConvention::Half);
    QuadratureStats paper = quadrature_stats(rho, QuadratureConvention::Paper);
    CHECK(paper.var_x == 2.0 * half.var_x);
    CHECK(paper.var_p == 2.0 * half.var_p);

    /* composite states must be reduced first */
    QuantumState comp = tensor_ket(vacuum_ket(3, Mode::Cavity), vacuum_ket(3, Mode::Mirror));
    CHECK_THROWS_AS(quadrature_stats(comp, QuadratureConvention::Half), ConfigError);
    CHECK_THROWS_AS(wigner(comp), ConfigError);
}

TEST_CASE("wigner grids serialise to csv plus a json header") {
    WignerSpec spec;
    spec.nq = 17;
    spec.np = 19;
    WignerGrid g = wigner(vacuum_ket(6, Mode::Mirror), spec);
    const std::string base = "wigner_test_tmp";
    wigner_write(g, base);

    std::ifstream js(base + ".json");
    REQUIRE(js.good());
    nlohmann::json header = nlohmann::json::parse(js);
    CHECK(header["convention"] == "half");
    CHECK(header["nq"] == 17);
    CHECK(header["np"] == 19);
    CHECK(std::abs(header["normalization"].get<double>() - 1.0) < 1e-3);
    CHECK(header["payload"] == base + ".csv");

    std::ifstream csv(base + ".csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "q,p,w");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 17 * 19);
    std::remove((base + ".json").c_str());
    std::remove((base + ".csv").c_str());
}

TEST_CASE("explicit grids that clip the state are rejected") {
    QuantumState six = fock_ket(6, 16, Mode::Mirror);
    WignerSpec tiny;
    tiny.q_extent = tiny.p_extent = 2.0;
    tiny.nq = tiny.np = 33;
    CHECK_THROWS_AS(wigner(six, tiny), NumericalError);

    /* auto extents grow instead of failing */
    WignerGrid g = wigner(six);
    CHECK(g.boundary_max() <= 1e-4);
    CHECK(g.normalization() == doctest::Approx(1.0).epsilon(1e-3));

    /* strongly squeezed state: the default footprint must auto-enlarge to
     * hold the stretched axis */
    WignerGrid gs = wigner(squeezed_ket(0.83, 48));
    CHECK(gs.boundary_max() <= 1e-4);
    CHECK(gs.normalization() == doctest::Approx(1.0).epsilon(1e-3));
}
