#pragma once

/*
 * Closed-form Magnus generators and end-of-protocol propagators for the two
 * phase-stepped driving schemes.
 *
 * Sideband pair ω_c ± ω_m ("squeezing"): after N periods with phases
 * φ_s = 2π(s−1)/N the propagator factorises into a diagonal cavity part and
 * the mirror unitary  V_m = exp(i·c·P_m²),  c = 2(πkη)² N cot(π/N) — a shear
 * in phase space equal to a squeeze-plus-rotation.
 *
 * Sideband pair ω_c ± 2ω_m ("cubic"): with the back-action-corrected phases
 * the propagator factorises into the diagonal cavity unitary V_c and the
 * mirror unitary  V_m = exp(−i·(π/3)·N·k³η²·Q_m)  generated by the cubic
 * operator Q_m; the next order multiplies two further mirror factors.
 */

#include <vector>

#include "omcavity/driving.hpp"
#include "omcavity/fock.hpp"

namespace omcav {

/* Parameters of the quadratic (squeezing) protocol propagator.
 *
 * (zeta, delta) follow the closed forms
 *   |zeta| = (2πkη)² N cot(π/N),  delta = arctan(|zeta|),  zeta = i|zeta|e^{iδ},
 * the literature parameterisation of V_m as rotation·squeeze.  That pairing
 * is exact only to third order in |zeta|: the exact factorisation
 *   V_m = exp(iδ·b†b) · exp((ζ̄*b² − ζ̄b†²)/2)
 * needs ζ̄ = zeta_exact = i·arcsinh(|zeta|)·e^{−iδ} (same delta).  Both are
 * provided; squeeze_r_exact = arcsinh(|zeta|) sets the principal variances
 * e^{∓2r}/2 (half convention) of the evolved vacuum.
 */
struct SqueezeResult {
    cd zeta;
    double delta = 0.0;
    int N = 0;
    double k = 0.0;
    double eta = 0.0;
    double squeeze_r_exact = 0.0;
    cd zeta_exact;
};

/* One labelled term of the Magnus series on the composite space. */
struct MagnusTerm {
    int order = 0;
    std::string label;
    ModeOperator op;
};

/* Σ_{l<s} sin(φ_s − φ_l) for φ_s = 2π(s−1)/N; equals (N/2)cot(π/N) for
 * N ≥ 2 and 0 for N = 1.  Exposed for testing against the brute-force sum. */
double phase_pair_sum(int N);

/* First-order generator of the squeezing scheme for one period:
 * M₁^{(1)} = −2πkη · X_c ⊗ P_m.  Dimensions from params.dim_cavity/mirror. */
MagnusTerm magnus1_squeeze(const ProtocolParams& params);

/* Closed-form ζ, δ of the squeezing propagator. */
SqueezeResult squeeze_parameters(const ProtocolParams& params);

/* Mirror unitary V_m = exp(i·c·P_m²) on a dim-dimensional mirror space.
 * Dense, exactly unitary (Hermitian-eigendecomposition exponential). */
ModeOperator propagator_squeeze(const ProtocolParams& params, int dim);

/* Hermitian cubic mirror operator
 * Q_m = (X + iP/√3)³ + (X − iP/√3)³ + (3/2)X  (bandwidth 3). */
ModeOperator qm_operator(int dim);

/* (V_m, V_c) of the cubic scheme:  V_m = exp(−i·(π/3)Nk³η²·Q_m) (dense),
 * V_c = exp(2πik²(n_c² + (2/3)η²n_c)N) (diagonal).  The mirror dim is capped
 * at 2300 for materialisation; use apply_propagator_cubic beyond that. */
std::pair<ModeOperator, ModeOperator> propagator_cubic(const ProtocolParams& params,
                                                       int dim);

/* V_m applied to a mirror ket by Krylov exponential action — supports
 * dimensions far beyond what dense materialisation allows. */
VectorXcd apply_propagator_cubic(const ProtocolParams& params, int dim,
                                 const VectorXcd& psi, double tol = 1e-10);

/* Next-order mirror unitary: the product
 *   V_m⁽³⁾ · exp(−i(ζ⁽⁴⁾/2)(b†²+b²)²)
 *        · exp(iπk⁴η²N[(124η−5)/20·(b²+b†²) + (575+634η)/90·b†b])
 * with ζ⁽⁴⁾ = (πk²η)² N cot(π/N). */
ModeOperator propagator_fourth(const ProtocolParams& params, int dim);

/* Single-period second- and third-order generators of the cubic scheme,
 * term by term:  M₂^{(1)} = πk²(m_2^c + m_2^I − (29/60)η⁴)  and
 * M₃^{(1)} = (π/3)k³η(m_3^m + m_3^I),  plus the labelled sub-terms
 * "m2_c", "m2_I" (= ηP_c(b²+b†²)), "m3_m" (= ηQ_m) and "m3_I". */
std::vector<MagnusTerm> magnus_terms_single_period(const ProtocolParams& params);

/* Phase-sum cancellation audit: conjugates each term by W_s = e^{−i n_c φ_s}
 * (correction ramp removed from φ_s), sums over periods, and splits the
 * result into a mirror-only part, a cavity-only part and a genuine
 * cross part.  Cavity and cross norms must fall below 1e−8 × the reference
 * scale max(mirror-part norm, N × input norm). */
struct CancellationEntry {
    std::string label;
    double mirror_norm = 0.0;
    double cavity_norm = 0.0;
    double cross_norm = 0.0;
    double reference = 0.0;
    bool passed = false;
};

struct CancellationReport {
    std::vector<CancellationEntry> entries;
    bool all_passed = false;
};

CancellationReport cancellation_check(const PhaseSchedule& schedule,
                                      const std::vector<MagnusTerm>& terms);

}  // namespace omcav
