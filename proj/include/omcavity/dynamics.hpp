#pragma once

#include <string>
#include <vector>

#include "omcavity/driving.hpp"
#include "omcavity/fock.hpp"
#include "omcavity/types.hpp"

namespace omcav {

/* Dissipation rates, all in units of the mechanical frequency. */
struct NoiseParams {
    double kappa = 0.0;      /* cavity amplitude decay rate */
    double gamma_m = 0.0;    /* mechanical damping rate */
    double nbar_bath = 0.0;  /* thermal occupation of the mechanical bath */
};

/* Throws ConfigError on negative rates; returns human-readable warnings
 * (e.g. when kappa is large enough to leave the resolved-sideband regime). */
std::vector<std::string> validate_noise(const NoiseParams& noise);

enum class IntegratorMethod { AdaptiveRK, FixedStep };

struct IntegratorConfig {
    IntegratorMethod method = IntegratorMethod::AdaptiveRK;
    double rel_tol = 1e-8;
    double abs_tol = 1e-12;
    double max_step = kPeriod / 200.0;
    /* when non-empty, one diagnostics row (time, norm or trace, top-level
     * population) is appended to this CSV file per accepted step */
    std::string diagnostics_path;
};

IntegratorConfig default_ket_config();
IntegratorConfig default_density_config();

/* Drive-explicit Hamiltonian in the frame rotating at the cavity and
 * mechanical frequencies:
 *
 *   H(t) = i u(t) a† - i u*(t) a - k (a†a) ⊗ X_m(t),
 *
 * with u(t) = 2 eta e^{i phi(t)} cos(mt), m the detuning multiple, and
 * X_m(t) = b e^{-it} + b† e^{+it}.  All explicit frequencies are of the
 * order of the mechanical frequency. */
ModeOperator hamiltonian_rotating(double t, const ProtocolParams& params,
                                  const PhaseSchedule& schedule, int dim_cavity,
                                  int dim_mirror);

/* Integrates the Schrödinger equation for the driven system and returns the
 * ket at t = N·T in the rotating frame (up to a global phase).  Internally
 * the integration runs in a displaced frame that absorbs the classical drive
 * amplitude, so the cavity truncation only has to hold quantum fluctuations
 * rather than the full coherent field. */
QuantumState schrodinger_propagate(const QuantumState& psi0, const ProtocolParams& params,
                                   const PhaseSchedule& schedule, int dim_cavity,
                                   int dim_mirror,
                                   const IntegratorConfig& config = default_ket_config());

/* Master-equation propagation with cavity photon loss (rate kappa) and
 * mechanical damping against a thermal bath (rate gamma_m, occupation
 * nbar_bath).  Returns the density matrix at t = N·T in the rotating frame.
 * The same displaced-frame trick applies: with the displacement driven by
 * the damped envelope f' = u - (kappa/2) f the dissipators keep their
 * standard form exactly. */
QuantumState lindblad_propagate(const QuantumState& rho0, const ProtocolParams& params,
                                const PhaseSchedule& schedule, int dim_cavity, int dim_mirror,
                                const NoiseParams& noise,
                                const IntegratorConfig& config = default_density_config());

/* First-order photon-loss correction applied to the ideal final state:
 *
 *   rho' = rho + kappa N T ( ã rho ã† - ½{ã†ã, rho} ),   ã = a ⊗ e^{k(b-b†)}.
 *
 * Because ã†ã = a†a ⊗ 1, the correction vanishes identically on states whose
 * cavity factor is the vacuum; it only acts when cavity excitations are
 * present.  Mirror-only input is treated as the cavity-vacuum sector. */
QuantumState photon_loss_correction(const QuantumState& rho_ideal, const ProtocolParams& params,
                                    double kappa);

/* Which symbol multiplies the correlated part of the damping operator
 * b̃ = b - c(a†a + eta²/2): the printed reading uses the cavity decay rate
 * c = kappa, the alternative reading uses the coupling c = k. */
enum class BtildeReading { PrintedKappa, CouplingK };

/* First-order mechanical-damping correction applied to the ideal final state:
 *
 *   rho' = rho + gamma_m N T [ (nbar+1) L[b̃] + nbar L[b̃†] ] rho,
 *
 * with L[c]rho = c rho c† - ½{c†c, rho} and b̃ as above.  Mirror-only input
 * is treated as the cavity-vacuum sector (a†a -> 0). */
QuantumState mech_damping_correction(const QuantumState& rho_ideal, const ProtocolParams& params,
                                     const NoiseParams& noise,
                                     BtildeReading reading = BtildeReading::PrintedKappa);

}  // namespace omcav
