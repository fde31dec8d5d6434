#pragma once

/*
 * Drive schedules for the pulsed bichromatic cavity drive.
 *
 * The protocol drives the cavity at the two sidebands ω_c ± m·ω_m and holds
 * the drive phase constant over each mechanical period T = 2π/ω_m, stepping
 * it between periods.  Step schedules realise either the quadratic
 * (squeezing, m = 1) or the cubic (m = 2) protocol; continuous schedules
 * replace the phase staircase by a smooth ramp plus a truncated series of
 * sine harmonics chosen to hug the staircase.
 *
 * All times are in units with ω_m = 1, so T = 2π and the drive strength is
 * captured by η = E/ω_m.
 */

#include <functional>
#include <vector>

#include "omcavity/types.hpp"

namespace omcav {

/* Which sideband pair the drive addresses: ω_c ± ω_m or ω_c ± 2ω_m. */
enum class Detuning { One, Two };

inline constexpr double kPeriod = 2.0 * kPi;  // T in ω_m = 1 units

struct ProtocolParams {
    double k = 0.0;    // optomechanical coupling g/ω_m
    double eta = 0.0;  // drive strength E/ω_m
    int N = 0;         // number of driving periods
    Detuning detuning = Detuning::One;
    int dim_cavity = 0;  // Fock truncations; 0 = caller chooses per use
    int dim_mirror = 0;

    double total_time() const { return N * kPeriod; }
};

/* Validate parameter ranges.  Hard violations throw ConfigError; soft issues
 * (strained perturbative regime, drive off) are returned as warnings. */
std::vector<std::string> validate_params(const ProtocolParams& p);

enum class ScheduleKind { Step, Continuous };

/* Phase program of the drive.
 *
 * Step schedules store one phase per period (unwrapped; monotone for the
 * corrected cubic protocol).  Continuous schedules store the smoothing
 * amplitudes A_1..A_d of the sine series on top of the linear ramp
 * 2π/N · t/T.
 *
 * `correction` is the extra phase advance per period that compensates the
 * intensity back-action of the m = 2 drive (0 for squeezing schedules).  For
 * step schedules it is already folded into `phases`; for continuous
 * schedules phase_at() adds the matching ramp and rescales the sine
 * amplitudes so the curve keeps hugging the corrected staircase.
 */
struct PhaseSchedule {
    ScheduleKind kind = ScheduleKind::Step;
    int N = 0;
    std::vector<double> phases;      // step: φ_1..φ_N
    std::vector<double> amplitudes;  // continuous: A_1..A_d
    double correction = 0.0;         // Δ per period

    int smoothing_order() const { return static_cast<int>(amplitudes.size()); }

    /* Drive phase at absolute time t ∈ [0, NT]. */
    double phase_at(double t) const;

    /* Phase with the correction ramp removed; for step schedules this is the
     * pure root-of-unity staircase that enters cancellation checks. */
    double base_phase_at(double t) const;
};

/* Squeezing protocol: φ_s = 2π(s−1)/N, drive at ω_c ± ω_m.  Requires N ≥ 3
 * so that both Σ e^{iφ_s} and Σ e^{2iφ_s} vanish. */
PhaseSchedule schedule_squeeze(int N);

/* Cubic protocol: φ_s = (2π/N + Δ)(s−1) with Δ = (4π/3)(kη)², drive at
 * ω_c ± 2ω_m. */
PhaseSchedule schedule_cubic(int N, double k, double eta);

/* Continuous ramp with d smoothing harmonics.  The amplitudes solve the d×d
 * linear system that zeroes the odd derivatives of order 1, 3, …, 2d−1 of
 * the continuous phase at the staircase step centres t_j = (2j+1)π, making
 * the ramp tangent (to high order) to the staircase there.  d = 0 is the
 * bare linear ramp. */
PhaseSchedule schedule_continuous(int N, int d);

/* Attach the cubic back-action correction to a continuous schedule. */
PhaseSchedule with_correction(PhaseSchedule schedule, double k, double eta);

std::string schedule_to_json(const PhaseSchedule& s);
PhaseSchedule schedule_from_json(const std::string& text);

/* Cavity drive coefficient u(t) = ξ(t) e^{iω_c t} = 2η e^{iφ(t)} cos(mt)
 * and its running integral f(t) = ∫_0^t u, the coherent displacement the
 * drive imparts to the cavity.  For step schedules f has the closed form
 *   m = 1:  f = 2η e^{iφ_s} sin(t),     m = 2:  f = η e^{iφ_s} sin(2t),
 * vanishing at every period boundary.  For continuous schedules f is
 * accumulated by quadrature over a cached fine grid (cubic Hermite between
 * anchors, using the exact derivative u). */
class DriveEnvelope {
  public:
    DriveEnvelope(const ProtocolParams& params, const PhaseSchedule& schedule);

    cd u(double t) const;
    cd f(double t) const;
    double phase(double t) const { return schedule_.phase_at(t); }

  private:
    ProtocolParams params_;
    PhaseSchedule schedule_;
    /* cumulative integral anchors for continuous schedules */
    double anchor_dt_ = 0.0;
    std::vector<cd> anchors_;
    void build_table();
};

/* One-off envelope evaluation (constructs a DriveEnvelope internally). */
cd envelope_f(double t, const ProtocolParams& params, const PhaseSchedule& schedule);

/* Adaptive Simpson quadrature of a complex integrand; shared utility. */
cd integrate_adaptive(const std::function<cd(double)>& fn, double a, double b,
                      double tol = 1e-11, int max_depth = 40);

}  // namespace omcav
