#pragma once

/*
 * Truncated Fock-space operators and states for a two-mode optomechanical
 * system (an optical cavity mode coupled to a mechanical mirror mode).
 *
 * Composite objects use the flattened index  ic * dim_mirror + im,
 * i.e. the mirror index varies fastest. tensor(cavity_op, mirror_op) is the
 * standard Kronecker product under this ordering.
 */

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "omcavity/types.hpp"

namespace omcav {

/* Sparse operator together with the dimension metadata needed to interpret
 * it.  Single-mode operators carry one dimension; composite operators carry
 * both. */
struct ModeOperator {
    Mode mode = Mode::Mirror;
    int dim_cavity = 0;  // 0 when not applicable
    int dim_mirror = 0;
    SpMat mat;

    int dim() const { return static_cast<int>(mat.rows()); }
    bool is_composite() const { return mode == Mode::Composite; }
};

enum class StateKind { Ket, Density };

/* State vector or density matrix plus metadata.  `vec` is active for kets,
 * `rho` for density matrices. */
struct QuantumState {
    StateKind kind = StateKind::Ket;
    Mode mode = Mode::Mirror;
    int dim_cavity = 0;
    int dim_mirror = 0;
    VectorXcd vec;
    MatrixXcd rho;
    std::map<std::string, std::string> metadata;

    int dim() const {
        return kind == StateKind::Ket ? static_cast<int>(vec.size())
                                      : static_cast<int>(rho.rows());
    }
    /* Density-matrix view regardless of kind (outer product for kets). */
    MatrixXcd density() const;
};

/* Flattened composite index helpers (mirror index fastest). */
struct CompositeIndex {
    int dim_cavity = 0;
    int dim_mirror = 0;

    int flatten(int ic, int im) const { return ic * dim_mirror + im; }
    int cavity_of(int idx) const { return idx / dim_mirror; }
    int mirror_of(int idx) const { return idx % dim_mirror; }
    int dim() const { return dim_cavity * dim_mirror; }
};

/* Vacuum-variance convention for quadratures.
 *   Paper: X = b + b†, P = i(b† − b); vacuum variance 1, [X, P] = 2i.
 *   Half:  x = (b + b†)/√2, p = i(b† − b)/√2; vacuum variance 1/2, [x, p] = i.
 */
enum class QuadratureConvention { Paper, Half };

// ---- single-mode builders -------------------------------------------------

ModeOperator annihilation(int dim, Mode mode);
ModeOperator creation(int dim, Mode mode);
ModeOperator number_op(int dim, Mode mode);
ModeOperator identity_op(int dim, Mode mode);

/* Pair (X, P) in the requested convention. */
std::pair<ModeOperator, ModeOperator> quadratures(
    int dim, Mode mode, QuadratureConvention conv = QuadratureConvention::Paper);

// ---- states ---------------------------------------------------------------

QuantumState fock_ket(int n, int dim, Mode mode);
QuantumState vacuum_ket(int dim, Mode mode);

/* Thermal (geometric) single-mode density matrix with mean occupation nbar.
 * Throws NumericalError when the neglected tail mass at `dim` exceeds 1e-8;
 * the retained populations are renormalised so the trace is exactly 1. */
QuantumState thermal_state(double nbar, int dim, Mode mode);

/* Composite ket |cavity⟩ ⊗ |mirror⟩. */
QuantumState tensor_ket(const QuantumState& cavity, const QuantumState& mirror);

// ---- composite algebra ----------------------------------------------------

/* Kronecker composite of a cavity operator with a mirror operator. */
ModeOperator tensor(const ModeOperator& cavity_op, const ModeOperator& mirror_op);

/* Lift a single-mode operator to the composite space (identity on the other
 * factor). */
ModeOperator lift(const ModeOperator& op, int dim_cavity, int dim_mirror);

// ---- measurement ----------------------------------------------------------

cd expectation(const QuantumState& state, const ModeOperator& op);

/* ⟨O²⟩ − ⟨O⟩² for Hermitian O (checked). */
double variance(const QuantumState& state, const ModeOperator& op);

/* Reduced density matrix of one factor of a composite state. */
QuantumState partial_trace(const QuantumState& state, Mode keep);

/* Population of the top `count` Fock levels (truncation-leak diagnostic).
 * For composite states the worst single-factor tail is reported. */
double tail_population(const QuantumState& state, int count = 3);

// ---- serialization --------------------------------------------------------

std::string state_to_json(const QuantumState& state);
QuantumState state_from_json(const std::string& text);

// ---- truncation scan ------------------------------------------------------

struct TruncationScanResult {
    std::vector<int> dims;
    std::vector<std::string> names;
    /* values[i][j] = observable j evaluated at dims[i] */
    std::vector<std::vector<double>> values;
    /* |v_last − v_prev| / max(|v_last|, eps) per observable */
    std::vector<double> last_rel_change;
    std::vector<bool> converged;
    bool all_converged = false;
};

/* Evaluate named observables at a strictly increasing ladder of truncation
 * dimensions and report the relative change across the last pair.
 * `eval(dim)` must return one value per name. */
TruncationScanResult truncation_scan(
    const std::function<std::vector<double>(int)>& eval,
    const std::vector<std::string>& names, const std::vector<int>& dims,
    double rel_tol = 5e-3);

}  // namespace omcav
