#pragma once

/*
 * Matrix-exponential utilities.  Every generator in this codebase is
 * (i times) a Hermitian matrix, so two routes cover all needs:
 *
 *  - dense:  exp(i·tau·H) by Hermitian eigendecomposition — exactly unitary
 *    by construction, practical up to dimension ~2000;
 *  - action: exp(i·tau·H)·v by a Lanczos/Krylov method with adaptive
 *    sub-stepping and per-application error control, for band/sparse H at
 *    dimensions where forming the dense exponential is not an option.
 */

#include "omcavity/types.hpp"

namespace omcav {

/* exp(i·tau·H) for Hermitian H (dense). Throws NumericalError if H fails a
 * Hermiticity check at 1e-10 relative tolerance. */
MatrixXcd expm_i_hermitian(const MatrixXcd& H, double tau);

/* exp(i·tau·H)·v for sparse Hermitian H via Lanczos iteration.  `tol` is the
 * target 2-norm error per application; the interval is subdivided adaptively
 * until the local error estimate (difference of successive Krylov orders)
 * meets it. */
VectorXcd expm_action_i_hermitian(const SpMat& H, double tau, const VectorXcd& v,
                                  double tol = 1e-10, int max_krylov = 48);

/* Coherent displacement exp(alpha·b† − alpha*·b) on a dim-dimensional mode. */
MatrixXcd displacement_operator(int dim, cd alpha);

/* max |(U†U − 1)_ij| over the leading (1−exclude_top)·dim rows/cols; the
 * excluded top Fock levels carry unavoidable truncation artifacts. */
double unitarity_defect(const MatrixXcd& U, double exclude_top = 0.1);

}  // namespace omcav
