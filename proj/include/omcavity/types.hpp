#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace omcav {

using cd = std::complex<double>;
using SpMat = Eigen::SparseMatrix<cd>;
using Triplet = Eigen::Triplet<cd>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

/* Base error for everything thrown by the library. */
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/* Invalid user input: malformed configs, bad dimensions, out-of-range knobs. */
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/* Numerical failure: lost convergence, truncation leak, step underflow. */
struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

/* Which physical mode an operator or state lives on. */
enum class Mode { Cavity, Mirror, Composite };

/* Largest absolute entry of a sparse matrix (norm used for cancellation
 * diagnostics, where an entry-wise measure keeps bandwidth effects out). */
double max_abs(const SpMat& m);
double max_abs(const MatrixXcd& m);

std::string mode_name(Mode m);

}  // namespace omcav
