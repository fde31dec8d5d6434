#include "omcavity/expm.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace omcav {

MatrixXcd expm_i_hermitian(const MatrixXcd& H, double tau) {
    const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
    if ((H - H.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw NumericalError("expm_i_hermitian: generator is not Hermitian");
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(H);
    if (es.info() != Eigen::Success)
        throw NumericalError("expm_i_hermitian: eigendecomposition failed");
    VectorXcd phases(H.rows());
    for (Eigen::Index j = 0; j < H.rows(); ++j)
        phases(j) = std::exp(cd(0.0, tau * es.eigenvalues()(j)));
    return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

namespace {

/* exp(i·tau·T)·(beta·e1) for the real symmetric tridiagonal Lanczos matrix,
 * expressed in the Krylov basis. */
VectorXcd tridiag_exp_e1(const VectorXd& alpha, const VectorXd& beta, int m, double tau,
                         double scale) {
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        T(j, j) = alpha(j);
        if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta(j);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    VectorXcd w = VectorXcd::Zero(m);
    for (int j = 0; j < m; ++j) {
        cd phase = std::exp(cd(0.0, tau * es.eigenvalues()(j)));
        double overlap = es.eigenvectors()(0, j);  // ⟨eigvec_j | e1⟩
        for (int i = 0; i < m; ++i) w(i) += es.eigenvectors()(i, j) * phase * overlap * scale;
    }
    return w;
}

}  // namespace

VectorXcd expm_action_i_hermitian(const SpMat& H, double tau, const VectorXcd& v,
                                  double tol, int max_krylov) {
    if (H.rows() != H.cols() || H.rows() != v.size())
        throw ConfigError("expm_action: dimension mismatch");
    if (tau == 0.0) return v;

    const auto n = v.size();
    VectorXcd w = v;
    double t_done = 0.0;
    double h = tau;  // signed substep
    const double t_total = std::abs(tau);
    const double dir = tau > 0 ? 1.0 : -1.0;
    int guard = 0;

    while (std::abs(t_done) < t_total - 1e-15 * t_total) {
        if (++guard > 100000) throw NumericalError("expm_action: substep limit exceeded");
        if (std::abs(h) > t_total - std::abs(t_done)) h = dir * (t_total - std::abs(t_done));

        double beta0 = w.norm();
        if (beta0 == 0.0) return w;

        /* Lanczos with full reorthogonalization (m is small). */
        MatrixXcd V(n, max_krylov + 1);
        VectorXd alpha(max_krylov), beta(max_krylov);
        V.col(0) = w / beta0;
        int m = max_krylov;
        bool breakdown = false;
        for (int j = 0; j < max_krylov; ++j) {
            VectorXcd q = H * V.col(j);
            alpha(j) = q.dot(V.col(j)).real();
            q -= alpha(j) * V.col(j);
            if (j > 0) q -= beta(j - 1) * V.col(j - 1);
            for (int i = 0; i <= j; ++i) q -= V.col(i).dot(q) * V.col(i);
            beta(j) = q.norm();
            if (beta(j) < 1e-14 * std::max(1.0, std::abs(alpha(j)))) {
                m = j + 1;
                breakdown = true;
                break;
            }
            V.col(j + 1) = q / beta(j);
        }

        VectorXcd y_m = tridiag_exp_e1(alpha, beta, m, h, beta0);
        double err;
        if (breakdown) {
            err = 0.0;  // exact invariant subspace
        } else {
            int m2 = std::max(2, m - 2);
            VectorXcd y_m2 = tridiag_exp_e1(alpha, beta, m2, h, beta0);
            err = 0.0;
            for (int i = 0; i < m2; ++i) err += std::norm(y_m(i) - y_m2(i));
            for (int i = m2; i < m; ++i) err += std::norm(y_m(i));
            err = std::sqrt(err);
        }

        double budget = tol * std::abs(h) / t_total;
        if (err <= budget || std::abs(h) < 1e-12 * t_total) {
            w = V.leftCols(m) * y_m;
            t_done += h;
            if (err < 0.1 * budget) h *= 2.0;
        } else {
            h *= 0.5;
        }
    }
    return w;
}

MatrixXcd displacement_operator(int dim, cd alpha) {
    if (dim < 2) throw ConfigError("displacement_operator: dim must be >= 2");
    /* alpha·b† − alpha*·b is anti-Hermitian; write it as i·G with G Hermitian */
    MatrixXcd G = MatrixXcd::Zero(dim, dim);
    for (int m = 0; m + 1 < dim; ++m) {
        cd up = alpha * std::sqrt(static_cast<double>(m + 1));  // ⟨m+1|αb†|m⟩
        G(m + 1, m) = -cd(0.0, 1.0) * up;
        G(m, m + 1) = std::conj(G(m + 1, m));
    }
    return expm_i_hermitian(G, 1.0);
}

double unitarity_defect(const MatrixXcd& U, double exclude_top) {
    const auto dim = U.rows();
    auto keep = static_cast<Eigen::Index>(std::ceil((1.0 - exclude_top) * dim));
    keep = std::max<Eigen::Index>(1, std::min(dim, keep));
    MatrixXcd defect = U.adjoint() * U - MatrixXcd::Identity(dim, dim);
    return defect.topLeftCorner(keep, keep).cwiseAbs().maxCoeff();
}

}  // namespace omcav
