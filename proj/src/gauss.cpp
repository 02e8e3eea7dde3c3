#include "psilvm/gauss.hpp"

#include <cmath>

namespace psilvm {

void DiagGaussian::validate() const {
    if (mean.size() != var.size()) {
        throw DimensionMismatch("DiagGaussian: mean and var lengths differ");
    }
    for (Eigen::Index q = 0; q < var.size(); ++q) {
        if (!std::isfinite(var[q]) || !std::isfinite(mean[q])) {
            throw InvalidInput("DiagGaussian: entries must be finite");
        }
        if (!(var[q] > 0.0)) {
            throw NonPositiveVariance("DiagGaussian: var[" + std::to_string(q) + "] is not positive");
        }
    }
}

void FullGaussian::validate() const {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
        throw DimensionMismatch("FullGaussian: covariance shape does not match mean");
    }
    if (!mean.allFinite() || !cov.allFinite()) {
        throw InvalidInput("FullGaussian: entries must be finite");
    }
    const double scale = cov.norm();
    const double asym = (cov - cov.transpose()).norm();
    if (asym > 1e-12 * (scale > 0 ? scale : 1.0)) {
        throw InvalidInput("FullGaussian: covariance is not symmetric");
    }
}

CholFactor cholesky(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) {
        throw DimensionMismatch("cholesky: matrix is not square");
    }
    if (!m.allFinite()) {
        throw InvalidInput("cholesky: matrix has non-finite entries");
    }
    const double scale = m.norm();
    if ((m - m.transpose()).norm() > 1e-10 * (scale > 0 ? scale : 1.0)) {
        // an asymmetric matrix cannot be PD in the sense this factorization needs
        throw NotPositiveDefinite("cholesky: matrix is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
        throw NotPositiveDefinite();
    }
    CholFactor f{llt.matrixL()};
    // LLT can succeed with a zero pivot on the boundary; reject those too.
    for (int i = 0; i < f.dim(); ++i) {
        if (!(f.lower(i, i) > 0.0)) {
            throw NotPositiveDefinite();
        }
    }
    return f;
}

Eigen::MatrixXd solve_psd(const CholFactor& factor, const Eigen::MatrixXd& b) {
    if (factor.lower.rows() != b.rows()) {
        throw DimensionMismatch("solve_psd: rhs row count does not match factor");
    }
    Eigen::MatrixXd y = factor.lower.triangularView<Eigen::Lower>().solve(b);
    return factor.lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

double log_det(const CholFactor& factor) {
    return 2.0 * factor.lower.diagonal().array().log().sum();
}

double kl_diag_to_standard(const DiagGaussian& q) {
    q.validate();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
        acc += q.mean[i] * q.mean[i] + q.var[i] - std::log(q.var[i]) - 1.0;
    }
    return 0.5 * acc;
}

}  // namespace psilvm
