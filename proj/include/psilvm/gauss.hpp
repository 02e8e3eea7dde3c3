#pragma once

#include <Eigen/Dense>

#include "psilvm/errors.hpp"

namespace psilvm {

// Factorized Gaussian with diagonal covariance. The variational factors
// q(x_i) of the latent space are stored this way.
struct DiagGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;  // diagonal of the covariance, all entries > 0

    int dim() const { return static_cast<int>(mean.size()); }
    void validate() const;
};

// General Gaussian with a full symmetric positive-definite covariance.
struct FullGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    int dim() const { return static_cast<int>(mean.size()); }
    void validate() const;
};

// Lower-triangular Cholesky factor L with L L^T = input.
struct CholFactor {
    Eigen::MatrixXd lower;

    int dim() const { return static_cast<int>(lower.rows()); }
};

// Cholesky factorization of a symmetric matrix. Throws NotPositiveDefinite on
// singular or indefinite input; callers decide about jitter, this routine
// never adds any.
CholFactor cholesky(const Eigen::MatrixXd& m);

// Solve (L L^T) X = b given the factor.
Eigen::MatrixXd solve_psd(const CholFactor& factor, const Eigen::MatrixXd& b);

// log|A| from the factor diagonal.
double log_det(const CholFactor& factor);

// KL( N(mean, diag(var)) || N(0, I) ), summed over dimensions.
double kl_diag_to_standard(const DiagGaussian& q);

}  // namespace psilvm
