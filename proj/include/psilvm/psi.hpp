#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "psilvm/expectation.hpp"
#include "psilvm/kernels.hpp"

namespace psilvm {

// The three kernel expectations under a factorized Gaussian q(X):
//   psi0 = sum_i E[k(x_i, x_i)]
//   psi1[i,j] = E[k(x_i, z_j)]
//   psi2[j,m] = sum_i E[k(x_i, z_j) k(x_i, z_m)]
struct PsiStats {
    double psi0 = 0.0;
    Eigen::MatrixXd psi1;  // N x M
    Eigen::MatrixXd psi2;  // M x M, symmetric
    std::int64_t total_evals = 0;
};

// q(X) factors (diagonal Gaussians, one per row) plus the inducing inputs.
struct LatentBatch {
    Eigen::MatrixXd mean;      // N x D
    Eigen::MatrixXd var;       // N x D, entries > 0
    Eigen::MatrixXd inducing;  // M x D

    int size() const { return static_cast<int>(mean.rows()); }
    int dim() const { return static_cast<int>(mean.cols()); }
    int num_inducing() const { return static_cast<int>(inducing.rows()); }
    DiagGaussian q_at(int i) const;
    void validate() const;
};

// Back-end selector: the analytic closed form or a quadrature scheme.
// Text forms: "analytic" or the scheme grammar (ut, gh:H, mc:P[:seed]).
struct PsiBackend {
    bool analytic = false;
    SchemeTag scheme;

    static PsiBackend make_analytic();
    static PsiBackend quadrature(const SchemeTag& tag);
    static PsiBackend parse(const std::string& text);
    std::string str() const;
    bool deterministic() const { return analytic || scheme.deterministic(); }
    bool operator==(const PsiBackend&) const = default;
};

// Quadrature evaluation for any kernel. One point set is generated per q(x_i)
// and shared by all three statistics. For the mc scheme the per-point seed is
// derived from (scheme seed, i) so draws differ across data points but stay
// reproducible. total_evals = N * eval_budget(scheme, D).
PsiStats psi_quadrature(const KernelSpec& kernel, const LatentBatch& latent, const SchemeTag& scheme,
                        bool include_psi2 = true);

// Closed forms for the RBF kernel (total_evals = 0). Throws WrongKernelKind
// for anything except rbf_ard.
PsiStats psi_analytic_rbf(const KernelSpec& kernel, const LatentBatch& latent);

// Closed-form dispatcher: rbf_ard, or a two-child sum of rbf_ard and linear
// (the cross expectations have Gaussian closed forms). Anything else throws
// WrongKernelKind.
PsiStats psi_analytic(const KernelSpec& kernel, const LatentBatch& latent);

bool analytic_applicable(const KernelSpec& kernel);

PsiStats compute_psi(const KernelSpec& kernel, const LatentBatch& latent, const PsiBackend& backend);

struct PsiErrorReport {
    SchemeTag scheme;
    double psi0_abs = 0.0;
    double psi1_max_abs = 0.0;
    double psi2_max_abs = 0.0;
    double psi0_rel = 0.0;
    double psi1_rel_fro = 0.0;
    double psi2_rel_fro = 0.0;
    std::int64_t evals = 0;
};

PsiErrorReport psi_error_report(const KernelSpec& kernel, const LatentBatch& latent,
                                const SchemeTag& scheme, const PsiStats& reference);

// ---------------------------------------------------------------------------
// Reverse-mode hooks. Given adjoints of (psi0, psi1, psi2) with respect to
// some downstream scalar, accumulate the chain-rule gradient onto the kernel
// parameters, the variational means, the log-variances, and the inducing
// inputs. psi2_bar is the raw adjoint matrix of psi2 as a full matrix (the
// symmetrization sum bar + bar^T happens inside).
// ---------------------------------------------------------------------------

struct PsiAdjoints {
    double psi0_bar = 0.0;
    Eigen::MatrixXd psi1_bar;  // N x M
    Eigen::MatrixXd psi2_bar;  // M x M
};

struct PsiGradient {
    Eigen::VectorXd kernel;     // length kernel.param_count()
    Eigen::MatrixXd q_mean;     // N x D
    Eigen::MatrixXd q_log_var;  // N x D  (w.r.t. log of the variance)
    Eigen::MatrixXd inducing;   // M x D
};

PsiGradient psi_backward(const KernelSpec& kernel, const LatentBatch& latent,
                         const PsiBackend& backend, const PsiAdjoints& bar);

}  // namespace psilvm
