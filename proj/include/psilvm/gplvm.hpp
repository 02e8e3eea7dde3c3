#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "psilvm/gauss.hpp"
#include "psilvm/kernels.hpp"
#include "psilvm/optimize.hpp"
#include "psilvm/psi.hpp"

namespace psilvm {

// The collapsed variational model: q(X) and the inducing inputs live in
// `latent`, the GP prior is `kernel`, observations Y are N x D_y. The bound
// marginalizes the GP function values and the inducing outputs analytically,
// so neither is stored. Y may have zero columns, which reduces the bound to
// the negated KL term (useful for testing the latent-space regularizer alone).
struct GplvmModel {
    KernelSpec kernel;
    LatentBatch latent;
    double noise_var = 0.1;
    Eigen::MatrixXd Y;
    PsiBackend backend;

    int data_dim() const { return static_cast<int>(Y.cols()); }
    void validate() const;
};

struct ElboParts {
    double fit_term = 0.0;    // collapsed Gaussian likelihood bound
    double trace_term = 0.0;  // (D_y / 2 sigma^2) (psi0 - tr(Kz^-1 Psi2))
    double kl_term = 0.0;     // KL(q(X) || N(0, I)), always >= 0

    double elbo() const { return fit_term - trace_term - kl_term; }
};

// Unconstrained parameter vector covering everything fit() moves:
//   [kernel params, log noise_var, latent means (row-major),
//    log latent vars (row-major), inducing inputs (row-major)]
int packed_size(const GplvmModel& m);
Eigen::VectorXd pack_model(const GplvmModel& m);
void unpack_model(GplvmModel& m, const Eigen::VectorXd& p);

// Both use the jitter policy: 1e-6 * mean(diag Kz) is always added before
// factorizing; one retry at ten times that; then NotPositiveDefinite.
ElboParts elbo(const GplvmModel& m);

// Gradient of the elbo with respect to the packed vector. grad is resized.
ElboParts elbo_with_gradient(const GplvmModel& m, Eigen::VectorXd& grad);
Eigen::VectorXd elbo_gradient(const GplvmModel& m);

struct FitResult {
    GplvmModel model;
    std::vector<IterRecord> trace;  // value column holds the elbo (ascending for lbfgs)
    bool converged = false;
    bool diverged = false;  // objective went non-finite; model holds the last good state
    double initial_elbo = 0.0;
    double final_elbo = 0.0;
};

// Maximizes the elbo over the packed parameters. Deterministic back-ends may
// use either optimizer; the mc scheme must use adam and gets a fresh draw per
// objective evaluation (seed derived from the scheme seed, `seed`, and an
// evaluation counter), so requesting lbfgs with mc throws InvalidConfig.
FitResult fit(const GplvmModel& m, const OptimizerConfig& opt, std::uint64_t seed = 0);

struct PredictiveDist {
    Eigen::VectorXd mean;  // D_y
    Eigen::VectorXd var;   // D_y, includes the noise variance
};

// Factors the training-side quantities once so repeated predictions (free
// simulation) stay cheap. Both predictive variances are floored at noise_var;
// a clamp driven by quadrature error logs a warning.
class GplvmPredictor {
public:
    explicit GplvmPredictor(const GplvmModel& m);

    PredictiveDist certain(const Eigen::VectorXd& xstar) const;
    PredictiveDist uncertain(const DiagGaussian& qstar, std::int64_t* evals_out = nullptr) const;

    const GplvmModel& model() const { return model_; }

private:
    GplvmModel model_;
    Eigen::MatrixXd B_;          // M x D_y, sigma^-2 A^-1 Psi1^T Y
    Eigen::MatrixXd posterior_;  // M x M, Kz^-1 - A^-1
};

PredictiveDist predict_certain(const GplvmModel& m, const Eigen::VectorXd& xstar);
PredictiveDist predict_uncertain(const GplvmModel& m, const DiagGaussian& qstar);

// Standard initialization protocol: latent means from the top-q principal
// component scores of Y, constant latent variance, inducing inputs drawn
// without replacement from the initial means (seed-controlled).
GplvmModel init_gplvm(const Eigen::MatrixXd& Y, int q, int m, const KernelSpec& kernel,
                      const PsiBackend& backend, double init_latent_var, std::uint64_t seed);

// Single-document JSON round trip (kernel structure + packed parameters,
// latent state, noise variance, back-end tag, content hash). Loading verifies
// the hash and throws InvalidInput on mismatch.
std::string model_to_json(const GplvmModel& m);
GplvmModel model_from_json(const std::string& text);
void save_model(const GplvmModel& m, const std::string& path);
GplvmModel load_model(const std::string& path);

}  // namespace psilvm
