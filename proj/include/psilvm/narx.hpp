#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psilvm/gplvm.hpp"
#include "psilvm/kernels.hpp"
#include "psilvm/optimize.hpp"
#include "psilvm/psi.hpp"

namespace psilvm {

// Autoregressive forecasting on a univariate series: an exact GP is trained
// on lagged windows, then lifted into the uncertain-input predictive model so
// free simulation can feed predictive variances back alongside the means.
struct NarxConfig {
    int lag = 12;
    int train_split = 0;  // series index; targets before it form the training set
    KernelSpec kernel;
    PsiBackend backend;  // used by the lifted model, not by the exact-GP fit
    OptimizerConfig optimizer;
    double noise_init = 0.1;
    // When false the series is divided by the training sd but not centered.
    // An all-positive series with multiplicative growth needs the level kept:
    // a linear kernel passes through the origin, so centering leaves it no way
    // to express y_t = a * y_{t-L} with a > 1 during extrapolation.
    bool center = true;

    void validate(Eigen::Index series_len) const;
};

struct LagData {
    Eigen::MatrixXd x;  // (T - L) x L, row t-L = [y_{t-1}, ..., y_{t-L}]
    Eigen::VectorXd y;  // targets y_t
};

// Most-recent-first windows; row for target t uses indices t-1 down to t-L
// only, so later values never leak into earlier rows.
LagData build_lag_matrix(const Eigen::VectorXd& series, int lag);

struct NarxFit {
    NarxConfig config;
    KernelSpec kernel;  // optimized hyperparameters
    double noise_var = 0.0;
    double train_mean = 0.0;  // standardization statistics (training region only)
    double train_std = 1.0;
    Eigen::MatrixXd x;  // standardized training windows
    Eigen::VectorXd y;  // standardized training targets
    std::vector<IterRecord> trace;  // value column holds the log marginal likelihood
    bool converged = false;
    bool diverged = false;
};

// Maximizes the exact GP log marginal likelihood over kernel parameters and
// the noise variance on the training windows. The series is standardized with
// training statistics before fitting.
NarxFit fit_narx(const Eigen::VectorXd& series, const NarxConfig& cfg);

// Exact GP log marginal likelihood of y under k(X, X) + noise_var I.
double gp_log_marginal(const KernelSpec& kernel, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, double noise_var);

// Freezes the fitted hyperparameters into the sparse uncertain-input model:
// inducing inputs and variational means are the training windows, variational
// variances equal the optimized noise variance. Nothing is re-trained.
GplvmModel to_uncertain_model(const NarxFit& fit, const PsiBackend& backend);

struct ForecastStep {
    int t = 0;  // index into the source series
    double observed = 0.0;
    double mean = 0.0;  // original scale
    double var = 0.0;   // original scale
    std::int64_t evals = 0;
};

struct ForecastTrace {
    std::vector<ForecastStep> steps;
    int train_split = 0;
};

// Rolls the model forward from the start of the series: the first `lag`
// observations seed the window (variance = noise_var), every later input is
// the model's own predictive mean and variance. A non-finite prediction stops
// the loop and returns the partial trace. `variance_override`, when set,
// replaces every window variance (the delta limit uses a tiny positive
// value); means still come from the rollout.
ForecastTrace free_simulate(const GplvmModel& model, const Eigen::VectorXd& series,
                            const NarxConfig& cfg, int horizon,
                            std::optional<double> variance_override = std::nullopt);

// Mean-feedback baseline: the exact GP fitted by fit_narx rolled forward on
// its own means; predictive variances are reported but never fed back.
ForecastTrace free_simulate_narx(const NarxFit& fit, const Eigen::VectorXd& series, int horizon);

struct ForecastMetrics {
    double rmse = 0.0;
    double nlpd = 0.0;
    int n_points = 0;
};

// Metrics over trace rows with t >= from_t, on the original scale.
ForecastMetrics forecast_metrics(const ForecastTrace& trace, int from_t);

// CSV with header "t,observed,mean,var,evals", full round-trip precision.
std::string forecast_to_csv(const ForecastTrace& trace);

}  // namespace psilvm
