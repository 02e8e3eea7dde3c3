#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace psilvm {

// Smooth unconstrained minimization. The objective fills `grad` and returns
// the value; it may return a non-finite value to signal "this point is out of
// bounds" (failed factorization, overflow), which the line search treats as a
// too-long step and Adam treats as divergence.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

enum class OptimizerKind { Lbfgs, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Lbfgs;
    int max_iters = 200;
    double grad_tol = 1e-5;  // stop when the gradient infinity norm drops below
    int lbfgs_memory = 10;
    double adam_lr = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // "lbfgs" | "adam" | "adam(lr)"
    static OptimizerConfig parse(const std::string& text);
    std::string str() const;
};

struct IterRecord {
    int iter = 0;
    double value = 0.0;
    double grad_norm = 0.0;  // infinity norm
    double wall_time = 0.0;  // seconds since optimization start
};

struct OptimResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd grad;
    int iters = 0;
    bool converged = false;  // gradient tolerance reached
    bool diverged = false;   // objective went non-finite; x holds the last good state
    std::vector<IterRecord> trace;
};

// For L-BFGS the line search only accepts decreasing steps, so the recorded
// values are monotone non-increasing. Adam accepts whatever the step gives;
// if the objective turns non-finite the last finite iterate is returned with
// diverged = true instead of throwing, so callers can persist the trace.
OptimResult minimize(const Objective& f, const Eigen::VectorXd& x0, const OptimizerConfig& cfg);

}  // namespace psilvm
