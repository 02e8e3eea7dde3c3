#include "psilvm/optimize.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include "psilvm/errors.hpp"

namespace psilvm {

namespace {

using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Cubic minimizer of the interpolant matching (a, fa, ga) and (b, fb);
// falls back to bisection when the cubic is ill-conditioned or lands outside
// the safeguarded interior of [a, b].
double interp_step(double a, double fa, double ga, double b, double fb) {
    const double d = b - a;
    double t = 0.5;
    const double denom = fb - fa - ga * d;
    if (std::isfinite(denom) && std::abs(denom) > 1e-300) {
        const double q = -ga * d / (2.0 * denom);  // minimizer of the quadratic fit
        if (std::isfinite(q)) t = q;
    }
    const double lo = 0.1, hi = 0.9;
    if (!(t >= lo && t <= hi)) t = 0.5;
    return a + t * d;
}

struct LineEval {
    double f = std::numeric_limits<double>::quiet_NaN();
    double g = 0.0;  // directional derivative
};

class LineSearch {
public:
    LineSearch(const Objective& f, const VectorXd& x, const VectorXd& dir, double f0, double g0)
        : f_(f), x_(x), dir_(dir), f0_(f0), g0_(g0), xtrial_(x.size()), gtrial_(x.size()) {}

    LineEval eval(double alpha) {
        xtrial_ = x_ + alpha * dir_;
        LineEval e;
        e.f = f_(xtrial_, gtrial_);
        e.g = std::isfinite(e.f) ? gtrial_.dot(dir_) : 0.0;
        last_alpha_ = alpha;
        last_f_ = e.f;
        ++evals_;
        return e;
    }

    // Strong Wolfe conditions with c1 = 1e-4, c2 = 0.9 (bracket + zoom).
    // Returns the accepted step length, or 0 when no acceptable step exists.
    double run(double alpha_init) {
        const double c1 = 1e-4, c2 = 0.9;
        const double f0 = f0_, g0 = g0_;
        double a_prev = 0.0, f_prev = f0, g_prev = g0;
        double alpha = alpha_init;
        best_alpha_ = 0.0;
        best_f_ = f0;

        for (int it = 0; it < 20; ++it) {
            LineEval e = eval(alpha);
            if (!std::isfinite(e.f)) {
                // Stepped outside the region where the objective is defined:
                // shrink into the known-good bracket.
                return zoom(a_prev, f_prev, g_prev, alpha, e.f, c1, c2);
            }
            track_best(alpha, e.f);
            if (e.f > f0 + c1 * alpha * g0 || (it > 0 && e.f >= f_prev)) {
                return zoom(a_prev, f_prev, g_prev, alpha, e.f, c1, c2);
            }
            if (std::abs(e.g) <= -c2 * g0) return alpha;
            if (e.g >= 0.0) return zoom(alpha, e.f, e.g, a_prev, f_prev, c1, c2);
            a_prev = alpha;
            f_prev = e.f;
            g_prev = e.g;
            alpha = std::min(2.0 * alpha, 1e8);
        }
        return armijo_fallback(c1);
    }

    const VectorXd& last_x() const { return xtrial_; }
    const VectorXd& last_grad() const { return gtrial_; }
    double last_f() const { return last_f_; }
    int evals() const { return evals_; }

    // Make last_x/last_grad/last_f consistent with the accepted step; free
    // when the accepted step is the one just evaluated.
    double accept(double alpha) {
        if (alpha != last_alpha_) eval(alpha);
        return last_f_;
    }

private:
    void track_best(double alpha, double f) {
        if (std::isfinite(f) && f < best_f_) {
            best_f_ = f;
            best_alpha_ = alpha;
        }
    }

    double zoom(double lo, double flo, double glo, double hi, double fhi, double c1, double c2) {
        for (int it = 0; it < 30; ++it) {
            double alpha;
            if (std::isfinite(fhi)) {
                alpha = interp_step(lo, flo, glo, hi, fhi);
            } else {
                alpha = lo + 0.5 * (hi - lo);
            }
            if (!(std::abs(hi - lo) > 1e-16 * std::max(1.0, std::abs(lo)))) break;
            LineEval e = eval(alpha);
            if (!std::isfinite(e.f) || e.f > f0_ + c1 * alpha * g0_ || e.f >= flo) {
                hi = alpha;
                fhi = e.f;
                continue;
            }
            track_best(alpha, e.f);
            if (std::abs(e.g) <= -c2 * g0_) return alpha;
            if (e.g * (hi - lo) >= 0.0) {
                hi = lo;
                fhi = flo;
            }
            lo = alpha;
            flo = e.f;
            glo = e.g;
        }
        return armijo_fallback(c1);
    }

    // When the curvature condition is out of reach (flat valleys, noisy
    // curvature), fall back to the best strictly-decreasing point seen.
    double armijo_fallback(double c1) {
        if (best_alpha_ > 0.0 && best_f_ <= f0_ + c1 * best_alpha_ * g0_) return best_alpha_;
        if (best_alpha_ > 0.0 && best_f_ < f0_) return best_alpha_;
        return 0.0;
    }

    const Objective& f_;
    const VectorXd& x_;
    const VectorXd& dir_;
    double f0_, g0_;
    VectorXd xtrial_, gtrial_;
    double last_alpha_ = -1.0;
    double last_f_ = std::numeric_limits<double>::quiet_NaN();
    double best_alpha_ = 0.0;
    double best_f_ = 0.0;
    int evals_ = 0;
};

OptimResult minimize_lbfgs(const Objective& f, const VectorXd& x0, const OptimizerConfig& cfg) {
    const auto start = Clock::now();
    OptimResult res;
    res.x = x0;
    res.grad = VectorXd::Zero(x0.size());
    res.value = f(res.x, res.grad);
    if (!std::isfinite(res.value)) {
        res.diverged = true;
        return res;
    }
    res.trace.push_back({0, res.value, res.grad.lpNorm<Eigen::Infinity>(), seconds_since(start)});

    std::deque<VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;
    VectorXd x = x0, g = res.grad;
    double fx = res.value;

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        const double gnorm = g.lpNorm<Eigen::Infinity>();
        if (gnorm < cfg.grad_tol) {
            res.converged = true;
            break;
        }

        // Two-loop recursion for the quasi-Newton direction.
        VectorXd q = -g;
        std::vector<double> alpha_coef(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha_coef[static_cast<std::size_t>(i)] =
                rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
            q -= alpha_coef[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
        }
        if (!s_hist.empty()) {
            const VectorXd& s = s_hist.back();
            const VectorXd& y = y_hist.back();
            q *= s.dot(y) / y.squaredNorm();
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha_coef[i] - beta) * s_hist[i];
        }

        double dir_deriv = g.dot(q);
        if (!(dir_deriv < 0.0)) {
            // Degenerate curvature pairs; reset to steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            q = -g;
            dir_deriv = g.dot(q);
        }

        LineSearch ls(f, x, q, fx, dir_deriv);
        const double alpha0 = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1e-12, g.lpNorm<1>())) : 1.0;
        const double alpha = ls.run(alpha0);
        if (alpha <= 0.0) break;  // no decreasing step found; x is the best known point
        const double fnew = ls.accept(alpha);
        if (!std::isfinite(fnew)) break;

        const VectorXd xnew = ls.last_x();
        const VectorXd gnew = ls.last_grad();
        VectorXd s = xnew - x;
        VectorXd y = gnew - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > cfg.lbfgs_memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        x = xnew;
        g = gnew;
        fx = fnew;
        res.iters = iter;
        res.trace.push_back({iter, fx, g.lpNorm<Eigen::Infinity>(), seconds_since(start)});
    }

    res.x = x;
    res.grad = g;
    res.value = fx;
    if (!res.converged && res.iters < cfg.max_iters) {
        // Stopped because the line search could not find a decreasing step;
        // treat a small final gradient as convergence.
        res.converged = g.lpNorm<Eigen::Infinity>() < std::max(cfg.grad_tol, 1e-8);
    }
    return res;
}

OptimResult minimize_adam(const Objective& f, const VectorXd& x0, const OptimizerConfig& cfg) {
    const auto start = Clock::now();
    OptimResult res;
    res.x = x0;
    res.grad = VectorXd::Zero(x0.size());

    VectorXd x = x0;
    VectorXd m = VectorXd::Zero(x0.size());
    VectorXd v = VectorXd::Zero(x0.size());
    VectorXd g(x0.size());

    double last_good_f = std::numeric_limits<double>::quiet_NaN();
    for (int iter = 0; iter <= cfg.max_iters; ++iter) {
        const double fx = f(x, g);
        if (!std::isfinite(fx) || !g.allFinite()) {
            res.diverged = true;
            break;
        }
        last_good_f = fx;
        res.x = x;
        res.grad = g;
        res.value = fx;
        res.iters = iter;
        res.trace.push_back({iter, fx, g.lpNorm<Eigen::Infinity>(), seconds_since(start)});
        if (g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
            res.converged = true;
            break;
        }
        if (iter == cfg.max_iters) break;

        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.array().square().matrix();
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, iter + 1);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, iter + 1);
        x.array() -= cfg.adam_lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.adam_eps);
    }
    if (std::isnan(last_good_f) && res.trace.empty()) res.diverged = true;
    return res;
}

}  // namespace

OptimizerConfig OptimizerConfig::parse(const std::string& text) {
    OptimizerConfig cfg;
    if (text == "lbfgs") {
        cfg.kind = OptimizerKind::Lbfgs;
        return cfg;
    }
    if (text == "adam") {
        cfg.kind = OptimizerKind::Adam;
        return cfg;
    }
    if (text.rfind("adam(", 0) == 0 && text.back() == ')') {
        cfg.kind = OptimizerKind::Adam;
        const std::string inner = text.substr(5, text.size() - 6);
        std::size_t used = 0;
        double lr = 0.0;
        try {
            lr = std::stod(inner, &used);
        } catch (const std::exception&) {
            throw InvalidConfig("optimizer: bad learning rate in '" + text + "'");
        }
        if (used != inner.size() || !(lr > 0.0)) {
            throw InvalidConfig("optimizer: bad learning rate in '" + text + "'");
        }
        cfg.adam_lr = lr;
        return cfg;
    }
    throw InvalidConfig("optimizer: expected lbfgs | adam | adam(lr), got '" + text + "'");
}

std::string OptimizerConfig::str() const {
    if (kind == OptimizerKind::Lbfgs) return "lbfgs";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "adam(%g)", adam_lr);
    return buf;
}

OptimResult minimize(const Objective& f, const Eigen::VectorXd& x0, const OptimizerConfig& cfg) {
    if (x0.size() == 0) throw InvalidInput("minimize: empty parameter vector");
    if (!x0.allFinite()) throw InvalidInput("minimize: non-finite starting point");
    return cfg.kind == OptimizerKind::Lbfgs ? minimize_lbfgs(f, x0, cfg) : minimize_adam(f, x0, cfg);
}

}  // namespace psilvm
