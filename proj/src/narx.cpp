#include "psilvm/narx.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "psilvm/ad.hpp"
#include "psilvm/errors.hpp"
#include "psilvm/evalkit.hpp"
#include "psilvm/util.hpp"
#include "taped_chol.hpp"

namespace psilvm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TrainStats {
    double mean = 0.0;
    double sd = 1.0;
};

TrainStats train_stats(const VectorXd& series, int split, bool center) {
    const auto head = series.head(split);
    TrainStats s;
    const double mean = head.mean();
    s.sd = std::sqrt((head.array() - mean).square().sum() / split);
    if (!(s.sd > 1e-12)) {
        throw DegenerateData("narx: training region of the series is constant");
    }
    s.mean = center ? mean : 0.0;
    return s;
}

// Exact GP evidence of y under k(X,X) + noise I. Returns NaN instead of
// throwing when asked (the optimizer treats NaN as a too-far step).
double gp_loglik_double(const KernelSpec& kernel, const double* params, const RowMat& x,
                        const VectorXd& y, double noise_var, bool nan_on_failure) {
    const int n = static_cast<int>(x.rows());
    const PreparedKernel<double> pk = prepare_kernel(kernel, params);
    MatrixXd k(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            k(i, j) = eval_prepared(pk, x.row(i).data(), x.row(j).data());
            k(j, i) = k(i, j);
        }
    }
    k.diagonal().array() += noise_var;
    const Eigen::LLT<MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) {
        if (nan_on_failure) return std::numeric_limits<double>::quiet_NaN();
        throw NotPositiveDefinite("gp_log_marginal: covariance factorization failed");
    }
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * (n * std::log(2.0 * M_PI) + logdet + y.dot(llt.solve(y)));
}

// Same quantity on the tape, differentiating kernel parameters and the log
// noise variance. x rows must be contiguous (row-major copies are made).
double gp_loglik_grad(const KernelSpec& kernel, const RowMat& x, const VectorXd& y,
                      const VectorXd& p, VectorXd& grad) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    const int nkp = kernel.param_count();

    ad::Tape tape;
    std::vector<ad::Var> kp(static_cast<std::size_t>(nkp));
    for (int i = 0; i < nkp; ++i) kp[static_cast<std::size_t>(i)] = ad::Var(tape, p[i]);
    ad::Var lsn(tape, p[nkp]);

    std::vector<ad::Var> xv(static_cast<std::size_t>(n * d));
    for (int i = 0; i < n; ++i) {
        for (int q = 0; q < d; ++q) xv[static_cast<std::size_t>(i * d + q)] = ad::Var(tape, x(i, q));
    }

    const PreparedKernel<ad::Var> pk = prepare_kernel(kernel, kp.data());
    std::vector<ad::Var> k(static_cast<std::size_t>(n * n));
    const ad::Var noise = exp(lsn);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            k[static_cast<std::size_t>(i * n + j)] =
                eval_prepared(pk, &xv[static_cast<std::size_t>(i * d)], &xv[static_cast<std::size_t>(j * d)]);
        }
        k[static_cast<std::size_t>(i * n + i)] += noise;
    }

    std::vector<ad::Var> l = k;
    detail::chol_lower(l, n);
    ad::Var logdet = log(l[0]);
    for (int i = 1; i < n; ++i) logdet += log(l[static_cast<std::size_t>(i * n + i)]);

    std::vector<ad::Var> alpha(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) alpha[static_cast<std::size_t>(i)] = ad::Var(tape, y[i]);
    detail::solve_lower_inplace(l, n, alpha, 1);
    ad::Var quad = alpha[0] * alpha[0];
    for (int i = 1; i < n; ++i) {
        quad += alpha[static_cast<std::size_t>(i)] * alpha[static_cast<std::size_t>(i)];
    }

    const ad::Var loglik = logdet * (-1.0) - 0.5 * quad - 0.5 * n * std::log(2.0 * M_PI);
    tape.backward({{loglik.id, 1.0}});

    grad.resize(nkp + 1);
    for (int i = 0; i < nkp; ++i) grad[i] = tape.adjoint(kp[static_cast<std::size_t>(i)].id);
    grad[nkp] = tape.adjoint(lsn.id);
    return loglik.v;
}

}  // namespace

void NarxConfig::validate(Eigen::Index series_len) const {
    if (lag < 1) throw InvalidConfig("narx: lag must be at least 1");
    if (train_split <= lag) throw InvalidConfig("narx: train_split must exceed the lag");
    if (static_cast<Eigen::Index>(train_split) > series_len) {
        throw InvalidConfig("narx: train_split lies beyond the end of the series");
    }
    if (kernel.input_dim() != lag) {
        throw DimensionMismatch("narx: kernel input dimension " + std::to_string(kernel.input_dim()) +
                                " does not match lag " + std::to_string(lag));
    }
    if (!(noise_init > 0.0) || !std::isfinite(noise_init)) {
        throw InvalidConfig("narx: noise_init must be positive and finite");
    }
}

LagData build_lag_matrix(const Eigen::VectorXd& series, int lag) {
    if (lag < 1) throw InvalidConfig("build_lag_matrix: lag must be at least 1");
    const Eigen::Index t_total = series.size();
    if (t_total <= lag) {
        throw SeriesTooShort("build_lag_matrix: series of length " + std::to_string(t_total) +
                             " cannot produce lag-" + std::to_string(lag) + " windows");
    }
    LagData out;
    const Eigen::Index rows = t_total - lag;
    out.x.resize(rows, lag);
    out.y.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index t = lag + r;
        for (int k = 0; k < lag; ++k) out.x(r, k) = series[t - 1 - k];
        out.y[r] = series[t];
    }
    return out;
}

double gp_log_marginal(const KernelSpec& kernel, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, double noise_var) {
    if (x.rows() != y.size()) throw DimensionMismatch("gp_log_marginal: rows and targets differ");
    if (x.cols() != kernel.input_dim()) {
        throw DimensionMismatch("gp_log_marginal: kernel input dimension mismatch");
    }
    if (!(noise_var > 0.0)) throw InvalidInput("gp_log_marginal: noise variance must be positive");
    const VectorXd params = kernel.pack();
    const RowMat xr = x;
    return gp_loglik_double(kernel, params.data(), xr, y, noise_var, false);
}

NarxFit fit_narx(const Eigen::VectorXd& series, const NarxConfig& cfg) {
    cfg.validate(series.size());
    const TrainStats stats = train_stats(series, cfg.train_split, cfg.center);
    const VectorXd train = (series.head(cfg.train_split).array() - stats.mean) / stats.sd;
    const LagData lag = build_lag_matrix(train, cfg.lag);

    const int nkp = cfg.kernel.param_count();
    VectorXd p0(nkp + 1);
    p0.head(nkp) = cfg.kernel.pack();
    p0[nkp] = std::log(cfg.noise_init);

    // Row-major copy so kernel evaluation can walk raw row pointers.
    const RowMat xr = lag.x;

    const Objective objective = [&](const VectorXd& p, VectorXd& grad) {
        const double probe =
            gp_loglik_double(cfg.kernel, p.data(), xr, lag.y, std::exp(p[nkp]), true);
        if (!std::isfinite(probe)) {
            grad.setZero(p.size());
            return std::numeric_limits<double>::quiet_NaN();
        }
        const double value = gp_loglik_grad(cfg.kernel, xr, lag.y, p, grad);
        grad = -grad;
        return -value;
    };

    const OptimResult r = minimize(objective, p0, cfg.optimizer);

    NarxFit fit;
    fit.config = cfg;
    fit.kernel = cfg.kernel;
    fit.kernel.set_params(r.x.head(nkp));
    fit.noise_var = std::exp(r.x[nkp]);
    fit.train_mean = stats.mean;
    fit.train_std = stats.sd;
    fit.x = lag.x;
    fit.y = lag.y;
    fit.trace = r.trace;
    for (IterRecord& rec : fit.trace) rec.value = -rec.value;
    fit.converged = r.converged;
    fit.diverged = r.diverged;
    if (fit.diverged) log_warn("fit_narx: optimizer diverged; keeping the last good state");
    return fit;
}

GplvmModel to_uncertain_model(const NarxFit& fit, const PsiBackend& backend) {
    GplvmModel m;
    m.kernel = fit.kernel;
    m.noise_var = fit.noise_var;
    m.backend = backend;
    m.latent.mean = fit.x;
    m.latent.var = MatrixXd::Constant(fit.x.rows(), fit.x.cols(), fit.noise_var);
    m.latent.inducing = fit.x;
    m.Y = fit.y;
    m.validate();
    return m;
}

ForecastTrace free_simulate(const GplvmModel& model, const Eigen::VectorXd& series,
                            const NarxConfig& cfg, int horizon,
                            std::optional<double> variance_override) {
    cfg.validate(series.size());
    if (model.latent.dim() != cfg.lag) {
        throw DimensionMismatch("free_simulate: model latent dimension does not match the lag");
    }
    if (horizon < 1) throw InvalidInput("free_simulate: horizon must be at least 1");
    if (static_cast<Eigen::Index>(cfg.lag) + horizon > series.size()) {
        throw InvalidInput("free_simulate: horizon exceeds the available timestamps");
    }
    if (variance_override && !(*variance_override > 0.0)) {
        throw InvalidInput("free_simulate: variance override must be positive");
    }

    const TrainStats stats = train_stats(series, cfg.train_split, cfg.center);
    const VectorXd s = (series.array() - stats.mean) / stats.sd;

    VectorXd wmean(cfg.lag), wvar(cfg.lag);
    for (int k = 0; k < cfg.lag; ++k) {
        wmean[k] = s[cfg.lag - 1 - k];
        wvar[k] = variance_override.value_or(model.noise_var);
    }

    const GplvmPredictor pred(model);
    ForecastTrace trace;
    trace.train_split = cfg.train_split;
    trace.steps.reserve(static_cast<std::size_t>(horizon));
    for (int step = 0; step < horizon; ++step) {
        const int t = cfg.lag + step;
        DiagGaussian q;
        q.mean = wmean;
        q.var = wvar;
        std::int64_t evals = 0;
        const PredictiveDist d = pred.uncertain(q, &evals);
        const double sm = d.mean[0];
        const double sv = d.var[0];
        if (!std::isfinite(sm) || !std::isfinite(sv)) {
            log_warn("free_simulate: non-finite prediction at t=" + std::to_string(t) +
                     "; returning the partial trace");
            break;
        }
        ForecastStep row;
        row.t = t;
        row.observed = series[t];
        row.mean = stats.mean + stats.sd * sm;
        row.var = stats.sd * stats.sd * sv;
        row.evals = evals;
        trace.steps.push_back(row);

        for (int k = cfg.lag - 1; k >= 1; --k) {
            wmean[k] = wmean[k - 1];
            wvar[k] = wvar[k - 1];
        }
        wmean[0] = sm;
        wvar[0] = variance_override.value_or(sv);
    }
    return trace;
}

ForecastTrace free_simulate_narx(const NarxFit& fit, const Eigen::VectorXd& series, int horizon) {
    const NarxConfig& cfg = fit.config;
    cfg.validate(series.size());
    if (horizon < 1) throw InvalidInput("free_simulate_narx: horizon must be at least 1");
    if (static_cast<Eigen::Index>(cfg.lag) + horizon > series.size()) {
        throw InvalidInput("free_simulate_narx: horizon exceeds the available timestamps");
    }

    const TrainStats stats = train_stats(series, cfg.train_split, cfg.center);
    const VectorXd s = (series.array() - stats.mean) / stats.sd;

    const int n = static_cast<int>(fit.x.rows());
    MatrixXd kf = gram(fit.kernel, fit.x, fit.x);
    kf.diagonal().array() += fit.noise_var;
    const Eigen::LLT<MatrixXd> llt(kf);
    if (llt.info() != Eigen::Success) {
        throw NotPositiveDefinite("free_simulate_narx: training covariance factorization failed");
    }
    const VectorXd alpha = llt.solve(fit.y);

    VectorXd w(cfg.lag);
    for (int k = 0; k < cfg.lag; ++k) w[k] = s[cfg.lag - 1 - k];

    ForecastTrace trace;
    trace.train_split = cfg.train_split;
    trace.steps.reserve(static_cast<std::size_t>(horizon));
    for (int step = 0; step < horizon; ++step) {
        const int t = cfg.lag + step;
        const MatrixXd kvec = gram(fit.kernel, fit.x, w.transpose());  // n x 1
        const double sm = kvec.col(0).dot(alpha);
        const double kss = kernel_eval(fit.kernel, w, w);
        const double sv =
            std::max(kss - kvec.col(0).dot(llt.solve(kvec.col(0))), 0.0) + fit.noise_var;
        if (!std::isfinite(sm) || !std::isfinite(sv)) {
            log_warn("free_simulate_narx: non-finite prediction at t=" + std::to_string(t) +
                     "; returning the partial trace");
            break;
        }
        ForecastStep row;
        row.t = t;
        row.observed = series[t];
        row.mean = stats.mean + stats.sd * sm;
        row.var = stats.sd * stats.sd * sv;
        row.evals = 0;
        trace.steps.push_back(row);

        for (int k = cfg.lag - 1; k >= 1; --k) w[k] = w[k - 1];
        w[0] = sm;
    }
    return trace;
}

ForecastMetrics forecast_metrics(const ForecastTrace& trace, int from_t) {
    std::vector<double> y, mu, var;
    for (const ForecastStep& s : trace.steps) {
        if (s.t < from_t) continue;
        y.push_back(s.observed);
        mu.push_back(s.mean);
        var.push_back(s.var);
    }
    if (y.empty()) throw InvalidInput("forecast_metrics: no forecast rows at or after the given index");
    const Eigen::Map<const VectorXd> ym(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::Map<const VectorXd> mm(mu.data(), static_cast<Eigen::Index>(mu.size()));
    const Eigen::Map<const VectorXd> vm(var.data(), static_cast<Eigen::Index>(var.size()));
    ForecastMetrics out;
    out.rmse = rmse(ym, mm);
    out.nlpd = nlpd(ym, mm, vm);
    out.n_points = static_cast<int>(y.size());
    return out;
}

std::string forecast_to_csv(const ForecastTrace& trace) {
    std::ostringstream os;
    os << "t,observed,mean,var,evals\n";
    for (const ForecastStep& s : trace.steps) {
        os << s.t << ',' << format_double(s.observed) << ',' << format_double(s.mean) << ','
           << format_double(s.var) << ',' << s.evals << '\n';
    }
    return os.str();
}

}  // namespace psilvm
