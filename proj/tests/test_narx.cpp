#include "psilvm/narx.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "psilvm/errors.hpp"
#include "psilvm/evalkit.hpp"
#include "psilvm/util.hpp"

using namespace psilvm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd smooth_series(int len, std::uint64_t seed, double noise_sd) {
    VectorXd s(len);
    for (int t = 0; t < len; ++t) {
        s[t] = std::sin(2.0 * M_PI * t / 12.0) + 0.04 * t + noise_sd * counter_normal(seed, static_cast<std::uint64_t>(t));
    }
    return s;
}

NarxConfig make_config(int lag, int split, const KernelSpec& kernel, const std::string& backend) {
    NarxConfig cfg;
    cfg.lag = lag;
    cfg.train_split = split;
    cfg.kernel = kernel;
    cfg.backend = PsiBackend::parse(backend);
    return cfg;
}

// A hand-assembled fit (no optimizer run) for tests that only exercise the
// lifted model and the simulation loop.
NarxFit direct_fit(const VectorXd& series, const NarxConfig& cfg, double noise_var) {
    NarxFit fit;
    fit.config = cfg;
    fit.kernel = cfg.kernel;
    fit.noise_var = noise_var;
    const auto head = series.head(cfg.train_split);
    fit.train_mean = head.mean();
    fit.train_std = std::sqrt((head.array() - fit.train_mean).square().sum() / cfg.train_split);
    const VectorXd train = (head.array() - fit.train_mean) / fit.train_std;
    const LagData lag = build_lag_matrix(train, cfg.lag);
    fit.x = lag.x;
    fit.y = lag.y;
    fit.converged = true;
    return fit;
}

}  // namespace

TEST_CASE("lag matrix follows the most-recent-first convention") {
    VectorXd s(4);
    s << 1.0, 2.0, 3.0, 4.0;
    const LagData d = build_lag_matrix(s, 2);
    REQUIRE(d.x.rows() == 2);
    CHECK(d.x(0, 0) == 2.0);
    CHECK(d.x(0, 1) == 1.0);
    CHECK(d.x(1, 0) == 3.0);
    CHECK(d.x(1, 1) == 2.0);
    CHECK(d.y[0] == 3.0);
    CHECK(d.y[1] == 4.0);
}

TEST_CASE("lag matrix edge cases") {
    const VectorXd flat = VectorXd::Constant(6, 3.5);
    const LagData d = build_lag_matrix(flat, 3);
    for (int r = 1; r < d.x.rows(); ++r) CHECK(d.x.row(r) == d.x.row(0));

    VectorXd tiny(3);
    tiny << 1.0, 2.0, 3.0;
    CHECK_THROWS_AS(build_lag_matrix(tiny, 3), SeriesTooShort);
    CHECK_THROWS_AS(build_lag_matrix(tiny, 0), InvalidConfig);

    const VectorXd year = smooth_series(144, 1, 0.0);
    CHECK(build_lag_matrix(year, 12).x.rows() == 132);
    CHECK(build_lag_matrix(year.head(48), 12).x.rows() == 36);
}

TEST_CASE("config validation rejects inconsistent settings") {
    const VectorXd s = smooth_series(40, 2, 0.05);
    NarxConfig cfg = make_config(4, 30, KernelSpec::rbf(4), "ut");
    CHECK_NOTHROW(cfg.validate(s.size()));
    cfg.lag = 0;
    CHECK_THROWS_AS(cfg.validate(s.size()), InvalidConfig);
    cfg = make_config(4, 4, KernelSpec::rbf(4), "ut");
    CHECK_THROWS_AS(cfg.validate(s.size()), InvalidConfig);
    cfg = make_config(4, 50, KernelSpec::rbf(4), "ut");
    CHECK_THROWS_AS(cfg.validate(s.size()), InvalidConfig);
    cfg = make_config(4, 30, KernelSpec::rbf(3), "ut");
    CHECK_THROWS_AS(cfg.validate(s.size()), DimensionMismatch);
    cfg = make_config(4, 30, KernelSpec::rbf(4), "ut");
    cfg.noise_init = 0.0;
    CHECK_THROWS_AS(cfg.validate(s.size()), InvalidConfig);
}

TEST_CASE("gp log marginal matches a dense transcription and validates input") {
    const VectorXd s = smooth_series(20, 3, 0.1);
    const LagData d = build_lag_matrix(s, 2);
    const KernelSpec kernel = KernelSpec::rbf(2);
    const double noise = 0.2;
    const double got = gp_log_marginal(kernel, d.x, d.y, noise);

    const int n = static_cast<int>(d.x.rows());
    const MatrixXd k = gram(kernel, d.x, d.x) + noise * MatrixXd::Identity(n, n);
    const Eigen::LLT<MatrixXd> llt(k);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double want = -0.5 * (n * std::log(2.0 * M_PI) + logdet + d.y.dot(llt.solve(d.y)));
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(gp_log_marginal(kernel, d.x, d.y.head(3), noise), DimensionMismatch);
    CHECK_THROWS_AS(gp_log_marginal(KernelSpec::rbf(3), d.x, d.y, noise), DimensionMismatch);
    CHECK_THROWS_AS(gp_log_marginal(kernel, d.x, d.y, 0.0), InvalidInput);
}

TEST_CASE("narx fitting is deterministic and improves the evidence") {
    const VectorXd s = smooth_series(45, 4, 0.1);
    NarxConfig cfg = make_config(3, 36, KernelSpec::rbf(3), "ut");
    cfg.optimizer.max_iters = 40;
    const NarxFit a = fit_narx(s, cfg);
    const NarxFit b = fit_narx(s, cfg);
    CHECK(a.kernel.pack() == b.kernel.pack());
    CHECK(a.noise_var == b.noise_var);
    CHECK(a.trace.size() == b.trace.size());
    REQUIRE(a.trace.size() >= 2);
    CHECK_FALSE(a.diverged);
    // Trace holds the log marginal likelihood, ascending under lbfgs.
    for (std::size_t i = 1; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].value >= a.trace[i - 1].value - 1e-14);
    }
    CHECK(a.trace.back().value ==
          doctest::Approx(gp_log_marginal(a.kernel, a.x, a.y, a.noise_var)).epsilon(1e-10));
}

TEST_CASE("white noise is explained by the noise term") {
    // Short lag and a long series keep the evidence surface informative: with
    // wide windows the gram is nearly diagonal at unit lengthscales and the
    // signal/noise split stops being identifiable.
    VectorXd s(200);
    for (int t = 0; t < 200; ++t) s[t] = counter_normal(0, static_cast<std::uint64_t>(t));
    NarxConfig cfg = make_config(2, 160, KernelSpec::rbf(2), "ut");
    cfg.optimizer.max_iters = 250;
    cfg.optimizer.grad_tol = 1e-7;
    cfg.noise_init = 0.5;
    const NarxFit fit = fit_narx(s, cfg);
    const double signal_var = std::exp(fit.kernel.pack()[0]);
    INFO("params ", fit.kernel.pack().transpose(), " noise ", fit.noise_var, " iters ", fit.trace.size());
    CHECK(signal_var / fit.noise_var < 0.1);
}

TEST_CASE("a noiseless linear trend is interpolated by the linear kernel") {
    VectorXd s(40);
    for (int t = 0; t < 40; ++t) s[t] = 2.0 + 0.1 * t;
    NarxConfig cfg = make_config(3, 40, KernelSpec::linear(3), "ut");
    cfg.optimizer.max_iters = 300;
    const NarxFit fit = fit_narx(s, cfg);
    // In-sample posterior mean of the exact GP on the training windows.
    const int n = static_cast<int>(fit.x.rows());
    const MatrixXd kf = gram(fit.kernel, fit.x, fit.x);
    const MatrixXd ky = kf + fit.noise_var * MatrixXd::Identity(n, n);
    const VectorXd mean_std = kf * ky.llt().solve(fit.y);
    const double raw_rmse = rmse(fit.train_std * fit.y, fit.train_std * mean_std);
    CHECK(raw_rmse < 1e-3);
}

TEST_CASE("the lifted model mirrors the training windows") {
    const VectorXd s = smooth_series(50, 5, 0.1);
    const NarxConfig cfg = make_config(4, 40, KernelSpec::rbf(4), "ut");
    const NarxFit fit = direct_fit(s, cfg, 0.09);
    const GplvmModel m = to_uncertain_model(fit, PsiBackend::parse("gh:2"));
    CHECK(m.latent.num_inducing() == 36);
    CHECK(m.latent.inducing == fit.x);
    CHECK(m.latent.mean == fit.x);
    CHECK(m.latent.var.minCoeff() == fit.noise_var);
    CHECK(m.latent.var.maxCoeff() == fit.noise_var);
    CHECK(m.Y.col(0) == fit.y);
    CHECK(m.noise_var == fit.noise_var);
    CHECK(m.backend == PsiBackend::parse("gh:2"));
}

TEST_CASE("with vanishing variational variance the lifted model predicts like the exact gp") {
    const VectorXd s = smooth_series(40, 6, 0.15);
    const NarxConfig cfg = make_config(3, 32, KernelSpec::rbf(3), "ut");
    const NarxFit fit = direct_fit(s, cfg, 0.25);
    GplvmModel m = to_uncertain_model(fit, PsiBackend::parse("ut"));
    m.latent.var.setConstant(1e-14);
    const GplvmPredictor pred(m);

    const int n = static_cast<int>(fit.x.rows());
    const MatrixXd ky = gram(fit.kernel, fit.x, fit.x) + fit.noise_var * MatrixXd::Identity(n, n);
    const Eigen::LLT<MatrixXd> llt(ky);
    for (int probe = 0; probe < 3; ++probe) {
        VectorXd w(3);
        for (int k = 0; k < 3; ++k) w[k] = 0.3 * counter_normal(60 + static_cast<std::uint64_t>(probe), static_cast<std::uint64_t>(k));
        const MatrixXd kvec = gram(fit.kernel, fit.x, w.transpose());
        const double mean_gp = kvec.col(0).dot(llt.solve(fit.y));
        const double var_gp = kernel_eval(fit.kernel, w, w) - kvec.col(0).dot(llt.solve(kvec.col(0))) + fit.noise_var;
        const PredictiveDist d = pred.certain(w);
        CHECK(std::abs(d.mean[0] - mean_gp) < 1e-4);
        CHECK(std::abs(d.var[0] - var_gp) < 1e-4);
    }
}

TEST_CASE("a lag-twelve window costs the advertised point budgets") {
    const VectorXd s = smooth_series(20, 7, 0.05);
    const NarxConfig cfg = make_config(12, 16, KernelSpec::rbf(12), "ut");
    const NarxFit fit = direct_fit(s, cfg, 0.1);

    const GplvmModel ut_model = to_uncertain_model(fit, PsiBackend::parse("ut"));
    const ForecastTrace ut_trace = free_simulate(ut_model, s, cfg, 2);
    REQUIRE(ut_trace.steps.size() == 2);
    CHECK(ut_trace.steps[0].evals == 24);

    const GplvmModel gh_model = to_uncertain_model(fit, PsiBackend::parse("gh:2"));
    NarxConfig gh_cfg = cfg;
    gh_cfg.backend = PsiBackend::parse("gh:2");
    const ForecastTrace gh_trace = free_simulate(gh_model, s, gh_cfg, 1);
    REQUIRE(gh_trace.steps.size() == 1);
    CHECK(gh_trace.steps[0].evals == 4096);
}

TEST_CASE("free simulation aligns with the source series") {
    const VectorXd s = smooth_series(30, 8, 0.05);
    const NarxConfig cfg = make_config(4, 20, KernelSpec::rbf(4), "ut");
    const NarxFit fit = direct_fit(s, cfg, 0.1);
    const GplvmModel m = to_uncertain_model(fit, cfg.backend);
    const ForecastTrace trace = free_simulate(m, s, cfg, 26);
    REQUIRE(trace.steps.size() == 26);
    CHECK(trace.train_split == 20);
    for (int i = 0; i < 26; ++i) {
        CHECK(trace.steps[static_cast<std::size_t>(i)].t == 4 + i);
        CHECK(trace.steps[static_cast<std::size_t>(i)].observed == s[4 + i]);
        CHECK(trace.steps[static_cast<std::size_t>(i)].var > 0.0);
    }
    CHECK_THROWS_AS(free_simulate(m, s, cfg, 27), InvalidInput);
    CHECK_THROWS_AS(free_simulate(m, s, cfg, 0), InvalidInput);
    CHECK_THROWS_AS(free_simulate(m, s, cfg, 5, 0.0), InvalidInput);
}

TEST_CASE("the delta limit reduces free simulation to the mean-only recursion") {
    const VectorXd s = smooth_series(60, 10, 0.1);
    const NarxConfig cfg = make_config(4, 48, KernelSpec::rbf(4), "ut");
    const NarxFit fit = direct_fit(s, cfg, 0.09);
    const GplvmModel m = to_uncertain_model(fit, cfg.backend);
    const ForecastTrace trace = free_simulate(m, s, cfg, 20, 1e-16);

    // Hand-rolled certain-prediction recursion on the standardized scale.
    const GplvmPredictor pred(m);
    const VectorXd std_series = (s.array() - fit.train_mean) / fit.train_std;
    VectorXd w(4);
    for (int k = 0; k < 4; ++k) w[k] = std_series[3 - k];
    for (int step = 0; step < 20; ++step) {
        const PredictiveDist d = pred.certain(w);
        const double raw = fit.train_mean + fit.train_std * d.mean[0];
        CHECK(std::abs(raw - trace.steps[static_cast<std::size_t>(step)].mean) < 1e-8);
        for (int k = 3; k >= 1; --k) w[k] = w[k - 1];
        w[0] = d.mean[0];
    }
}

TEST_CASE("free simulation never reads observations after the seed window") {
    const VectorXd s = smooth_series(50, 11, 0.1);
    const NarxConfig cfg = make_config(4, 40, KernelSpec::rbf(4), "ut");
    NarxConfig fit_cfg = cfg;
    fit_cfg.optimizer.max_iters = 20;
    const NarxFit fit_a = fit_narx(s, fit_cfg);
    VectorXd tampered = s;
    tampered[44] += 50.0;  // inside the test region
    const NarxFit fit_b = fit_narx(tampered, fit_cfg);
    CHECK(fit_a.kernel.pack() == fit_b.kernel.pack());
    CHECK(fit_a.noise_var == fit_b.noise_var);

    const GplvmModel m = to_uncertain_model(fit_a, cfg.backend);
    const ForecastTrace ta = free_simulate(m, s, cfg, 46);
    const ForecastTrace tb = free_simulate(m, tampered, cfg, 46);
    REQUIRE(ta.steps.size() == tb.steps.size());
    for (std::size_t i = 0; i < ta.steps.size(); ++i) {
        CHECK(ta.steps[i].mean == tb.steps[i].mean);
        CHECK(ta.steps[i].var == tb.steps[i].var);
    }
    CHECK(tb.steps[40].observed == doctest::Approx(ta.steps[40].observed + 50.0));
}

TEST_CASE("predictive variance does not decrease while the window fills with forecasts") {
    const VectorXd s = smooth_series(40, 12, 0.3);
    const NarxConfig cfg = make_config(4, 32, KernelSpec::rbf(4), "ut");
    NarxFit fit = direct_fit(s, cfg, 0.8);
    // Shrink the signal variance to the bottom of the double range so the
    // model degenerates to the noise process and the property holds with
    // roundoff-level slack.
    VectorXd kp = fit.kernel.pack();
    kp[0] = -35.0;
    fit.kernel.set_params(kp);
    const GplvmModel m = to_uncertain_model(fit, cfg.backend);
    const ForecastTrace trace = free_simulate(m, s, cfg, 8);
    REQUIRE(trace.steps.size() == 8);
    for (int i = 1; i < 4; ++i) {
        CHECK(trace.steps[static_cast<std::size_t>(i)].var >=
              trace.steps[static_cast<std::size_t>(i - 1)].var - 1e-12);
    }
    const double floor = fit.train_std * fit.train_std * fit.noise_var;
    for (const ForecastStep& step : trace.steps) {
        CHECK(step.var >= floor * (1.0 - 1e-12));
    }
}

TEST_CASE("unscented and order-two quadrature rollouts stay close on a smooth series") {
    const VectorXd s = smooth_series(60, 13, 0.1);
    const NarxConfig cfg = make_config(4, 48, KernelSpec::rbf(4), "ut");
    NarxFit fit = direct_fit(s, cfg, 0.05);
    // Long lengthscales keep the rollout well damped; with unit scales the
    // two quadratures decouple chaotically after a few dozen steps and the
    // comparison stops measuring quadrature error.
    VectorXd kp = fit.kernel.pack();
    kp.tail(4).setConstant(std::log(2.0));
    fit.kernel.set_params(kp);
    const GplvmModel ut_model = to_uncertain_model(fit, PsiBackend::parse("ut"));
    const GplvmModel gh_model = to_uncertain_model(fit, PsiBackend::parse("gh:2"));
    NarxConfig gh_cfg = cfg;
    gh_cfg.backend = PsiBackend::parse("gh:2");
    const ForecastTrace a = free_simulate(ut_model, s, cfg, 40);
    const ForecastTrace b = free_simulate(gh_model, s, gh_cfg, 40);
    REQUIRE(a.steps.size() == b.steps.size());
    const double sd = std::sqrt((s.array() - s.mean()).square().mean());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(std::abs(a.steps[i].mean - b.steps[i].mean) < 0.05 * sd);
    }
}

TEST_CASE("the mean-feedback baseline matches a hand-rolled exact gp recursion") {
    const VectorXd s = smooth_series(50, 14, 0.1);
    const NarxConfig cfg = make_config(3, 40, KernelSpec::rbf(3), "ut");
    const NarxFit fit = direct_fit(s, cfg, 0.1);
    const ForecastTrace trace = free_simulate_narx(fit, s, 30);
    REQUIRE(trace.steps.size() == 30);

    const int n = static_cast<int>(fit.x.rows());
    const MatrixXd ky = gram(fit.kernel, fit.x, fit.x) + fit.noise_var * MatrixXd::Identity(n, n);
    const Eigen::LLT<MatrixXd> llt(ky);
    const VectorXd alpha = llt.solve(fit.y);
    const VectorXd std_series = (s.array() - fit.train_mean) / fit.train_std;
    VectorXd w(3);
    for (int k = 0; k < 3; ++k) w[k] = std_series[2 - k];
    for (int step = 0; step < 30; ++step) {
        const MatrixXd kvec = gram(fit.kernel, fit.x, w.transpose());
        const double mean = kvec.col(0).dot(alpha);
        const double raw = fit.train_mean + fit.train_std * mean;
        CHECK(trace.steps[static_cast<std::size_t>(step)].mean == doctest::Approx(raw).epsilon(1e-12));
        CHECK(trace.steps[static_cast<std::size_t>(step)].evals == 0);
        for (int k = 2; k >= 1; --k) w[k] = w[k - 1];
        w[0] = mean;
    }
}

TEST_CASE("forecast metrics slice the test region and the csv is well formed") {
    ForecastTrace trace;
    trace.train_split = 12;
    for (int i = 0; i < 4; ++i) {
        ForecastStep step;
        step.t = 10 + i;
        step.observed = 1.0 + i;
        step.mean = 1.5 + i;
        step.var = 0.25;
        step.evals = 24;
        trace.steps.push_back(step);
    }
    const ForecastMetrics m = forecast_metrics(trace, 12);
    CHECK(m.n_points == 2);
    CHECK(m.rmse == doctest::Approx(0.5));
    VectorXd y(2), mu(2), var(2);
    y << 3.0, 4.0;
    mu << 3.5, 4.5;
    var << 0.25, 0.25;
    CHECK(m.nlpd == doctest::Approx(nlpd(y, mu, var)));
    CHECK_THROWS_AS(forecast_metrics(trace, 99), InvalidInput);

    const std::string csv = forecast_to_csv(trace);
    CHECK(csv.rfind("t,observed,mean,var,evals\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.find("\n10,") != std::string::npos);
}
