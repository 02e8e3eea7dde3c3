// psilvm command line: benchmark, diagnostics, dimensionality reduction,
// free simulation, and prediction from saved models. Data goes to files in a
// per-run directory; diagnostics go to stderr; exit codes are 0 (success),
// 2 (configuration or input error), 3 (numerical failure).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psilvm/dataio.hpp"
#include "psilvm/errors.hpp"
#include "psilvm/evalkit.hpp"
#include "psilvm/gplvm.hpp"
#include "psilvm/narx.hpp"
#include "psilvm/util.hpp"

namespace {

using namespace psilvm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_root = "runs";
    std::string stamp;  // fixed run-directory stamp, for reproducible layouts
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "key = value config file");
    cmd->add_option("-s,--set", args.sets, "override a config key (key=value, repeatable)");
    cmd->add_option("--seed", args.seed, "override the config seed")
        ->each([&args](const std::string&) { args.seed_given = true; });
    cmd->add_option("-o,--out", args.out_root, "root directory for run output")
        ->capture_default_str();
    cmd->add_option("--stamp", args.stamp, "fixed run-directory timestamp (default: now)");
}

std::string config_key_help() {
    std::string text = "\nConfig keys (config file or --set):\n";
    static const std::vector<std::pair<std::string, std::string>> defaults = {
        {"dataset.path", "(required where a dataset is read)"},
        {"dataset.label", "label"},
        {"kernel.spec", "(required for model commands), e.g. sum(rbf(5),linear(5))"},
        {"scheme", "ut   [analytic | ut | gh:H | mc:P[:seed]]"},
        {"latent.q", "5"},
        {"inducing.m", "20"},
        {"init.latent_var", "0.1"},
        {"optimizer", "lbfgs   [lbfgs | adam | adam(lr)]"},
        {"optimizer.iters", "200"},
        {"seed", "0"},
        {"horizon", "(series length - lag)"},
        {"lag", "12"},
        {"train.split", "48"},
    };
    for (const auto& [key, def] : defaults) {
        text += "  " + key + std::string(key.size() < 16 ? 16 - key.size() : 1, ' ') +
                "default: " + def + "\n";
    }
    return text;
}

RunConfig build_config(const CommonArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = load_config(args.config_path);
    for (const std::string& assignment : args.sets) apply_override(cfg, assignment);
    if (args.seed_given) cfg.values["seed"] = std::to_string(args.seed);
    return cfg;
}

struct RunContext {
    RunConfig cfg;
    std::string dir;
    RunManifest manifest;
    std::chrono::steady_clock::time_point t0;
};

RunContext open_run(const CommonArgs& args, const std::string& command, const std::string& tag) {
    RunContext ctx;
    ctx.cfg = build_config(args);
    ctx.dir = make_run_dir(args.out_root, tag, args.stamp);
    ctx.manifest.command = command;
    ctx.manifest.config = ctx.cfg.values;
    ctx.manifest.seed = ctx.cfg.get_u64("seed", 0);
    ctx.manifest.code_version = kVersion;
    ctx.manifest.started_at = manifest_now();
    ctx.t0 = std::chrono::steady_clock::now();
    return ctx;
}

void close_run(RunContext& ctx, const std::vector<std::pair<std::string, double>>& metrics) {
    ctx.manifest.finished_at = manifest_now();
    ctx.manifest.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.t0).count();
    for (const auto& [k, v] : metrics) ctx.manifest.metrics[k] = v;
    write_metrics_csv((std::filesystem::path(ctx.dir) / "metrics.csv").string(), metrics);
    save_manifest(ctx.manifest, (std::filesystem::path(ctx.dir) / "manifest.json").string());
    std::fprintf(stderr, "run written to %s\n", ctx.dir.c_str());
}

void write_trace_csv(const std::string& path, const std::vector<IterRecord>& trace,
                     const std::string& value_name) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write file: " + path);
    out << "iter," << value_name << ",grad_norm,wall_time\n";
    for (const IterRecord& r : trace) {
        out << r.iter << ',' << format_double(r.value) << ',' << format_double(r.grad_norm)
            << ',' << format_double(r.wall_time) << '\n';
    }
}

std::vector<int> parse_dims(const std::string& text) {
    std::vector<int> dims;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string tok =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (tok.empty()) throw InvalidConfig("empty entry in dims list '" + text + "'");
        const std::size_t dots = tok.find("..");
        try {
            if (dots == std::string::npos) {
                dims.push_back(std::stoi(tok));
            } else {
                const int lo = std::stoi(tok.substr(0, dots));
                const int hi = std::stoi(tok.substr(dots + 2));
                if (hi < lo) throw InvalidConfig("descending dim range '" + tok + "'");
                for (int d = lo; d <= hi; ++d) dims.push_back(d);
            }
        } catch (const std::invalid_argument&) {
            throw InvalidConfig("bad dims entry '" + tok + "'");
        } catch (const std::out_of_range&) {
            throw InvalidConfig("bad dims entry '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return dims;
}

std::vector<PsiBackend> parse_schemes(const std::string& text) {
    std::vector<PsiBackend> backends;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string tok =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) backends.push_back(PsiBackend::parse(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (backends.empty()) throw InvalidConfig("no schemes given");
    return backends;
}

// Column-centered output block scaled by one global factor (the mean column
// standard deviation), preserving the relative amplitudes the relevance
// structure depends on.
MatrixXd center_and_scale(const MatrixXd& y) {
    MatrixXd out = y.rowwise() - y.colwise().mean();
    const double scale = std::sqrt(out.array().square().colwise().mean().mean());
    if (scale < 1e-12) throw DegenerateData("features have no variance");
    return out / scale;
}

// ---------------------------------------------------------------------------
// bench-psi
// ---------------------------------------------------------------------------

struct BenchArgs {
    CommonArgs common;
    std::string schemes = "analytic,ut,gh:2,mc:200";
    std::string dims = "1..12";
    int n = 40;
    int m = 20;
    int repeats = 5;
    bool include_psi2 = false;
};

int run_bench(const BenchArgs& args) {
    RunContext ctx = open_run(args.common, "bench-psi", "bench");
    const std::vector<int> dims = parse_dims(args.dims);
    const std::vector<PsiBackend> backends = parse_schemes(args.schemes);
    const std::uint64_t seed = ctx.cfg.get_u64("seed", 0);

    const std::vector<BenchRow> rows =
        bench_psi(dims, backends, args.n, args.m, args.repeats, seed, args.include_psi2);

    const std::string path = (std::filesystem::path(ctx.dir) / "bench.csv").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write file: " + path);
    out << "scheme,dim,eval_count,wall_time,relative_time,capped\n";
    int capped = 0;
    for (const BenchRow& row : rows) {
        out << row.backend.str() << ',' << row.dim << ',' << row.eval_count << ','
            << format_double(row.wall_time) << ',' << format_double(row.relative_time_vs_ut)
            << ',' << (row.capped ? 1 : 0) << '\n';
        if (row.capped) {
            ++capped;
            log_warn("bench: " + row.backend.str() + " at dim " + std::to_string(row.dim) +
                     " exceeds the evaluation cap; row reported without timing");
        }
    }
    out.close();

    ctx.manifest.scheme = args.schemes;
    close_run(ctx, {{"rows", static_cast<double>(rows.size())},
                    {"capped_rows", static_cast<double>(capped)}});
    return 0;
}

// ---------------------------------------------------------------------------
// psi-check
// ---------------------------------------------------------------------------

int run_psi_check(const CommonArgs& common) {
    RunContext ctx = open_run(common, "psi-check", "psi-check");
    const KernelSpec kernel = parse_kernel_spec(ctx.cfg.get("kernel.spec", "rbf(3)"));
    const PsiBackend backend = PsiBackend::parse(ctx.cfg.get("scheme", "ut"));
    const std::uint64_t seed = ctx.cfg.get_u64("seed", 0);
    const int n = 20;
    const int m = 10;
    const int d = kernel.input_dim();

    LatentBatch latent;
    latent.mean.resize(n, d);
    latent.var.resize(n, d);
    latent.inducing.resize(m, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            latent.mean(i, j) = counter_normal(hash_combine(seed, 1), static_cast<std::uint64_t>(i * d + j));
            latent.var(i, j) = 0.05 + 0.3 * counter_uniform(hash_combine(seed, 2),
                                                            static_cast<std::uint64_t>(i * d + j));
        }
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < d; ++j) {
            latent.inducing(i, j) =
                counter_normal(hash_combine(seed, 3), static_cast<std::uint64_t>(i * d + j));
        }
    }

    // Reference: closed form when the kernel has one, otherwise the highest
    // tensor-product order that fits under the evaluation cap.
    PsiStats reference;
    std::string reference_name;
    if (analytic_applicable(kernel)) {
        reference = psi_analytic(kernel, latent);
        reference_name = "analytic";
    } else {
        int order = 20;
        while (order > 2) {
            try {
                eval_budget(SchemeTag::gh(order), d);
                break;
            } catch (const OrderTooLarge&) {
                --order;
            }
        }
        reference = psi_quadrature(kernel, latent, SchemeTag::gh(order));
        reference_name = "gh:" + std::to_string(order);
    }

    if (backend.analytic) {
        throw InvalidConfig("psi-check compares a quadrature scheme against the reference; "
                            "scheme=analytic would compare the reference with itself");
    }
    const PsiErrorReport report = psi_error_report(kernel, latent, backend.scheme, reference);

    std::fprintf(stderr, "psi-check %s vs %s: psi0 %.3e  psi1 %.3e  psi2 %.3e (%lld evals)\n",
                 backend.str().c_str(), reference_name.c_str(), report.psi0_abs,
                 report.psi1_max_abs, report.psi2_max_abs,
                 static_cast<long long>(report.evals));

    ctx.manifest.scheme = backend.str();
    close_run(ctx, {{"psi0_abs_err", report.psi0_abs},
                    {"psi1_max_abs_err", report.psi1_max_abs},
                    {"psi2_max_abs_err", report.psi2_max_abs},
                    {"psi0_rel_err", report.psi0_rel},
                    {"psi1_rel_fro_err", report.psi1_rel_fro},
                    {"psi2_rel_fro_err", report.psi2_rel_fro},
                    {"evals", static_cast<double>(report.evals)}});
    return 0;
}

// ---------------------------------------------------------------------------
// dimred
// ---------------------------------------------------------------------------

struct DimredArgs {
    CommonArgs common;
    bool pca_baseline = false;
    bool full_latent = false;
    int per_class = 0;  // 0 keeps the full dataset
};

int run_dimred(const DimredArgs& args) {
    RunContext ctx = open_run(args.common, args.pca_baseline ? "dimred-pca" : "dimred", "dimred");
    const std::uint64_t seed = ctx.cfg.get_u64("seed", 0);

    Dataset ds = load_csv_features(resolve_data_path(ctx.cfg.require("dataset.path")),
                                   ctx.cfg.get("dataset.label", "label"));
    if (args.per_class > 0) ds = subsample_per_class(ds, args.per_class, seed);
    ctx.manifest.dataset_hash = ds.content_hash;
    if (!ds.has_labels()) throw InvalidInput("dimred needs a labeled dataset");
    std::vector<int> labels(ds.labels.data(), ds.labels.data() + ds.labels.size());

    const MatrixXd y = center_and_scale(ds.features);
    const auto latent_path = (std::filesystem::path(ctx.dir) / "latent.csv").string();

    if (args.pca_baseline) {
        ctx.manifest.scheme = "pca";
        const PcaResult pca = pca_project(y, 2);
        const MetricReport rep = knn_cv_accuracy(pca.scores, labels, 5, 1, seed);
        write_labeled_csv(latent_path, {"z0", "z1"}, pca.scores, ds.labels);
        close_run(ctx, {{"pca_" + rep.name, rep.value},
                        {"pca_" + rep.name + "_std", rep.dispersion},
                        {"n_points", static_cast<double>(y.rows())}});
        return 0;
    }

    const KernelSpec kernel = parse_kernel_spec(ctx.cfg.require("kernel.spec"));
    const PsiBackend backend = PsiBackend::parse(ctx.cfg.get("scheme", "ut"));
    ctx.manifest.scheme = backend.str();
    const int q = ctx.cfg.get_int("latent.q", 5);
    const int m = ctx.cfg.get_int("inducing.m", 20);
    const double init_var = ctx.cfg.get_double("init.latent_var", 0.1);
    OptimizerConfig opt = OptimizerConfig::parse(ctx.cfg.get("optimizer", "lbfgs"));
    opt.max_iters = ctx.cfg.get_int("optimizer.iters", opt.max_iters);

    GplvmModel model = init_gplvm(y, q, m, kernel, backend, init_var, seed);
    const FitResult fr = fit(model, opt, seed);
    if (fr.diverged) {
        log_warn("dimred: optimizer diverged; reporting the last finite state");
        ctx.manifest.diverged = true;
    }

    const std::vector<int> dims = select_ard_dims(fr.model.kernel, 2);
    MatrixXd selected(fr.model.latent.mean.rows(), 2);
    selected.col(0) = fr.model.latent.mean.col(dims[0]);
    selected.col(1) = fr.model.latent.mean.col(dims[1]);
    const MatrixXd& scored = args.full_latent ? fr.model.latent.mean : selected;
    const MetricReport rep = knn_cv_accuracy(scored, labels, 5, 1, seed);

    write_labeled_csv(latent_path, {"z" + std::to_string(dims[0]), "z" + std::to_string(dims[1])},
                      selected, ds.labels);
    write_trace_csv((std::filesystem::path(ctx.dir) / "trace.csv").string(), fr.trace, "elbo");
    save_model(fr.model, (std::filesystem::path(ctx.dir) / "model.json").string());

    close_run(ctx, {{rep.name, rep.value},
                    {rep.name + "_std", rep.dispersion},
                    {"elbo_initial", fr.initial_elbo},
                    {"elbo_final", fr.final_elbo},
                    {"iters", static_cast<double>(fr.trace.empty() ? 0 : fr.trace.back().iter)},
                    {"converged", fr.converged ? 1.0 : 0.0},
                    {"n_points", static_cast<double>(y.rows())}});
    return fr.diverged ? 3 : 0;
}

// ---------------------------------------------------------------------------
// freesim
// ---------------------------------------------------------------------------

struct FreesimArgs {
    CommonArgs common;
    bool baseline = false;  // mean-feedback exact-GP rollout instead of the lifted model
};

int run_freesim(const FreesimArgs& args) {
    RunContext ctx = open_run(args.common, args.baseline ? "freesim-baseline" : "freesim",
                              "freesim");
    const Dataset ds = load_series(resolve_data_path(ctx.cfg.require("dataset.path")));
    ctx.manifest.dataset_hash = ds.content_hash;

    NarxConfig ncfg;
    ncfg.lag = ctx.cfg.get_int("lag", 12);
    ncfg.train_split = ctx.cfg.get_int("train.split", 48);
    ncfg.kernel = parse_kernel_spec(ctx.cfg.require("kernel.spec"));
    ncfg.backend = PsiBackend::parse(ctx.cfg.get("scheme", "ut"));
    ncfg.optimizer = OptimizerConfig::parse(ctx.cfg.get("optimizer", "lbfgs"));
    ncfg.optimizer.max_iters = ctx.cfg.get_int("optimizer.iters", ncfg.optimizer.max_iters);
    const std::string normalize = ctx.cfg.get("normalize", "center");
    if (normalize == "scale") {
        ncfg.center = false;
    } else if (normalize != "center") {
        throw InvalidConfig("freesim: normalize must be 'center' or 'scale'");
    }
    ctx.manifest.scheme = ncfg.backend.str();
    const int horizon =
        ctx.cfg.get_int("horizon", static_cast<int>(ds.series.size()) - ncfg.lag);

    const NarxFit fit = fit_narx(ds.series, ncfg);
    if (fit.diverged) ctx.manifest.diverged = true;
    write_trace_csv((std::filesystem::path(ctx.dir) / "trace.csv").string(), fit.trace,
                    "log_marginal");

    ForecastTrace trace;
    if (args.baseline) {
        trace = free_simulate_narx(fit, ds.series, horizon);
    } else {
        const GplvmModel model = to_uncertain_model(fit, ncfg.backend);
        trace = free_simulate(model, ds.series, ncfg, horizon);
        save_model(model, (std::filesystem::path(ctx.dir) / "model.json").string());
    }

    std::ofstream fout((std::filesystem::path(ctx.dir) / "forecast.csv").string(),
                       std::ios::binary);
    fout << forecast_to_csv(trace);
    fout.close();

    const ForecastMetrics metrics = forecast_metrics(trace, ncfg.train_split);
    close_run(ctx, {{"rmse", metrics.rmse},
                    {"nlpd", metrics.nlpd},
                    {"n_test", static_cast<double>(metrics.n_points)},
                    {"noise_var", fit.noise_var},
                    {"log_marginal", fit.trace.empty() ? 0.0 : fit.trace.back().value},
                    {"converged", fit.converged ? 1.0 : 0.0}});
    return fit.diverged ? 3 : 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
    CommonArgs common;
    std::string model_path;
    double latent_var = 0.0;  // 0 = certain inputs
};

int run_predict(const PredictArgs& args) {
    RunContext ctx = open_run(args.common, "predict", "predict");
    GplvmModel model = load_model(args.model_path);
    ctx.manifest.config["model.path"] = args.model_path;
    if (ctx.cfg.has("scheme")) {
        model.backend = PsiBackend::parse(ctx.cfg.require("scheme"));
        model.validate();
    }
    ctx.manifest.scheme = model.backend.str();

    const Dataset ds = load_csv_features(resolve_data_path(ctx.cfg.require("dataset.path")));
    ctx.manifest.dataset_hash = ds.content_hash;
    if (ds.features.cols() != model.latent.dim()) {
        throw DimensionMismatch("query has " + std::to_string(ds.features.cols()) +
                                " columns, model latent dimension is " +
                                std::to_string(model.latent.dim()));
    }
    if (args.latent_var < 0.0) throw InvalidConfig("--latent-var must be nonnegative");

    const GplvmPredictor pred(model);
    const Eigen::Index n = ds.features.rows();
    const int dy = model.data_dim();
    MatrixXd table(n, 2 * dy + 1);
    std::int64_t total_evals = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        PredictiveDist dist;
        std::int64_t evals = 0;
        if (args.latent_var > 0.0) {
            DiagGaussian q;
            q.mean = ds.features.row(i).transpose();
            q.var = VectorXd::Constant(ds.features.cols(), args.latent_var);
            dist = pred.uncertain(q, &evals);
        } else {
            dist = pred.certain(ds.features.row(i).transpose());
        }
        for (int c = 0; c < dy; ++c) {
            table(i, c) = dist.mean[c];
            table(i, dy + c) = dist.var[c];
        }
        table(i, 2 * dy) = static_cast<double>(evals);
        total_evals += evals;
    }

    std::vector<std::string> header;
    for (int c = 0; c < dy; ++c) header.push_back("mean_" + std::to_string(c));
    for (int c = 0; c < dy; ++c) header.push_back("var_" + std::to_string(c));
    header.push_back("evals");
    write_csv((std::filesystem::path(ctx.dir) / "predictions.csv").string(), header, table);

    close_run(ctx, {{"n_points", static_cast<double>(n)},
                    {"total_evals", static_cast<double>(total_evals)}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"psilvm: uncertain-input sparse GP toolkit"};
    app.require_subcommand(1);
    const std::string key_help = config_key_help();

    BenchArgs bench;
    CLI::App* bench_cmd = app.add_subcommand(
        "bench-psi", "Time the psi-statistics back-ends over a dimension sweep" + key_help);
    add_common(bench_cmd, bench.common);
    bench_cmd->add_option("--schemes", bench.schemes, "comma list of back-ends")
        ->capture_default_str();
    bench_cmd->add_option("--dims", bench.dims, "comma list and/or A..B ranges")
        ->capture_default_str();
    bench_cmd->add_option("--n", bench.n, "data points per batch")->capture_default_str();
    bench_cmd->add_option("--m", bench.m, "inducing points")->capture_default_str();
    bench_cmd->add_option("--repeats", bench.repeats, "timing repeats (median)")
        ->capture_default_str();
    bench_cmd->add_flag("--psi2", bench.include_psi2, "also compute the second-moment block");

    CommonArgs psi_check;
    CLI::App* psi_cmd = app.add_subcommand(
        "psi-check", "Compare a quadrature scheme against the best available reference" + key_help);
    add_common(psi_cmd, psi_check);

    DimredArgs dimred;
    CLI::App* dimred_cmd = app.add_subcommand(
        "dimred", "Train a latent variable model and score the embedding by 1-NN" + key_help);
    add_common(dimred_cmd, dimred.common);
    dimred_cmd->add_flag("--pca", dimred.pca_baseline, "score the PCA baseline instead");
    dimred_cmd->add_flag("--full-latent", dimred.full_latent,
                         "score the full latent space, not the selected 2-D projection");
    dimred_cmd->add_option("--per-class", dimred.per_class,
                           "subsample this many rows per class before training (0 = all)")
        ->capture_default_str();

    FreesimArgs freesim;
    CLI::App* freesim_cmd = app.add_subcommand(
        "freesim", "Fit an autoregressive GP and roll it forward with uncertain inputs" + key_help);
    add_common(freesim_cmd, freesim.common);
    freesim_cmd->add_flag("--baseline", freesim.baseline,
                          "mean-feedback exact-GP rollout (no uncertainty propagation)");

    PredictArgs predict;
    CLI::App* predict_cmd = app.add_subcommand(
        "predict", "Evaluate a saved model's predictive distribution on query points" + key_help);
    add_common(predict_cmd, predict.common);
    predict_cmd->add_option("--model", predict.model_path, "saved model JSON")->required();
    predict_cmd->add_option("--latent-var", predict.latent_var,
                            "treat query rows as Gaussians with this variance (0 = exact points)")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (bench_cmd->parsed()) return run_bench(bench);
        if (psi_cmd->parsed()) return run_psi_check(psi_check);
        if (dimred_cmd->parsed()) return run_dimred(dimred);
        if (freesim_cmd->parsed()) return run_freesim(freesim);
        if (predict_cmd->parsed()) return run_predict(predict);
    } catch (const NotPositiveDefinite& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const OptimizerDiverged& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 3;
    }
    return 0;
}
