#include "psilvm/dataio.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "psilvm/errors.hpp"
#include "psilvm/evalkit.hpp"
#include "psilvm/util.hpp"

using namespace psilvm;
using Eigen::MatrixXd;
using Eigen::VectorXi;

namespace {

std::filesystem::path scratch_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("psilvm-test-" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    return path.string();
}

}  // namespace

TEST_CASE("feature csv loads a rectangular block with header") {
    const auto dir = scratch_dir("feat");
    const std::string path = write_text(dir / "a.csv", "x,y\n1,2\n3,4\n5,6\n");
    const Dataset ds = load_csv_features(path);
    REQUIRE(ds.features.rows() == 3);
    REQUIRE(ds.features.cols() == 2);
    CHECK(ds.features(0, 0) == 1.0);
    CHECK(ds.features(2, 1) == 6.0);
    CHECK_FALSE(ds.has_labels());
    CHECK_FALSE(ds.is_series());
    CHECK(ds.name == "a");
    CHECK(ds.content_hash.size() > 0);

    const Dataset again = load_csv_features(path);
    CHECK(again.content_hash == ds.content_hash);
    const std::string other = write_text(dir / "b.csv", "x,y\n1,2\n3,4\n5,7\n");
    CHECK(load_csv_features(other).content_hash != ds.content_hash);
}

TEST_CASE("feature csv extracts the label column") {
    const auto dir = scratch_dir("label");
    const std::string path =
        write_text(dir / "d.csv", "f0,label,f1\n0.5,2,1.5\n0.25,0,1.25\n");
    const Dataset ds = load_csv_features(path, std::string("label"));
    REQUIRE(ds.features.cols() == 2);
    REQUIRE(ds.labels.size() == 2);
    CHECK(ds.features(0, 0) == 0.5);
    CHECK(ds.features(0, 1) == 1.5);
    CHECK(ds.labels[0] == 2);
    CHECK(ds.labels[1] == 0);

    CHECK_THROWS_AS(load_csv_features(path, std::string("class")), InvalidInput);
}

TEST_CASE("feature csv rejects malformed input with positions") {
    const auto dir = scratch_dir("bad");
    const std::string ragged = write_text(dir / "r.csv", "x,y\n1,2\n3\n");
    CHECK_THROWS_AS(load_csv_features(ragged), RaggedRows);

    const std::string junk = write_text(dir / "j.csv", "x,y\n1,2\n3,oops\n");
    try {
        load_csv_features(junk);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 3);
        CHECK(e.column == 2);
    }

    const std::string fractional_label = write_text(dir / "f.csv", "x,label\n1,0.5\n");
    CHECK_THROWS_AS(load_csv_features(fractional_label, std::string("label")), ParseError);
    CHECK_THROWS_AS(load_csv_features((dir / "missing.csv").string()), InvalidInput);
}

TEST_CASE("csv write and load round-trips doubles exactly") {
    const auto dir = scratch_dir("round");
    MatrixXd m(3, 2);
    m << M_PI, -1.0 / 3.0, 1e-17, 12345.678901234567, -0.0, 2.5e300;
    const std::string path = (dir / "m.csv").string();
    write_csv(path, {"c0", "c1"}, m);
    const Dataset ds = load_csv_features(path);
    REQUIRE(ds.features.rows() == 3);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 2; ++c) CHECK(ds.features(r, c) == m(r, c));
    }
    CHECK_THROWS_AS(write_csv(path, {"one"}, m), DimensionMismatch);
}

TEST_CASE("labeled csv writes one label per row and loads back") {
    const auto dir = scratch_dir("labw");
    MatrixXd m(2, 2);
    m << 1.5, 2.5, 3.5, 4.5;
    VectorXi labels(2);
    labels << 7, 9;
    const std::string path = (dir / "l.csv").string();
    write_labeled_csv(path, {"a", "b"}, m, labels);
    const Dataset ds = load_csv_features(path, std::string("label"));
    CHECK(ds.features == m);
    CHECK(ds.labels == labels);
    VectorXi short_labels(1);
    short_labels << 1;
    CHECK_THROWS_AS(write_labeled_csv(path, {"a", "b"}, m, short_labels), LengthMismatch);
}

TEST_CASE("series loader parses year-month stamps in order") {
    const auto dir = scratch_dir("series");
    const std::string path = write_text(
        dir / "s.csv", "month,value\n1949-01,112\n1949-02,118\n1949-03,132\n");
    const Dataset ds = load_series(path);
    REQUIRE(ds.is_series());
    REQUIRE(ds.series.size() == 3);
    CHECK(ds.series[0] == 112.0);
    CHECK(ds.series[2] == 132.0);
    CHECK(ds.timestamps[1] == "1949-02");
    CHECK_FALSE(ds.has_labels());

    const std::string numeric = write_text(dir / "n.csv", "t,v\n1,0.5\n2.5,0.25\n10,0.125\n");
    CHECK(load_series(numeric).series.size() == 3);

    const std::string shuffled =
        write_text(dir / "bad.csv", "month,value\n1949-02,118\n1949-01,112\n");
    CHECK_THROWS_AS(load_series(shuffled), NonMonotoneTime);
    const std::string repeated = write_text(dir / "rep.csv", "t,v\n1,0.5\n1,0.25\n");
    CHECK_THROWS_AS(load_series(repeated), NonMonotoneTime);
    const std::string month13 = write_text(dir / "m13.csv", "month,value\n1949-13,118\n");
    CHECK_THROWS_AS(load_series(month13), ParseError);
    const std::string wide = write_text(dir / "w.csv", "a,b,c\n1,2,3\n");
    CHECK_THROWS_AS(load_series(wide), ParseError);
    const std::string ragged = write_text(dir / "rag.csv", "a,b\n1,2\n3\n");
    CHECK_THROWS_AS(load_series(ragged), RaggedRows);
}

TEST_CASE("the airline fixture has twelve years of monthly data") {
    const Dataset ds = load_series(std::string(PSILVM_SOURCE_DIR) + "/data/airline.csv");
    REQUIRE(ds.series.size() == 144);
    CHECK(ds.series[0] == 112.0);
    CHECK(ds.series[143] == 432.0);
    CHECK(ds.series.sum() == 40363.0);
    CHECK(ds.timestamps.front() == "1949-01");
    CHECK(ds.timestamps.back() == "1960-12");
    // Training protocol slices the first four years: 1520+1676+2042+2364.
    CHECK(ds.series.head(48).sum() == 7602.0);
}

TEST_CASE("per-class subsampling is deterministic and balanced") {
    Dataset ds;
    ds.features.resize(30, 2);
    ds.labels.resize(30);
    for (int i = 0; i < 30; ++i) {
        ds.features(i, 0) = i;
        ds.features(i, 1) = 2 * i;
        ds.labels[i] = i % 3;
    }
    ds.content_hash = "deadbeef";

    const Dataset a = subsample_per_class(ds, 4, 7);
    REQUIRE(a.features.rows() == 12);
    REQUIRE(a.labels.size() == 12);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 12; ++i) ++counts[a.labels[i]];
    CHECK(counts[0] == 4);
    CHECK(counts[1] == 4);
    CHECK(counts[2] == 4);
    // Rows are genuine source rows.
    for (int i = 0; i < 12; ++i) {
        const int src = static_cast<int>(a.features(i, 0));
        CHECK(a.features(i, 1) == 2.0 * src);
        CHECK(a.labels[i] == src % 3);
    }

    const Dataset b = subsample_per_class(ds, 4, 7);
    CHECK(a.features == b.features);
    CHECK(a.content_hash == b.content_hash);
    const Dataset c = subsample_per_class(ds, 4, 8);
    CHECK(a.features != c.features);

    // Full-size subsample is the identity up to order.
    const Dataset full = subsample_per_class(ds, 10, 3);
    std::set<double> want, got;
    for (int i = 0; i < 30; ++i) want.insert(ds.features(i, 0));
    for (int i = 0; i < 30; ++i) got.insert(full.features(i, 0));
    CHECK(want == got);

    CHECK_THROWS_AS(subsample_per_class(ds, 11, 0), ClassTooSmall);
    Dataset unlabeled;
    unlabeled.features.resize(3, 1);
    CHECK_THROWS_AS(subsample_per_class(unlabeled, 1, 0), InvalidInput);
}

TEST_CASE("config text parses known keys and rejects everything else") {
    const std::string text =
        "# experiment\n"
        "dataset.path = data/flow.csv\n"
        "kernel.spec = sum(rbf(5),linear(5))  # trailing comment\n"
        "scheme = gh:3\n"
        "latent.q = 5\n"
        "init.latent_var = 0.1\n"
        "seed = 42\n"
        "\n";
    const RunConfig cfg = parse_config(text);
    CHECK(cfg.require("dataset.path") == "data/flow.csv");
    CHECK(cfg.get("kernel.spec", "") == "sum(rbf(5),linear(5))");
    CHECK(cfg.get_int("latent.q", 0) == 5);
    CHECK(cfg.get_double("init.latent_var", 0.0) == 0.1);
    CHECK(cfg.get_u64("seed", 0) == 42);
    CHECK(cfg.get_int("inducing.m", 20) == 20);
    CHECK_FALSE(cfg.has("inducing.m"));

    CHECK_THROWS_AS(parse_config("latent.dims = 5\n"), InvalidConfig);
    CHECK_THROWS_AS(parse_config("latent.q\n"), InvalidConfig);
    CHECK_THROWS_AS(parse_config("latent.q =\n"), InvalidConfig);
    CHECK_THROWS_AS(cfg.require("horizon"), InvalidConfig);
    CHECK_THROWS_AS(parse_config("latent.q = five\n").get_int("latent.q", 0), InvalidConfig);
    CHECK_THROWS_AS(parse_config("init.latent_var = big\n").get_double("init.latent_var", 0.0),
                    InvalidConfig);
}

TEST_CASE("overrides reuse the key whitelist") {
    RunConfig cfg = parse_config("latent.q = 5\n");
    apply_override(cfg, "latent.q=7");
    CHECK(cfg.get_int("latent.q", 0) == 7);
    apply_override(cfg, "scheme = mc:50:3");
    CHECK(cfg.get("scheme", "") == "mc:50:3");
    CHECK_THROWS_AS(apply_override(cfg, "latent.dims=7"), InvalidConfig);
    CHECK_THROWS_AS(apply_override(cfg, "latent.q"), InvalidConfig);
    CHECK_THROWS_AS(apply_override(cfg, "=7"), InvalidConfig);
}

TEST_CASE("config files load through the same parser") {
    const auto dir = scratch_dir("cfg");
    const std::string path = write_text(dir / "run.cfg", "lag = 12\ntrain.split = 48\n");
    const RunConfig cfg = load_config(path);
    CHECK(cfg.get_int("lag", 0) == 12);
    CHECK(cfg.get_int("train.split", 0) == 48);
}

TEST_CASE("manifest json round-trips and hashes only the reproducible fields") {
    RunManifest m;
    m.command = "dimred";
    m.config = {{"latent.q", "5"}, {"scheme", "ut"}};
    m.seed = 11;
    m.scheme = "ut";
    m.dataset_hash = "abc123";
    m.code_version = kVersion;
    m.metrics = {{"1nn_cv_accuracy", 0.95}, {"1nn_cv_accuracy_std", 0.02}};
    m.wall_time_sec = 3.5;
    m.started_at = "2026-08-13T10:00:00Z";
    m.finished_at = "2026-08-13T10:00:03Z";

    const RunManifest back = RunManifest::from_json(m.to_json());
    CHECK(back.command == m.command);
    CHECK(back.config == m.config);
    CHECK(back.seed == m.seed);
    CHECK(back.metrics == m.metrics);
    CHECK(back.diverged == false);
    CHECK(back.repro_hash() == m.repro_hash());

    RunManifest later = m;
    later.wall_time_sec = 99.0;
    later.started_at = "2026-08-14T08:00:00Z";
    later.finished_at = "2026-08-14T08:02:00Z";
    CHECK(later.repro_hash() == m.repro_hash());

    RunManifest changed = m;
    changed.metrics["1nn_cv_accuracy"] = 0.96;
    CHECK(changed.repro_hash() != m.repro_hash());

    CHECK_THROWS_AS(RunManifest::from_json("{not json"), InvalidInput);
    CHECK_THROWS_AS(RunManifest::from_json("{\"command\":\"x\"}"), InvalidInput);

    const auto dir = scratch_dir("manifest");
    const std::string path = (dir / "manifest.json").string();
    save_manifest(m, path);
    CHECK(load_manifest(path).repro_hash() == m.repro_hash());
}

TEST_CASE("run directories never collide") {
    const auto dir = scratch_dir("runs");
    const std::string a = make_run_dir(dir.string(), "oil", "20260813T000000Z");
    const std::string b = make_run_dir(dir.string(), "oil", "20260813T000000Z");
    CHECK(a != b);
    CHECK(std::filesystem::is_directory(a));
    CHECK(std::filesystem::is_directory(b));
    CHECK(a.find("20260813T000000Z-oil") != std::string::npos);

    const std::string stamped = make_run_dir(dir.string(), "x");
    CHECK(std::filesystem::is_directory(stamped));
}

TEST_CASE("metrics csv lists one metric per row") {
    const auto dir = scratch_dir("metrics");
    const std::string path = (dir / "metrics.csv").string();
    write_metrics_csv(path, {{"rmse", 45.27}, {"nlpd", 5.26}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "metric,value");
    std::getline(in, line);
    CHECK(line.rfind("rmse,", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("nlpd,", 0) == 0);
}

TEST_CASE("relative data paths honor the data dir variable") {
    const auto dir = scratch_dir("envdir");
    write_text(dir / "present.csv", "x\n1\n");

    CHECK(resolve_data_path("/abs/path.csv") == "/abs/path.csv");

    setenv("PSILVM_DATA_DIR", dir.string().c_str(), 1);
    CHECK(resolve_data_path("present.csv") == (dir / "present.csv").string());
    unsetenv("PSILVM_DATA_DIR");
    CHECK(resolve_data_path("present.csv") == "present.csv");
    CHECK_THROWS_AS(resolve_data_path(""), InvalidInput);
}

TEST_CASE("the flow dataset separates classes on a hidden manifold") {
    const Dataset ds = make_flow_dataset(300, 1);
    REQUIRE(ds.features.rows() == 300);
    REQUIRE(ds.features.cols() == 12);
    REQUIRE(ds.labels.size() == 300);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 300; ++i) ++counts[ds.labels[i]];
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
    CHECK(counts[2] == 100);
    CHECK(ds.features.allFinite());

    const Dataset same = make_flow_dataset(300, 1);
    CHECK(same.features == ds.features);
    CHECK(same.content_hash == ds.content_hash);
    const Dataset other = make_flow_dataset(300, 2);
    CHECK(other.features != ds.features);

    // A linear 2-D view of the folded harmonics loses class structure that
    // the full feature space retains.
    const Eigen::MatrixXd centered = ds.features.rowwise() - ds.features.colwise().mean();
    const PcaResult pca = pca_project(centered, 2);
    std::vector<int> labels(ds.labels.data(), ds.labels.data() + ds.labels.size());
    const MetricReport flat = knn_cv_accuracy(pca.scores, labels, 5, 1, 0);
    const MetricReport full = knn_cv_accuracy(centered, labels, 5, 1, 0);
    CHECK(full.value > 0.9);
    CHECK(flat.value < full.value - 0.05);
}

TEST_CASE("the digits dataset produces ten balanced image classes") {
    const Dataset ds = make_digits_dataset(5, 3);
    REQUIRE(ds.features.rows() == 50);
    REQUIRE(ds.features.cols() == 256);
    for (int c = 0; c < 10; ++c) {
        for (int i = 0; i < 5; ++i) CHECK(ds.labels[c * 5 + i] == c);
    }
    CHECK(ds.features.allFinite());
    CHECK(ds.features.maxCoeff() > 0.5);
    CHECK(ds.features.maxCoeff() < 5.0);

    const Dataset same = make_digits_dataset(5, 3);
    CHECK(same.features == ds.features);
    CHECK(make_digits_dataset(5, 4).features != ds.features);
    CHECK_THROWS_AS(make_digits_dataset(0, 3), InvalidInput);
}
