#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace psilvm {

// One loaded dataset. Feature datasets fill `features` (plus `labels` when a
// label column was extracted); series datasets fill `series` and `timestamps`.
struct Dataset {
    std::string name;
    std::string source_path;
    std::string content_hash;  // fnv1a over the source bytes, hex

    Eigen::MatrixXd features;  // N x D
    Eigen::VectorXi labels;    // length N or 0

    Eigen::VectorXd series;               // length T or 0
    std::vector<std::string> timestamps;  // parallel to series

    bool has_labels() const { return labels.size() > 0; }
    bool is_series() const { return series.size() > 0; }
};

// Relative paths are resolved against $PSILVM_DATA_DIR when it is set;
// absolute paths and paths to existing files pass through untouched.
std::string resolve_data_path(const std::string& path);

// Rectangular numeric CSV with a header row. When `label_column` names a
// header entry, that column is parsed as integer labels and removed from the
// feature block. Throws ParseError (with 1-based line/column), RaggedRows.
Dataset load_csv_features(const std::string& path,
                          const std::optional<std::string>& label_column = std::nullopt);

// Two-column CSV `month,value`. Months are either YYYY-MM or plain numbers
// and must be strictly increasing (NonMonotoneTime otherwise).
Dataset load_series(const std::string& path);

// Deterministic stratified subsample with exactly `per_class` rows of every
// label value, in label-then-draw order. Throws ClassTooSmall.
Dataset subsample_per_class(const Dataset& ds, int per_class, std::uint64_t seed);

// CSV writers. Values are formatted with 17 significant digits so a
// write/load round trip reproduces every double exactly.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& values);
void write_labeled_csv(const std::string& path, const std::vector<std::string>& header,
                       const Eigen::MatrixXd& values, const Eigen::VectorXi& labels,
                       const std::string& label_name = "label");
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& metrics);

// ---------------------------------------------------------------------------
// Experiment configuration: flat `key = value` text. `#` starts a comment.
// Unknown keys are rejected so typos fail loudly instead of silently falling
// back to defaults.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;  // InvalidConfig when absent
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
};

// The documented key set; parse_config/apply_override reject anything else.
const std::vector<std::string>& known_config_keys();

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// `assignment` is "key=value", the CLI --set form.
void apply_override(RunConfig& cfg, const std::string& assignment);

// ---------------------------------------------------------------------------
// Run manifests. One JSON document per run directory recording everything
// needed to reproduce the run plus the metrics it produced. `repro_hash`
// covers only the reproduction-relevant fields (config, seed, scheme, dataset
// hash, code version, metrics), not wall time or timestamps, so two runs of
// the same experiment can be compared by a single string.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::string scheme;
    std::string dataset_hash;
    std::string code_version;
    std::map<std::string, double> metrics;
    double wall_time_sec = 0.0;
    std::string started_at;   // ISO 8601 UTC
    std::string finished_at;
    bool diverged = false;

    std::string repro_hash() const;
    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
};

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Current UTC time in ISO 8601, for the manifest timestamp fields.
std::string manifest_now();

// Creates `<root>/<stamp>-<tag>` (parents included) and returns the path.
// `stamp` defaults to the current UTC time, compact ISO form; an explicit
// value makes directory names deterministic for tests. Existing directories
// get a numeric suffix instead of being reused.
std::string make_run_dir(const std::string& root, const std::string& tag,
                         const std::string& stamp = "");

// ---------------------------------------------------------------------------
// Synthetic dataset generators, used to ship self-contained fixtures. Both
// are deterministic in (size, seed).
// ---------------------------------------------------------------------------

// Multiclass manifold data in the style of the three-phase flow benchmark:
// 12 attributes, 3 balanced classes. The class identity lives on a wiggly
// low-dimensional manifold driving half the attributes; the other attributes
// carry large-amplitude class-independent variation so that plain variance
// ranking (PCA) mixes the classes while a relevance-weighted embedding can
// separate them.
Dataset make_flow_dataset(int n, std::uint64_t seed);

// Digit-like images: 10 classes of 16x16 gray-scale blobs (256 attributes),
// each sample a smoothly deformed class prototype plus pixel noise.
Dataset make_digits_dataset(int per_class, std::uint64_t seed);

}  // namespace psilvm
