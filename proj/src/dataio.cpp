#include "psilvm/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "psilvm/errors.hpp"
#include "psilvm/util.hpp"

namespace psilvm {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            if (!cur.empty() && cur.back() == '\r') cur.pop_back();
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) {
        if (cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
    }
    return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

double parse_number(const std::string& field, long line, long column) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || field.empty()) {
        throw ParseError("not a number: '" + field + "'", line, column);
    }
    return v;
}

int parse_label(const std::string& field, long line, long column) {
    const double v = parse_number(field, line, column);
    const double r = std::nearbyint(v);
    if (std::abs(v - r) > 1e-9 || std::abs(r) > 1e9) {
        throw ParseError("label is not an integer: '" + field + "'", line, column);
    }
    return static_cast<int>(r);
}

// Accepts YYYY-MM or a plain number; returns a key that orders timestamps.
double timestamp_key(const std::string& field, long line) {
    const std::size_t dash = field.find('-', 1);
    if (dash != std::string::npos && dash + 1 < field.size()) {
        bool digits = true;
        for (std::size_t i = 0; i < field.size(); ++i) {
            if (i == dash) continue;
            if (!std::isdigit(static_cast<unsigned char>(field[i]))) digits = false;
        }
        if (digits) {
            const long year = std::strtol(field.substr(0, dash).c_str(), nullptr, 10);
            const long month = std::strtol(field.substr(dash + 1).c_str(), nullptr, 10);
            if (month < 1 || month > 12) throw ParseError("month out of range: '" + field + "'", line, 1);
            return static_cast<double>(year * 12 + (month - 1));
        }
    }
    return parse_number(field, line, 1);
}

std::string utc_stamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

std::string iso_utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string matrix_hash(const Eigen::MatrixXd& m) {
    std::uint64_t h = fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    return to_hex(h);
}

}  // namespace

std::string resolve_data_path(const std::string& path) {
    if (path.empty()) throw InvalidInput("empty data path");
    if (std::filesystem::path(path).is_absolute() || std::filesystem::exists(path)) return path;
    if (const char* base = std::getenv("PSILVM_DATA_DIR")) {
        return (std::filesystem::path(base) / path).string();
    }
    return path;
}

Dataset load_csv_features(const std::string& path, const std::optional<std::string>& label_column) {
    const std::string text = read_file(path);
    const std::vector<std::string> lines = split_lines(text);
    if (lines.empty()) throw ParseError("empty file", 1, 1);

    const std::vector<std::string> header = split_fields(lines[0]);
    const std::size_t cols = header.size();
    std::ptrdiff_t label_idx = -1;
    if (label_column) {
        const auto it = std::find(header.begin(), header.end(), *label_column);
        if (it == header.end()) {
            throw InvalidInput("label column '" + *label_column + "' not in header of " + path);
        }
        label_idx = it - header.begin();
    }

    std::vector<std::string> rows;
    rows.reserve(lines.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (!trim(lines[i]).empty()) rows.push_back(lines[i]);
    }

    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index d = static_cast<Eigen::Index>(cols) - (label_idx >= 0 ? 1 : 0);
    Dataset ds;
    ds.features.resize(n, d);
    if (label_idx >= 0) ds.labels.resize(n);

    for (Eigen::Index r = 0; r < n; ++r) {
        const long line_no = static_cast<long>(r) + 2;
        const std::vector<std::string> fields = split_fields(rows[static_cast<std::size_t>(r)]);
        if (fields.size() != cols) {
            throw RaggedRows("row at line " + std::to_string(line_no) + " has " +
                             std::to_string(fields.size()) + " fields, header has " +
                             std::to_string(cols));
        }
        Eigen::Index fcol = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (static_cast<std::ptrdiff_t>(c) == label_idx) {
                ds.labels[r] = parse_label(fields[c], line_no, static_cast<long>(c) + 1);
            } else {
                ds.features(r, fcol++) = parse_number(fields[c], line_no, static_cast<long>(c) + 1);
            }
        }
    }

    ds.name = std::filesystem::path(path).stem().string();
    ds.source_path = path;
    ds.content_hash = to_hex(fnv1a(text));
    return ds;
}

Dataset load_series(const std::string& path) {
    const std::string text = read_file(path);
    const std::vector<std::string> lines = split_lines(text);
    if (lines.empty()) throw ParseError("empty file", 1, 1);
    if (split_fields(lines[0]).size() != 2) {
        throw ParseError("series files have exactly two columns", 1, 1);
    }

    Dataset ds;
    std::vector<double> values;
    double prev_key = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const long line_no = static_cast<long>(i) + 1;
        const std::vector<std::string> fields = split_fields(lines[i]);
        if (fields.size() != 2) {
            throw RaggedRows("row at line " + std::to_string(line_no) + " has " +
                             std::to_string(fields.size()) + " fields, expected 2");
        }
        const double key = timestamp_key(fields[0], line_no);
        if (key <= prev_key) {
            throw NonMonotoneTime("timestamp '" + fields[0] + "' at line " +
                                  std::to_string(line_no) + " does not increase");
        }
        prev_key = key;
        ds.timestamps.push_back(fields[0]);
        values.push_back(parse_number(fields[1], line_no, 2));
    }
    ds.series = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));

    ds.name = std::filesystem::path(path).stem().string();
    ds.source_path = path;
    ds.content_hash = to_hex(fnv1a(text));
    return ds;
}

Dataset subsample_per_class(const Dataset& ds, int per_class, std::uint64_t seed) {
    if (!ds.has_labels()) throw InvalidInput("subsample_per_class needs labels");
    if (per_class < 1) throw InvalidInput("per_class must be positive");

    std::map<int, std::vector<Eigen::Index>> by_class;
    for (Eigen::Index i = 0; i < ds.labels.size(); ++i) by_class[ds.labels[i]].push_back(i);

    std::vector<Eigen::Index> chosen;
    for (auto& [label, idx] : by_class) {
        if (static_cast<int>(idx.size()) < per_class) {
            throw ClassTooSmall("class " + std::to_string(label) + " has " +
                                std::to_string(idx.size()) + " rows, need " +
                                std::to_string(per_class));
        }
        deterministic_shuffle(idx, hash_combine(seed, static_cast<std::uint64_t>(label)));
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + per_class);
    }

    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(chosen.size()), ds.features.cols());
    out.labels.resize(static_cast<Eigen::Index>(chosen.size()));
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(chosen[i]);
        out.labels[static_cast<Eigen::Index>(i)] = ds.labels[chosen[i]];
    }
    out.name = ds.name + "-sub" + std::to_string(per_class);
    out.source_path = ds.source_path;
    out.content_hash = to_hex(fnv1a(matrix_hash(out.features) + std::to_string(per_class) +
                                    std::to_string(seed) + ds.content_hash));
    return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& values) {
    if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
        throw DimensionMismatch("header has " + std::to_string(header.size()) + " names for " +
                                std::to_string(values.cols()) + " columns");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write file: " + path);
    for (std::size_t c = 0; c < header.size(); ++c) {
        out << (c ? "," : "") << header[c];
    }
    out << '\n';
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            out << (c ? "," : "") << format_double(values(r, c));
        }
        out << '\n';
    }
}

void write_labeled_csv(const std::string& path, const std::vector<std::string>& header,
                       const Eigen::MatrixXd& values, const Eigen::VectorXi& labels,
                       const std::string& label_name) {
    if (labels.size() != values.rows()) throw LengthMismatch("one label per row required");
    if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
        throw DimensionMismatch("header has " + std::to_string(header.size()) + " names for " +
                                std::to_string(values.cols()) + " columns");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write file: " + path);
    for (const std::string& h : header) out << h << ',';
    out << label_name << '\n';
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) out << format_double(values(r, c)) << ',';
        out << labels[r] << '\n';
    }
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& metrics) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write file: " + path);
    out << "metric,value\n";
    for (const auto& [name, value] : metrics) {
        out << name << ',' << format_double(value) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "dataset.path",    // CSV file, resolved against $PSILVM_DATA_DIR
        "dataset.label",   // label column name for feature datasets
        "kernel.spec",     // kernel grammar, e.g. sum(rbf(5),linear(5))
        "scheme",          // analytic | ut | gh:H | mc:P[:seed]
        "latent.q",        // latent dimensionality
        "inducing.m",      // number of inducing points
        "init.latent_var", // initial variational variance
        "optimizer",       // lbfgs | adam | adam(lr)
        "optimizer.iters", // iteration budget
        "seed",            // base seed for initialization and subsampling
        "horizon",         // free-simulation steps (default: all of the series)
        "lag",             // autoregressive window length
        "train.split",     // series prefix length used for training
        "normalize",       // center | scale (scale keeps the level of a positive series)
    };
    return keys;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

std::string RunConfig::require(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw InvalidConfig("missing config key: " + key);
    return it->second;
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t used = 0;
        const int v = std::stoi(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw InvalidConfig("config key " + key + " is not an integer: '" + it->second + "'");
    }
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    const char* begin = it->second.data();
    const char* end = begin + it->second.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw InvalidConfig("config key " + key + " is not a number: '" + it->second + "'");
    }
    return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw InvalidConfig("config key " + key + " is not an unsigned integer: '" + it->second + "'");
    }
}

namespace {

void set_key(RunConfig& cfg, const std::string& key, const std::string& value, long line) {
    const auto& known = known_config_keys();
    if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw InvalidConfig("unknown config key '" + key + "'" +
                            (line > 0 ? " at line " + std::to_string(line) : ""));
    }
    cfg.values[key] = value;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    const std::vector<std::string> lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw InvalidConfig("expected key = value at line " + std::to_string(i + 1));
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw InvalidConfig("empty key or value at line " + std::to_string(i + 1));
        }
        set_key(cfg, key, value, static_cast<long>(i + 1));
    }
    return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw InvalidConfig("override must be key=value, got '" + assignment + "'");
    }
    const std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    if (key.empty() || value.empty()) {
        throw InvalidConfig("override must be key=value, got '" + assignment + "'");
    }
    set_key(cfg, key, value, 0);
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

std::string RunManifest::repro_hash() const {
    std::string blob = command + "\n";
    for (const auto& [k, v] : config) blob += k + "=" + v + "\n";
    blob += "seed=" + std::to_string(seed) + "\n";
    blob += "scheme=" + scheme + "\n";
    blob += "dataset=" + dataset_hash + "\n";
    blob += "version=" + code_version + "\n";
    for (const auto& [k, v] : metrics) blob += k + "=" + format_double(v) + "\n";
    return to_hex(fnv1a(blob));
}

std::string RunManifest::to_json() const {
    nlohmann::ordered_json doc;
    doc["command"] = command;
    doc["config"] = config;
    doc["seed"] = seed;
    doc["scheme"] = scheme;
    doc["dataset_hash"] = dataset_hash;
    doc["code_version"] = code_version;
    doc["metrics"] = metrics;
    doc["wall_time_sec"] = wall_time_sec;
    doc["started_at"] = started_at;
    doc["finished_at"] = finished_at;
    doc["diverged"] = diverged;
    doc["repro_hash"] = repro_hash();
    return doc.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed manifest: ") + e.what());
    }
    RunManifest m;
    try {
        m.command = doc.at("command").get<std::string>();
        m.config = doc.at("config").get<std::map<std::string, std::string>>();
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.scheme = doc.at("scheme").get<std::string>();
        m.dataset_hash = doc.at("dataset_hash").get<std::string>();
        m.code_version = doc.at("code_version").get<std::string>();
        m.metrics = doc.at("metrics").get<std::map<std::string, double>>();
        m.wall_time_sec = doc.at("wall_time_sec").get<double>();
        m.started_at = doc.at("started_at").get<std::string>();
        m.finished_at = doc.at("finished_at").get<std::string>();
        m.diverged = doc.at("diverged").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("manifest missing fields: ") + e.what());
    }
    return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write file: " + path);
    out << m.to_json();
}

RunManifest load_manifest(const std::string& path) {
    return RunManifest::from_json(read_file(path));
}

std::string make_run_dir(const std::string& root, const std::string& tag,
                         const std::string& stamp) {
    const std::string base = (stamp.empty() ? utc_stamp() : stamp) + "-" + tag;
    std::filesystem::path dir = std::filesystem::path(root) / base;
    int suffix = 1;
    while (std::filesystem::exists(dir)) {
        dir = std::filesystem::path(root) / (base + "-" + std::to_string(++suffix));
    }
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string manifest_now() { return iso_utc_now(); }

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

Dataset make_flow_dataset(int n, std::uint64_t seed) {
    if (n < 3) throw InvalidInput("flow dataset needs at least 3 rows");
    const int d = 12;
    const int smooth_dims = 4;  // the rest carry higher-frequency harmonics

    // Every attribute is a sinusoid of the hidden 2-D coordinates. The first
    // few use low response frequencies, so a linear 2-D view keeps part of the
    // class geometry; the rest fold the manifold onto itself, so the same
    // linear view mixes classes that a curved embedding keeps apart. All
    // randomness is keyed off the seed: the dataset is a pure function of
    // (n, seed).
    Eigen::MatrixXd freq(d, 2);
    Eigen::VectorXd phase(d);
    for (int j = 0; j < d; ++j) {
        const double lo = j < smooth_dims ? 1.0 : 2.0;
        const double spread = j < smooth_dims ? 0.4 : 0.6;
        freq(j, 0) = lo + spread * counter_uniform(hash_combine(seed, 11), static_cast<std::uint64_t>(j));
        freq(j, 1) = lo + spread * counter_uniform(hash_combine(seed, 12), static_cast<std::uint64_t>(j));
        phase[j] = 2.0 * M_PI * counter_uniform(hash_combine(seed, 13), static_cast<std::uint64_t>(j));
    }

    const double arc = 1.8;            // radians of circle each class occupies
    const double radial_noise = 0.06;
    const double pixel_noise = 0.05;

    Dataset ds;
    ds.features.resize(n, d);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const std::uint64_t row = static_cast<std::uint64_t>(i);
        const int c = i % 3;
        const double u = counter_uniform(hash_combine(seed, 1), row);
        const double theta = c * (2.0 * M_PI / 3.0) + (u - 0.5) * arc;
        const double r = 1.0 + radial_noise * counter_normal(hash_combine(seed, 2), row);
        const double z1 = r * std::cos(theta);
        const double z2 = r * std::sin(theta);

        for (int j = 0; j < d; ++j) {
            ds.features(i, j) = std::sin(freq(j, 0) * z1 + freq(j, 1) * z2 + phase[j]) +
                                pixel_noise * counter_normal(hash_combine(seed, 20 + j), row);
        }
        ds.labels[i] = c;
    }

    ds.name = "flow";
    ds.source_path = "synthetic";
    ds.content_hash = to_hex(fnv1a(matrix_hash(ds.features) + "flow" + std::to_string(seed)));
    return ds;
}

Dataset make_digits_dataset(int per_class, std::uint64_t seed) {
    if (per_class < 1) throw InvalidInput("per_class must be positive");
    const int classes = 10;
    const int side = 16;
    const int d = side * side;
    const int blobs = 3;

    Dataset ds;
    ds.features.resize(classes * per_class, d);
    ds.labels.resize(classes * per_class);

    for (int c = 0; c < classes; ++c) {
        Eigen::MatrixXd centers(blobs, 2);
        Eigen::VectorXd widths(blobs), weights(blobs);
        const std::uint64_t cs = hash_combine(seed, 100 + static_cast<std::uint64_t>(c));
        for (int k = 0; k < blobs; ++k) {
            centers(k, 0) = 3.0 + 9.0 * counter_uniform(hash_combine(cs, 1), static_cast<std::uint64_t>(k));
            centers(k, 1) = 3.0 + 9.0 * counter_uniform(hash_combine(cs, 2), static_cast<std::uint64_t>(k));
            widths[k] = 1.5 + 2.0 * counter_uniform(hash_combine(cs, 3), static_cast<std::uint64_t>(k));
            weights[k] = 0.6 + 0.8 * counter_uniform(hash_combine(cs, 4), static_cast<std::uint64_t>(k));
        }
        for (int i = 0; i < per_class; ++i) {
            const int row = c * per_class + i;
            const std::uint64_t rs = hash_combine(cs, 1000 + static_cast<std::uint64_t>(i));
            const double dx = 0.8 * counter_normal(hash_combine(rs, 1), 0);
            const double dy = 0.8 * counter_normal(hash_combine(rs, 2), 0);
            const double scale = 1.0 + 0.15 * counter_normal(hash_combine(rs, 3), 0);
            for (int py = 0; py < side; ++py) {
                for (int px = 0; px < side; ++px) {
                    double val = 0.0;
                    for (int k = 0; k < blobs; ++k) {
                        const double ddx = px - dx - centers(k, 0);
                        const double ddy = py - dy - centers(k, 1);
                        val += weights[k] * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * widths[k] * widths[k]));
                    }
                    const std::uint64_t pix = static_cast<std::uint64_t>(py * side + px);
                    ds.features(row, py * side + px) =
                        scale * val + 0.05 * counter_normal(hash_combine(rs, 4), pix);
                }
            }
            ds.labels[row] = c;
        }
    }

    ds.name = "digits";
    ds.source_path = "synthetic";
    ds.content_hash = to_hex(fnv1a(matrix_hash(ds.features) + "digits" + std::to_string(seed)));
    return ds;
}

}  // namespace psilvm
