// Writes the synthetic benchmark fixtures as labeled CSV files so every
// experiment consumes plain data files regardless of origin.

#include <cstdint>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psilvm/dataio.hpp"
#include "psilvm/errors.hpp"

namespace {

using namespace psilvm;

std::vector<std::string> feature_header(int d) {
    std::vector<std::string> h;
    h.reserve(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) h.push_back("f" + std::to_string(j));
    return h;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"psilvm-synth: generate the synthetic dataset fixtures"};
    app.require_subcommand(1);

    int flow_n = 1000;
    std::uint64_t flow_seed = 1;
    std::string flow_out = "data/flow.csv";
    CLI::App* flow_cmd = app.add_subcommand(
        "flow", "12-attribute, 3-class manifold data (flow-regime style)");
    flow_cmd->add_option("--n", flow_n, "total rows")->capture_default_str();
    flow_cmd->add_option("--seed", flow_seed, "generator seed")->capture_default_str();
    flow_cmd->add_option("--out", flow_out, "output CSV path")->capture_default_str();

    int digits_per_class = 60;
    std::uint64_t digits_seed = 1;
    std::string digits_out = "data/digits.csv";
    CLI::App* digits_cmd =
        app.add_subcommand("digits", "10-class 16x16 gray-scale blob images");
    digits_cmd->add_option("--per-class", digits_per_class, "rows per class")
        ->capture_default_str();
    digits_cmd->add_option("--seed", digits_seed, "generator seed")->capture_default_str();
    digits_cmd->add_option("--out", digits_out, "output CSV path")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (flow_cmd->parsed()) {
            const Dataset ds = make_flow_dataset(flow_n, flow_seed);
            write_labeled_csv(flow_out, feature_header(static_cast<int>(ds.features.cols())),
                              ds.features, ds.labels);
            std::fprintf(stderr, "wrote %s (%ld rows)\n", flow_out.c_str(),
                         static_cast<long>(ds.features.rows()));
        }
        if (digits_cmd->parsed()) {
            const Dataset ds = make_digits_dataset(digits_per_class, digits_seed);
            write_labeled_csv(digits_out, feature_header(static_cast<int>(ds.features.cols())),
                              ds.features, ds.labels);
            std::fprintf(stderr, "wrote %s (%ld rows)\n", digits_out.c_str(),
                         static_cast<long>(ds.features.rows()));
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
