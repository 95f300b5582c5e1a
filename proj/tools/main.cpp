#include "commands.hpp"

#include "qdslab/param_extract.hpp"
#include "qdslab/tag_stream.hpp"

#include <iostream>
#include <optional>

#include "CLI11.hpp"

using namespace qdslab;

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string pairs;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config, "Flat TOML configuration file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", flags.out, "Output directory (overrides out_dir)");
    cmd->add_option("--seed", flags.seed, "Seed (overrides the config seed)");
    cmd->add_option("--pairs", flags.pairs, "Comma-separated pairs, e.g. AB,AC (overrides pairs)");
}

ExperimentConfig load(const CommonFlags& flags) {
    auto config = ExperimentConfig::load(flags.config);
    if (!flags.out.empty()) config.out_dir = flags.out;
    if (flags.seed) config.seed = *flags.seed;
    if (!flags.pairs.empty()) config.pairs = parse_pair_list(flags.pairs);
    return config;
}

template <class F>
int run_guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return cli::kValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return cli::kValidation;
    } catch (const TagFormatError& e) {
        std::cerr << "invalid tag stream: " << e.what() << '\n';
        return cli::kValidation;
    } catch (const InsufficientStatistics& e) {
        std::cerr << "invalid counts: " << e.what() << '\n';
        return cli::kValidation;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "invalid JSON input: " << e.what() << '\n';
        return cli::kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cli::kFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Three-party quantum digital signature lab: models, simulation, analysis and protocol runs"};
    app.require_subcommand(0, 1);
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "Print every configuration key with its unit and exit");

    CommonFlags flags;
    std::string in_dir;
    auto* simulate = app.add_subcommand("simulate", "Analytic gain and QBER per pair and basis");
    auto* sweep = app.add_subcommand("sweep", "Signature length and rate versus channel loss");
    auto* gen = app.add_subcommand("gen", "Simulate time-tag streams with ground truth");
    auto* analyze = app.add_subcommand("analyze", "Coincidences, crosstalk and QBER from tag streams");
    auto* calibrate = app.add_subcommand("calibrate", "Coordinate-descent calibration of a simulated plant");
    auto* extract = app.add_subcommand("extract", "Fit lambda and transmissions from singles and coincidences");
    auto* qds = app.add_subcommand("qds", "End-to-end signature distribution, signing and verification");
    for (auto* cmd : {simulate, sweep, gen, analyze, calibrate, extract, qds}) add_common(cmd, flags);
    analyze->add_option("--in", in_dir, "Directory with the gen outputs (default: the output directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::kValidation;
    }

    if (list_keys) {
        for (const auto& [key, doc] : ExperimentConfig::keys()) std::cout << key << "  " << doc << '\n';
        return cli::kOk;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return cli::kValidation;
    }

    auto* cmd = app.get_subcommands().front();
    return run_guarded([&] {
        const auto config = load(flags);
        auto& log = std::cout;
        if (cmd == simulate) return cli::cmd_simulate(config, log);
        if (cmd == sweep) return cli::cmd_sweep(config, log);
        if (cmd == gen) return cli::cmd_gen(config, log);
        if (cmd == analyze) return cli::cmd_analyze(config, in_dir.empty() ? config.out_dir : in_dir, log);
        if (cmd == calibrate) return cli::cmd_calibrate(config, log);
        if (cmd == extract) return cli::cmd_extract(config, log);
        return cli::cmd_qds(config, log);
    });
}
