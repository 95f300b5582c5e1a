#ifndef QDSLAB_CONFIG_HPP
#define QDSLAB_CONFIG_HPP

#include "qdslab/params.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace qdslab {

/// Parse or validation failure. line is 0 when the problem is not tied to a line.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& message);
    [[nodiscard]] int line() const { return line_; }

private:
    int line_ = 0;
};

/// Value of one flat `key = value` entry: boolean, number, string or an
/// array of numbers.
using ConfigValue = std::variant<bool, double, std::string, std::vector<double>>;

struct ConfigEntry {
    ConfigValue value;
    int line = 0;
};

/// Flat TOML subset: comments, bare keys, basic strings, numbers (with
/// underscores and exponents), booleans and one-line numeric arrays. Tables,
/// duplicate keys and malformed lines are errors.
std::map<std::string, ConfigEntry> parse_flat_toml(std::istream& in, const std::string& source = "<config>");

/// Everything the commands read from a configuration file.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string preset = "current";  // current | improved | desk
    SystemParams params = SystemParams::current();
    std::vector<UserPair> pairs{kAllPairs.begin(), kAllPairs.end()};

    // gen
    double duration_s = 1e-3;
    double window_ps = 2000.0;
    double jitter_ps = 100.0;

    // sweep
    double sweep_min_db = 0.0;
    double sweep_max_db = 60.0;
    double sweep_step_db = 1.0;
    double fiber_db_per_km = 0.2;

    // calibrate
    std::uint32_t calibration_samples = 2000;
    int calibration_max_cycles = 10;

    // extract: counts from a JSON file, from explicit values, or generated
    // from the model with the pair's link budget.
    std::string counts_file;
    std::optional<double> counts_s_a;
    std::optional<double> counts_s_b;
    std::optional<double> counts_c_ab;
    double counts_tau_s = 30.0;
    bool fit_d0 = false;

    // qds
    int message_bit = 0;
    bool forge = false;
    std::uint64_t qds_max_windows = 5'000'000'000;

    std::string out_dir = ".";

    /// Applies every key; throws ConfigError on unknown keys, wrong types,
    /// missing seed or out-of-range values.
    static ExperimentConfig from_entries(const std::map<std::string, ConfigEntry>& entries,
                                         const std::string& source = "<config>");
    static ExperimentConfig load(const std::filesystem::path& path);
    static ExperimentConfig parse(const std::string& text, const std::string& source = "<config>");

    /// Documented keys with units, for `--help`-style listings.
    static const std::vector<std::pair<std::string, std::string>>& keys();
};

/// "AB,AC" -> pairs; throws ConfigError on unknown or repeated labels.
std::vector<UserPair> parse_pair_list(const std::string& text);

}  // namespace qdslab

#endif
