#include "qdslab/config.hpp"

#include "qdslab/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>

namespace qdslab {

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + message : source + ": " + message),
      line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

// Number per TOML: optional sign, digits with single underscores between
// them, optional fraction and exponent. inf/nan are rejected.
std::optional<double> parse_number(std::string_view text) {
    std::string digits;
    char prev = '\0';
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '_') {
            const bool ok = i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(prev)) &&
                            std::isdigit(static_cast<unsigned char>(text[i + 1]));
            if (!ok) return std::nullopt;
        } else {
            if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == 'e' || c == 'E' || c == '+' ||
                  c == '-'))
                return std::nullopt;
            digits.push_back(c);
        }
        prev = c;
    }
    if (digits.empty()) return std::nullopt;
    std::string_view body = digits;
    if (body.front() == '+') body.remove_prefix(1);
    if (body.empty() || body.front() == '.' || body.back() == '.') return std::nullopt;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
    if (ec != std::errc{} || ptr != body.data() + body.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

std::string parse_string(std::string_view text, const std::string& source, int line) {
    // text starts and ends with a double quote
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
        char c = text[i];
        if (c == '"') throw ConfigError(source, line, "unexpected quote inside string");
        if (c == '\\') {
            if (i + 2 >= text.size()) throw ConfigError(source, line, "dangling escape in string");
            const char e = text[++i];
            switch (e) {
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                default: throw ConfigError(source, line, std::string("unsupported escape \\") + e);
            }
        }
        out.push_back(c);
    }
    return out;
}

// Drops a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (in_string && s[i] == '\\') {
            ++i;
            continue;
        }
        if (s[i] == '"') in_string = !in_string;
        if (s[i] == '#' && !in_string) return s.substr(0, i);
    }
    return s;
}

ConfigValue parse_value(std::string_view text, const std::string& source, int line) {
    if (text.empty()) throw ConfigError(source, line, "missing value");
    if (text == "true") return true;
    if (text == "false") return false;
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"') throw ConfigError(source, line, "unterminated string");
        return parse_string(text, source, line);
    }
    if (text.front() == '[') {
        if (text.back() != ']') throw ConfigError(source, line, "arrays must close on the same line");
        std::vector<double> values;
        std::string_view body = trim(text.substr(1, text.size() - 2));
        while (!body.empty()) {
            const auto comma = body.find(',');
            const auto item = trim(body.substr(0, comma));
            if (item.empty()) {
                if (comma == std::string_view::npos) break;  // trailing comma
                throw ConfigError(source, line, "empty array element");
            }
            const auto v = parse_number(item);
            if (!v) throw ConfigError(source, line, "array elements must be numbers, got '" + std::string(item) + "'");
            values.push_back(*v);
            if (comma == std::string_view::npos) break;
            body = trim(body.substr(comma + 1));
        }
        return values;
    }
    if (const auto v = parse_number(text)) return *v;
    throw ConfigError(source, line, "cannot parse value '" + std::string(text) + "'");
}

std::string type_name(const ConfigValue& v) {
    switch (v.index()) {
        case 0: return "boolean";
        case 1: return "number";
        case 2: return "string";
        default: return "array";
    }
}

}  // namespace

std::map<std::string, ConfigEntry> parse_flat_toml(std::istream& in, const std::string& source) {
    std::map<std::string, ConfigEntry> out;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto text = trim(strip_comment(raw));
        if (text.empty()) continue;
        if (text.front() == '[') throw ConfigError(source, line, "tables are not supported; use flat keys");
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ConfigError(source, line, "expected key = value");
        const auto key = trim(text.substr(0, eq));
        if (key.empty() || !std::all_of(key.begin(), key.end(), bare_key_char))
            throw ConfigError(source, line, "invalid key '" + std::string(key) + "'");
        auto value = parse_value(trim(text.substr(eq + 1)), source, line);
        const auto [it, inserted] = out.emplace(std::string(key), ConfigEntry{std::move(value), line});
        if (!inserted)
            throw ConfigError(source, line,
                              "duplicate key '" + std::string(key) + "' (first set on line " +
                                  std::to_string(it->second.line) + ")");
    }
    return out;
}

std::vector<UserPair> parse_pair_list(const std::string& text) {
    std::vector<UserPair> pairs;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto label = trim(item);
        if (label.empty()) continue;
        UserPair p;
        try {
            p = UserPair::parse(label);
        } catch (const std::exception& e) {
            throw ConfigError("pairs", 0, e.what());
        }
        if (std::find(pairs.begin(), pairs.end(), p) != pairs.end())
            throw ConfigError("pairs", 0, "pair " + p.label() + " listed twice");
        pairs.push_back(p);
    }
    if (pairs.empty()) throw ConfigError("pairs", 0, "empty pair list");
    return pairs;
}

const std::vector<std::pair<std::string, std::string>>& ExperimentConfig::keys() {
    static const std::vector<std::pair<std::string, std::string>> k{
        {"seed", "integer, required; base seed of every random stream"},
        {"preset", "\"current\" (default), \"improved\" or \"desk\"; other keys override it"},
        {"pairs", "string, comma-separated pair labels, default \"AB,AC,BC\""},
        {"eta0", "source internal transmission, 0..1"},
        {"lambda", "half the mean pair number per window"},
        {"t1", "splitter fraction to Alice, 0..1"},
        {"rep_rate_hz", "windows per second, Hz"},
        {"channel_loss_db", "[Alice, Bob, Charlie] channel loss, dB"},
        {"det_eff", "[Alice, Bob, Charlie] detector efficiency, 0..1"},
        {"dark_prob", "[Alice, Bob, Charlie] dark count probability per window"},
        {"misalign_x", "[AB, AC, BC] X-basis misalignment error"},
        {"misalign_z", "[AB, AC, BC] Z-basis misalignment error"},
        {"epsilon", "security parameter"},
        {"f_ec", "error-correction inefficiency"},
        {"duration_s", "gen: simulated time, s"},
        {"window_ps", "gen/analyze: coincidence window full width, ps"},
        {"jitter_ps", "gen: detector timing jitter sigma, ps"},
        {"sweep_min_db", "sweep: first channel loss, dB"},
        {"sweep_max_db", "sweep: last channel loss, dB"},
        {"sweep_step_db", "sweep: loss step, dB"},
        {"fiber_db_per_km", "sweep: fiber attenuation for the distance column, dB/km"},
        {"calibration_samples", "calibrate: coincidences per QBER measurement"},
        {"calibration_max_cycles", "calibrate: cycle limit"},
        {"counts_file", "extract: JSON file with s_a, s_b, c_ab and optional tau_s, rep_rate_hz"},
        {"counts_s_a", "extract: Alice singles over tau_s"},
        {"counts_s_b", "extract: Bob singles over tau_s"},
        {"counts_c_ab", "extract: coincidences over tau_s"},
        {"counts_tau_s", "extract: integration time, s"},
        {"fit_d0", "extract: also fit the dark count probability"},
        {"message_bit", "qds: message to sign, 0 or 1"},
        {"forge", "qds: replace the signature by random bits"},
        {"qds_max_windows", "qds: cap on simulated detection windows, count"},
        {"out_dir", "output directory, default \".\""},
    };
    return k;
}

ExperimentConfig ExperimentConfig::from_entries(const std::map<std::string, ConfigEntry>& entries,
                                                const std::string& source) {
    std::set<std::string> known;
    for (const auto& [k, _] : keys()) known.insert(k);
    for (const auto& [k, e] : entries)
        if (!known.count(k)) throw ConfigError(source, e.line, "unknown key '" + k + "'");

    ExperimentConfig c;
    auto fail = [&](const std::string& key, const std::string& msg) -> ConfigError {
        const auto it = entries.find(key);
        return ConfigError(source, it == entries.end() ? 0 : it->second.line, key + ": " + msg);
    };
    auto get = [&](const std::string& key) -> const ConfigValue* {
        const auto it = entries.find(key);
        return it == entries.end() ? nullptr : &it->second.value;
    };
    auto number = [&](const std::string& key, double& dst) {
        if (const auto* v = get(key)) {
            if (!std::holds_alternative<double>(*v)) throw fail(key, "expected a number, got " + type_name(*v));
            dst = std::get<double>(*v);
        }
    };
    auto integer = [&](const std::string& key, auto& dst, double lo, double hi) {
        double x = 0.0;
        if (!get(key)) return;
        number(key, x);
        if (x != std::floor(x) || x < lo || x > hi) throw fail(key, "expected an integer in range");
        dst = static_cast<std::remove_reference_t<decltype(dst)>>(x);
    };
    auto boolean = [&](const std::string& key, bool& dst) {
        if (const auto* v = get(key)) {
            if (!std::holds_alternative<bool>(*v)) throw fail(key, "expected true or false, got " + type_name(*v));
            dst = std::get<bool>(*v);
        }
    };
    auto string = [&](const std::string& key, std::string& dst) {
        if (const auto* v = get(key)) {
            if (!std::holds_alternative<std::string>(*v)) throw fail(key, "expected a string, got " + type_name(*v));
            dst = std::get<std::string>(*v);
        }
    };
    auto triple = [&](const std::string& key, std::array<double, 3>& dst) {
        if (const auto* v = get(key)) {
            if (!std::holds_alternative<std::vector<double>>(*v))
                throw fail(key, "expected an array of 3 numbers, got " + type_name(*v));
            const auto& a = std::get<std::vector<double>>(*v);
            if (a.size() != 3) throw fail(key, "expected 3 elements, got " + std::to_string(a.size()));
            std::copy(a.begin(), a.end(), dst.begin());
        }
    };

    if (!get("seed")) throw ConfigError(source, 0, "missing required key 'seed'");
    // 2^53 keeps every seed exactly representable as a TOML float.
    integer("seed", c.seed, 0.0, 9007199254740992.0);

    string("preset", c.preset);
    if (c.preset == "current")
        c.params = SystemParams::current();
    else if (c.preset == "improved")
        c.params = SystemParams::improved();
    else if (c.preset == "desk")
        c.params = desk_params();
    else
        throw fail("preset", "unknown preset '" + c.preset + "'");

    if (get("pairs")) {
        std::string list;
        string("pairs", list);
        try {
            c.pairs = parse_pair_list(list);
        } catch (const ConfigError& e) {
            throw fail("pairs", e.what());
        }
    }

    auto& p = c.params;
    number("eta0", p.eta0);
    number("lambda", p.lambda);
    number("t1", p.t1);
    number("rep_rate_hz", p.rep_rate_hz);
    triple("channel_loss_db", p.channel_loss_db);
    triple("det_eff", p.det_eff);
    triple("dark_prob", p.dark_prob);
    triple("misalign_x", p.misalign_x);
    triple("misalign_z", p.misalign_z);
    number("epsilon", p.epsilon);
    number("f_ec", p.f_ec);
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        // point at the first key named in the message
        const std::string msg = e.what();
        for (const auto& [k, entry] : entries)
            if (msg.find(k) != std::string::npos) throw ConfigError(source, entry.line, msg);
        throw ConfigError(source, 0, msg);
    }

    number("duration_s", c.duration_s);
    number("window_ps", c.window_ps);
    number("jitter_ps", c.jitter_ps);
    if (!(c.duration_s > 0.0)) throw fail("duration_s", "must be positive");
    if (!(c.window_ps > 0.0)) throw fail("window_ps", "must be positive");
    if (!(c.jitter_ps >= 0.0)) throw fail("jitter_ps", "must be non-negative");

    number("sweep_min_db", c.sweep_min_db);
    number("sweep_max_db", c.sweep_max_db);
    number("sweep_step_db", c.sweep_step_db);
    number("fiber_db_per_km", c.fiber_db_per_km);
    if (!(c.sweep_min_db >= 0.0)) throw fail("sweep_min_db", "must be non-negative");
    if (!(c.sweep_max_db >= c.sweep_min_db)) throw fail("sweep_max_db", "must be at least sweep_min_db");
    if (!(c.sweep_step_db > 0.0)) throw fail("sweep_step_db", "must be positive");
    if (!(c.fiber_db_per_km > 0.0)) throw fail("fiber_db_per_km", "must be positive");

    integer("calibration_samples", c.calibration_samples, 1.0, 1e9);
    integer("calibration_max_cycles", c.calibration_max_cycles, 1.0, 1000.0);

    string("counts_file", c.counts_file);
    auto optional_count = [&](const std::string& key, std::optional<double>& dst) {
        if (!get(key)) return;
        double x = 0.0;
        number(key, x);
        if (!(x > 0.0)) throw fail(key, "must be positive");
        dst = x;
    };
    optional_count("counts_s_a", c.counts_s_a);
    optional_count("counts_s_b", c.counts_s_b);
    optional_count("counts_c_ab", c.counts_c_ab);
    const int explicit_counts = int(c.counts_s_a.has_value()) + int(c.counts_s_b.has_value()) +
                                int(c.counts_c_ab.has_value());
    if (explicit_counts != 0 && explicit_counts != 3)
        throw ConfigError(source, 0, "counts_s_a, counts_s_b and counts_c_ab must be given together");
    if (explicit_counts == 3 && !c.counts_file.empty())
        throw fail("counts_file", "give either counts_file or explicit counts, not both");
    number("counts_tau_s", c.counts_tau_s);
    if (!(c.counts_tau_s > 0.0)) throw fail("counts_tau_s", "must be positive");
    boolean("fit_d0", c.fit_d0);

    integer("message_bit", c.message_bit, 0.0, 1.0);
    boolean("forge", c.forge);
    integer("qds_max_windows", c.qds_max_windows, 1.0, 1e15);
    string("out_dir", c.out_dir);
    return c;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    return from_entries(parse_flat_toml(in, source), source);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), 0, "cannot open file");
    return from_entries(parse_flat_toml(in, path.string()), path.string());
}

}  // namespace qdslab
