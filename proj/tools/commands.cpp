#include "commands.hpp"

#include "qdslab/calibration.hpp"
#include "qdslab/coincidence.hpp"
#include "qdslab/noise_model.hpp"
#include "qdslab/param_extract.hpp"
#include "qdslab/pipeline.hpp"
#include "qdslab/protocol.hpp"
#include "qdslab/security.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace qdslab::cli {

namespace fs = std::filesystem;

std::string format_number(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

namespace {

fs::path output_path(const ExperimentConfig& config, const std::string& name) {
    fs::create_directories(config.out_dir);
    return fs::path(config.out_dir) / name;
}

void write_file(const fs::path& path, const std::string& content, std::ostream& log) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
    log << "wrote " << path.string() << '\n';
}

void write_json(const fs::path& path, const nlohmann::json& j, std::ostream& log) {
    write_file(path, j.dump(2) + "\n", log);
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

// Channel loss between the two users of a pair.
double pair_loss_db(const SystemParams& p, UserPair pair) {
    return p.channel_loss_db[static_cast<std::size_t>(pair.first)] +
           p.channel_loss_db[static_cast<std::size_t>(pair.second)];
}

std::string stream_file(User u) {
    std::string name(user_name(u));
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return name + ".tags";
}

}  // namespace

int cmd_simulate(const ExperimentConfig& config, std::ostream& log) {
    std::ostringstream csv, sec;
    csv << "pair,basis,loss_db,qber,gain\n";
    sec << "pair,loss_db,qber,length,rate,aborted\n";
    for (UserPair pair : config.pairs) {
        const auto g = gain_qber(config.params, pair);
        const auto loss = format_number(pair_loss_db(config.params, pair));
        csv << pair.label() << ",Z," << loss << ',' << format_number(g.e_z) << ',' << format_number(g.q_total) << '\n';
        csv << pair.label() << ",X," << loss << ',' << format_number(g.e_x) << ',' << format_number(g.q_total) << '\n';
        const auto r = signature_rate(config.params, pair);
        sec << pair.label() << ',' << loss << ',' << format_number(g.e_avg) << ','
            << (r.aborted ? 0 : r.budget.raw_len) << ',' << format_number(r.rate) << ',' << (r.aborted ? 1 : 0)
            << '\n';
    }
    write_file(output_path(config, "simulate.csv"), csv.str(), log);
    write_file(output_path(config, "security.csv"), sec.str(), log);
    return kOk;
}

int cmd_sweep(const ExperimentConfig& config, std::ostream& log) {
    std::ostringstream csv;
    csv << "pair,loss_db,distance_km,qber_z,qber_x,qber,length,rate,aborted\n";
    const auto steps =
        static_cast<std::uint64_t>(std::floor((config.sweep_max_db - config.sweep_min_db) / config.sweep_step_db + 1e-9));
    for (UserPair pair : config.pairs) {
        for (std::uint64_t i = 0; i <= steps; ++i) {
            const double loss = config.sweep_min_db + double(i) * config.sweep_step_db;
            SystemParams p = config.params;
            p.set_pair_loss(pair, loss);
            const auto r = signature_rate(p, pair);
            csv << pair.label() << ',' << format_number(loss) << ','
                << format_number(loss / config.fiber_db_per_km) << ',' << format_number(r.gain.e_z) << ','
                << format_number(r.gain.e_x) << ',' << format_number(r.gain.e_avg) << ','
                << (r.aborted ? 0 : r.budget.raw_len) << ',' << format_number(r.rate) << ',' << (r.aborted ? 1 : 0)
                << '\n';
        }
    }
    write_file(output_path(config, "sweep.csv"), csv.str(), log);
    return kOk;
}

nlohmann::json mux_json(const MuxLayout& mux, double window_ps) {
    nlohmann::json users = nlohmann::json::array();
    for (std::size_t u = 0; u < kUsers; ++u) {
        users.push_back({{"user", user_name(static_cast<User>(u))},
                         {"offset_ps", mux.user_offset_ps[u]},
                         {"delay_ps", mux.delay_ps[u]}});
    }
    return {{"window_ps", window_ps}, {"users", users}};
}

MuxLayout mux_from_json(const nlohmann::json& j) {
    MuxLayout mux;
    const auto& users = j.at("users");
    if (!users.is_array() || users.size() != kUsers) throw std::invalid_argument("mux.json: expected 3 users");
    for (std::size_t u = 0; u < kUsers; ++u) {
        mux.user_offset_ps[u] = users[u].at("offset_ps").get<std::int64_t>();
        mux.delay_ps[u] = users[u].at("delay_ps").get<LogicalDelays>();
    }
    return mux;
}

int cmd_gen(const ExperimentConfig& config, std::ostream& log) {
    SimConfig sim;
    sim.params = config.params;
    sim.duration_s = config.duration_s;
    sim.window_ps = config.window_ps;
    sim.jitter_ps = config.jitter_ps;
    sim.seed = config.seed;
    sim.mux = MuxLayout::standard(config.window_ps);
    sim.record_truth = false;
    sim.validate();
    const auto result = simulate_run(sim);

    for (std::size_t u = 0; u < kUsers; ++u) {
        const auto path = output_path(config, stream_file(static_cast<User>(u)));
        save_tag_stream(path, result.streams[u]);
        log << "wrote " << path.string() << '\n';
    }

    nlohmann::json truth;
    truth["seed"] = config.seed;
    truth["windows"] = result.truth.windows;
    truth["clicks"] = result.truth.clicks;
    auto& pairs = truth["pairs"] = nlohmann::json::array();
    for (std::size_t p = 0; p < kPairs; ++p) {
        const auto& t = result.truth.tallies[p];
        nlohmann::json row{{"pair", UserPair::from_index(p).label()}, {"cross_basis", t.cross_basis}};
        for (int b = 0; b < 2; ++b) {
            const auto n = t.sifted[std::size_t(b)];
            const double q = t.qber(b);
            row[b == 0 ? "Z" : "X"] = {{"sifted", n},
                                       {"errors", t.errors[std::size_t(b)]},
                                       {"qber", n ? nlohmann::json(q) : nlohmann::json(nullptr)},
                                       {"qber_se", n ? nlohmann::json(std::sqrt(q * (1 - q) / double(n)))
                                                     : nlohmann::json(nullptr)}};
        }
        pairs.push_back(row);
    }
    write_json(output_path(config, "truth.json"), truth, log);
    write_json(output_path(config, "mux.json"), mux_json(sim.mux, config.window_ps), log);
    return kOk;
}

int cmd_analyze(const ExperimentConfig& config, const fs::path& in_dir, std::ostream& log) {
    const auto mux_j = read_json(in_dir / "mux.json");
    const MuxLayout mux = mux_from_json(mux_j);
    std::array<TagStream, kUsers> streams;
    for (std::size_t u = 0; u < kUsers; ++u) streams[u] = load_tag_stream(in_dir / stream_file(static_cast<User>(u)));

    const DelayOptions hist_opts;
    for (UserPair pair : config.pairs) {
        const auto delays = PairDelays::from_layout(mux, pair);
        const auto analysis = analyze_pair(streams, pair, delays, config.window_ps);
        const auto label = pair.label();

        // all tags of one user against all tags of the other
        auto merged = [&](User u) {
            std::vector<std::uint64_t> t;
            for (const auto& r : streams[static_cast<std::size_t>(u)].records) t.push_back(r.timestamp_ps);
            std::sort(t.begin(), t.end());
            return t;
        };
        const auto ta = merged(pair.first);
        const auto tb = merged(pair.second);
        std::ostringstream hist;
        write_histogram_csv(hist, cross_correlate(ta, tb, hist_opts.bin_ps, hist_opts.range_ps));
        write_file(output_path(config, "histogram_" + label + ".csv"), hist.str(), log);

        const auto& events = analysis.coincidences.events;
        // an empty pair still gets its files: zero matrix, null QBERs
        const QberReport report = analysis.has_report ? analysis.report : QberReport{};
        std::ostringstream xt;
        write_crosstalk_csv(xt, report.matrix);
        write_file(output_path(config, "crosstalk_" + label + ".csv"), xt.str(), log);
        const std::uint64_t last = events.empty() ? 0 : events.back().t_a;
        write_json(output_path(config, "qber_" + label + ".json"), qber_summary_json(label, report, last), log);
    }
    return kOk;
}

int cmd_calibrate(const ExperimentConfig& config, std::ostream& log) {
    auto plant = LcvrPlant::random(config.seed, config.params.misalign_z, config.params.misalign_x);
    plant.samples = config.calibration_samples;
    DescentConfig dc;
    dc.samples_per_measurement = config.calibration_samples;
    dc.max_cycles = config.calibration_max_cycles;
    dc.validate();
    const auto result = run_multistate(plant, dc);

    auto j = calibration_log_json(result);
    j["seed"] = config.seed;
    j["samples_per_measurement"] = config.calibration_samples;
    j["floor_z"] = plant.floor_z;
    j["floor_x"] = plant.floor_x;
    j["final_true_qber"] = plant.true_qbers(result.voltages);
    j["optimum_voltages"] = plant.optimum();
    write_json(output_path(config, "calibration.json"), j, log);
    log << "calibration " << (result.converged ? "converged" : "did not converge") << " after " << result.cycles
        << " cycles\n";
    return kOk;
}

int cmd_extract(const ExperimentConfig& config, std::ostream& log) {
    const UserPair pair = config.pairs.front();
    const double d0 = config.params.pair_dark_prob(pair);
    CountTriple counts;
    std::string source;
    nlohmann::json truth;
    if (!config.counts_file.empty()) {
        const auto j = read_json(config.counts_file);
        counts.s_a = j.at("s_a").get<double>();
        counts.s_b = j.at("s_b").get<double>();
        counts.c_ab = j.at("c_ab").get<double>();
        counts.tau_s = j.value("tau_s", config.counts_tau_s);
        counts.rep_rate_hz = j.value("rep_rate_hz", config.params.rep_rate_hz);
        source = "file";
    } else if (config.counts_s_a) {
        counts.s_a = *config.counts_s_a;
        counts.s_b = *config.counts_s_b;
        counts.c_ab = *config.counts_c_ab;
        counts.tau_s = config.counts_tau_s;
        counts.rep_rate_hz = config.params.rep_rate_hz;
        source = "config";
    } else {
        const auto b = link_budget(config.params, pair);
        counts = model_counts(config.params.lambda, b.t_source, b.t_remote, d0, config.params.rep_rate_hz,
                              config.counts_tau_s);
        source = "model";
        truth = {{"lambda", config.params.lambda}, {"t_a", b.t_source}, {"t_b", b.t_remote}, {"d0", d0}};
    }
    counts.validate();
    FitOptions opts;
    opts.fit_d0 = config.fit_d0;
    const auto result = fit_params(counts, d0, opts);
    auto j = extraction_json(counts, result);
    j["pair"] = pair.label();
    j["source"] = source;
    if (!truth.is_null()) j["model_truth"] = truth;
    write_json(output_path(config, "extraction.json"), j, log);
    return kOk;
}

int cmd_qds(const ExperimentConfig& config, std::ostream& log) {
    ProtocolOptions opts;
    opts.epsilon = config.params.epsilon;
    opts.message = config.message_bit;
    opts.seed = config.seed;
    opts.forge = config.forge;
    opts.max_windows = config.qds_max_windows;
    const auto t = end_to_end_run(config.params, opts);
    write_json(output_path(config, "transcript.json"), t.to_json(), log);
    log << "outcome " << outcome_name(t.outcome) << '\n';
    return t.outcome == Outcome::accepted ? kOk : kSecurityAbort;
}

}  // namespace qdslab::cli
