#include "qdslab/pipeline.hpp"

#include "qdslab/parallel.hpp"

#include <optional>

namespace qdslab {

DelayCalibration calibrate_pair_delays(const SimConfig& base, UserPair pair, const DelayOptions& options) {
    const auto ia = static_cast<std::size_t>(pair.first);
    const auto ib = static_cast<std::size_t>(pair.second);
    DelayCalibration out;
    for (std::size_t k = 0; k < kCalibrationCombos.size(); ++k) {
        const auto [la, lb] = kCalibrationCombos[k];
        SimConfig cfg = base;
        cfg.seed = mix64(base.seed ^ (0xca1bull + k));
        cfg.record_truth = false;
        for (auto& row : cfg.transmit) row.fill(false);
        cfg.transmit[ia][static_cast<std::size_t>(la)] = true;
        cfg.transmit[ib][static_cast<std::size_t>(lb)] = true;
        const SimResult sim = simulate_run(cfg);
        const auto ta = sim.streams[ia].channel_times(static_cast<std::uint16_t>(logical_basis(la)));
        const auto tb = sim.streams[ib].channel_times(static_cast<std::uint16_t>(logical_basis(lb)));
        out.edges[k] = find_delay(ta, tb, options);
    }

    std::array<std::optional<double>, kLogicalDetectors> a;
    std::array<std::optional<double>, kLogicalDetectors> b;
    a[0] = 0.0;
    for (bool progress = true; progress;) {
        progress = false;
        for (std::size_t k = 0; k < kCalibrationCombos.size(); ++k) {
            const auto la = static_cast<std::size_t>(kCalibrationCombos[k].first);
            const auto lb = static_cast<std::size_t>(kCalibrationCombos[k].second);
            const double d = out.edges[k].delay_ps;
            if (a[la] && !b[lb]) {
                b[lb] = *a[la] + d;
                progress = true;
            } else if (b[lb] && !a[la]) {
                a[la] = *b[lb] - d;
                progress = true;
            }
        }
    }
    std::array<double, kLogicalDetectors> da{};
    std::array<double, kLogicalDetectors> db{};
    for (std::size_t l = 0; l < kLogicalDetectors; ++l) {
        da[l] = a[l].value();
        db[l] = b[l].value();
    }
    out.delays = PairDelays::from_logical(da, db);
    return out;
}

PairAnalysis analyze_pair(const std::array<TagStream, kUsers>& streams, UserPair pair, const PairDelays& delays,
                          double window_ps) {
    PairAnalysis out;
    out.pair = pair;
    out.coincidences = extract_coincidences(streams[static_cast<std::size_t>(pair.first)],
                                            streams[static_cast<std::size_t>(pair.second)], delays, window_ps);
    out.sifted = sift(out.coincidences.events);
    if (!out.coincidences.events.empty()) {
        out.report = crosstalk_and_qber(out.coincidences.events);
        out.has_report = true;
    }
    return out;
}

}  // namespace qdslab
