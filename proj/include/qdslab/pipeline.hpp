#ifndef QDSLAB_PIPELINE_HPP
#define QDSLAB_PIPELINE_HPP

#include "qdslab/coincidence.hpp"
#include "qdslab/photon_sim.hpp"

#include <array>
#include <utility>

namespace qdslab {

/// Logical detector combinations used to calibrate one pair's delays. They
/// form a spanning tree over the eight logical detectors of the two users.
inline constexpr std::array<std::pair<int, int>, 7> kCalibrationCombos{{
    {0, 1}, {1, 0}, {2, 2}, {3, 3}, {0, 2}, {0, 3}, {1, 2}}};

struct DelayCalibration {
    PairDelays delays;
    std::array<DelayEstimate, kCalibrationCombos.size()> edges;
};

/// Runs one simulation per combination with every other mux input blocked,
/// locates each correlation peak and solves for per-detector offsets.
/// Throws NoSignificantPeak if any run lacks a peak.
DelayCalibration calibrate_pair_delays(const SimConfig& base, UserPair pair, const DelayOptions& options = {});

struct PairAnalysis {
    UserPair pair;
    CoincidenceSet coincidences;
    SiftedKeyPair sifted;
    QberReport report;  // valid only if coincidences are present
    bool has_report = false;
};

PairAnalysis analyze_pair(const std::array<TagStream, kUsers>& streams, UserPair pair, const PairDelays& delays,
                          double window_ps = kDefaultWindowPs);

}  // namespace qdslab

#endif
