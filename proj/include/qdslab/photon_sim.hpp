#ifndef QDSLAB_PHOTON_SIM_HPP
#define QDSLAB_PHOTON_SIM_HPP

#include "qdslab/noise_model.hpp"
#include "qdslab/params.hpp"
#include "qdslab/tag_stream.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace qdslab {

enum class Basis : std::uint8_t { Z = 0, X = 1 };

/// Each user has one physical detector channel per basis. The two outputs of
/// a basis share it through different fiber delays, giving four logical
/// detectors indexed basis * 2 + bit.
inline constexpr int kLogicalDetectors = 4;
inline constexpr std::uint32_t kPhysicalChannels = 2;

constexpr int logical_index(int basis, int bit) { return basis * 2 + bit; }
constexpr int logical_basis(int logical) { return logical / 2; }
constexpr int logical_bit(int logical) { return logical % 2; }

using LogicalDelays = std::array<std::int64_t, kLogicalDetectors>;

/// Arrival-time offsets of every logical detector, plus a per-user clock offset.
struct MuxLayout {
    std::array<LogicalDelays, kUsers> delay_ps{};
    std::array<std::int64_t, kUsers> user_offset_ps{};

    /// Offset of logical detector l of user u relative to the emission time.
    [[nodiscard]] std::int64_t total(User u, int l) const {
        const auto i = static_cast<std::size_t>(u);
        return user_offset_ps[i] + delay_ps[i][static_cast<std::size_t>(l)];
    }

    /// Delays {0,1,2,3}, {0,4,8,12} and {0,16,32,48} units of 4 windows for
    /// Alice, Bob and Charlie. Every pair's 16 relative offsets are then
    /// distinct multiples of the unit.
    static MuxLayout standard(double window_ps);

    /// Non-negative offsets, per-user delays at least 4 windows apart, and for
    /// every user pair the 16 relative offsets separated by more than a window.
    void validate(double window_ps) const;
};

struct SimConfig {
    SystemParams params;
    double duration_s = 1e-3;
    std::uint64_t windows = 0;  // overrides duration_s when nonzero
    double window_ps = 2000.0;  // coincidence window, full width
    double jitter_ps = 100.0;   // Gaussian sigma, truncated at 3 sigma
    std::uint64_t seed = 1;
    MuxLayout mux = MuxLayout::standard(2000.0);
    /// Blocks individual mux inputs (used for delay calibration).
    std::array<std::array<bool, kLogicalDetectors>, kUsers> transmit{{
        {true, true, true, true}, {true, true, true, true}, {true, true, true, true}}};
    /// >= 0 forces every window to carry exactly this many pairs.
    int forced_pairs = -1;
    bool record_truth = true;

    [[nodiscard]] std::uint64_t total_windows() const;
    void validate() const;
};

/// Per-user detection and misalignment used by the window engine.
struct UserChannel {
    double transmission = 0.0;
    double flip_z = 0.0;
    double flip_x = 0.0;
    double dark = 0.0;  // per logical detector per window
};

struct EngineSpec {
    double lambda = 0.0;
    std::array<UserChannel, kUsers> users{};
};

/// Three-user engine. Per-user flip probabilities are chosen so that every
/// pair's combined error matches its two-sided misalignment: with c = 1 - 2e,
/// c_A = c_AB c_AC / c_BC and cyclically.
EngineSpec engine_spec(const SystemParams& params);

/// Two-user engine mirroring the analytic model for one pair: both users
/// flip with the pair's misalignment and see the pair's dark-count
/// probability; the third user receives nothing.
EngineSpec oracle_spec(const SystemParams& params, UserPair pair);

/// Post-selected outcome of one user in one window.
struct UserOutcome {
    std::uint8_t clicks = 0;  // bit l set if logical detector l clicked
    std::int8_t basis = -1;   // -1: no click or cross-basis clicks (discarded)
    std::int8_t bit = 0;
};

/// Applies the post-selection rules: no click or clicks in both bases are
/// discarded, a same-basis double click gets random_bit, a single click is kept.
UserOutcome post_select(std::uint8_t clicks, bool random_bit);

/// Sifted-key correctness for the source: Z outcomes anticorrelated, X correlated.
constexpr bool is_error(int basis, int bit_a, int bit_b) {
    return basis == 0 ? bit_a == bit_b : bit_a != bit_b;
}

struct WindowRecord {
    std::uint64_t window = 0;
    std::uint8_t pairs = 0;
    std::array<UserOutcome, kUsers> users{};
};

struct PairTally {
    std::array<std::uint64_t, 2> sifted{};  // per basis
    std::array<std::uint64_t, 2> errors{};
    std::uint64_t cross_basis = 0;

    void add(const UserOutcome& a, const UserOutcome& b);
    PairTally& operator+=(const PairTally& o);
    [[nodiscard]] double qber(int basis) const;
};

struct GroundTruth {
    std::uint64_t windows = 0;
    std::vector<WindowRecord> records;  // windows with at least one click, ascending
    std::array<PairTally, kPairs> tallies{};
    std::array<std::uint64_t, kUsers> clicks{};
};

struct SimResult {
    std::array<TagStream, kUsers> streams;
    GroundTruth truth;
};

/// Deterministic given the config; chunks of windows run in parallel from
/// sub-seeds (seed, chunk) and are merged in order.
SimResult simulate_run(const SimConfig& config);

struct OracleEstimate {
    GainQber gain;  // q_total = (sifted_z + sifted_x) / (2 W)
    double q_se = 0.0;
    double e_z_se = 0.0;
    double e_x_se = 0.0;
    PairTally tally;
    std::uint64_t windows = 0;
};

/// Monte Carlo gain and per-basis QBER for one pair using oracle_spec.
/// Requires at least 1e6 windows.
OracleEstimate oracle_gain_qber(const SimConfig& config, UserPair pair);

/// Same as oracle_gain_qber for an explicit engine.
OracleEstimate run_oracle(const EngineSpec& spec, UserPair pair, std::uint64_t windows, std::uint64_t seed,
                          int forced_pairs = -1);

}  // namespace qdslab

#endif
