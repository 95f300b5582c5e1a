#ifndef QDSLAB_COINCIDENCE_HPP
#define QDSLAB_COINCIDENCE_HPP

#include "qdslab/photon_sim.hpp"
#include "qdslab/tag_stream.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace qdslab {

/// Counts of t_b - t_a over [-range_ps, range_ps) in bins of bin_ps.
struct Histogram {
    std::int64_t bin_ps = 0;
    std::int64_t range_ps = 0;
    std::vector<std::uint64_t> counts;

    [[nodiscard]] double bin_center(std::size_t i) const {
        return double(-range_ps) + (double(i) + 0.5) * double(bin_ps);
    }
    [[nodiscard]] std::uint64_t total() const;
    Histogram& operator+=(const Histogram& o);
};

using Timestamps = std::span<const std::uint64_t>;

/// Sorted two-pointer sweep. Both inputs must be sorted ascending.
Histogram cross_correlate(Timestamps a, Timestamps b, std::int64_t bin_ps, std::int64_t range_ps);

/// Splits a into `chunks` pieces, correlates them in parallel and sums the
/// partial histograms. Result is identical to cross_correlate.
Histogram cross_correlate_chunked(Timestamps a, Timestamps b, std::int64_t bin_ps, std::int64_t range_ps,
                                  std::size_t chunks);

class NoSignificantPeak : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DelayOptions {
    std::int64_t bin_ps = 100;
    std::int64_t range_ps = 1'000'000;
    double sigma_threshold = 5.0;  // peak >= mean + k * stddev of off-peak bins
    int refine_bins = 3;           // centroid half-width
    double false_alarm = 1e-3;     // Poisson tail of the peak, times the bin count
};

struct DelayEstimate {
    double delay_ps = 0.0;
    double peak_center_ps = 0.0;
    std::uint64_t peak_counts = 0;
    double background_mean = 0.0;
    double background_sd = 0.0;
    double false_alarm_p = 1.0;
    Histogram histogram;
};

/// Locates the single correlation peak between two channels.
/// Throws NoSignificantPeak when the maximum is consistent with background.
DelayEstimate find_delay(Timestamps a, Timestamps b, const DelayOptions& options = {});

/// Expected t_b - t_a for every pair of logical detectors of a user pair.
struct PairDelays {
    std::array<std::array<double, kLogicalDetectors>, kLogicalDetectors> offset_ps{};

    static PairDelays from_logical(const std::array<double, kLogicalDetectors>& a,
                                   const std::array<double, kLogicalDetectors>& b);
    static PairDelays from_layout(const MuxLayout& mux, UserPair pair);

    /// Per-logical offsets consistent with the table, with a's Z0 at 0.
    [[nodiscard]] std::array<double, kLogicalDetectors> logical_a() const;
    [[nodiscard]] std::array<double, kLogicalDetectors> logical_b() const;
    [[nodiscard]] PairDelays swapped() const;

    /// The table must come from per-logical offsets, and the four offsets
    /// sharing a physical channel pair must be more than a window apart.
    void validate(double window_ps) const;
};

/// Pairs with |t_b - t_a - delay_ps| <= window_ps / 2.
std::uint64_t count_coincidences(Timestamps a, Timestamps b, double delay_ps, double window_ps);

struct Coincidence {
    std::uint64_t t_a = 0;
    std::uint64_t t_b = 0;
    std::int8_t basis_a = 0;
    std::int8_t bit_a = 0;
    std::int8_t basis_b = 0;
    std::int8_t bit_b = 0;
};

struct ExtractionDiagnostics {
    std::uint64_t matches = 0;       // tag pairs inside the window of some logical combination
    std::uint64_t clusters = 0;      // matches grouped by emission time
    std::uint64_t ambiguous = 0;     // two distinct tags on one logical detector
    std::uint64_t cross_basis = 0;   // a user clicked in both bases
    std::uint64_t double_clicks = 0; // same-basis double click resolved by a random bit
};

struct CoincidenceSet {
    std::vector<Coincidence> events;
    ExtractionDiagnostics diagnostics;
};

inline constexpr double kDefaultWindowPs = 2000.0;

/// Matches tags of all 16 logical combinations, groups matches by emission
/// time and applies the post-selection rules per user. A window of 0 yields
/// no coincidences.
CoincidenceSet extract_coincidences(const TagStream& a, const TagStream& b, const PairDelays& delays,
                                    double window_ps = kDefaultWindowPs);

struct SiftedEvent {
    std::uint64_t t = 0;
    std::int8_t basis = 0;
    std::uint8_t bit_a = 0;
    std::uint8_t bit_b = 0;
};

/// Same-basis events with the second user's Z bits flipped, so equal bits
/// mean agreement in both bases.
struct SiftedKeyPair {
    std::vector<SiftedEvent> events;
    std::uint64_t cross_basis = 0;

    /// All bits in event order, or one basis only.
    [[nodiscard]] std::vector<std::uint8_t> bits_a(std::optional<int> basis = std::nullopt) const;
    [[nodiscard]] std::vector<std::uint8_t> bits_b(std::optional<int> basis = std::nullopt) const;
    [[nodiscard]] std::uint64_t count(int basis) const;
    [[nodiscard]] std::uint64_t mismatches(int basis) const;
};

SiftedKeyPair sift(std::span<const Coincidence> coincidences, bool flip_second_z = true);

/// Rows: first user's (Z0, Z1, X0, X1). Columns: second user's, Z bit flipped.
struct CrosstalkMatrix {
    std::array<std::array<std::uint64_t, 4>, 4> counts{};
    std::array<std::array<double, 4>, 4> prob{};
    std::uint64_t total = 0;
};

struct QberReport {
    CrosstalkMatrix matrix;
    std::optional<double> qber_z;  // empty when the Z submatrix is empty
    std::optional<double> qber_x;
    std::array<std::uint64_t, 2> basis_counts{};  // same-basis submatrix totals
    double z_fraction_a = 0.0;  // effective basis-choice ratio of each user
    double z_fraction_b = 0.0;
};

/// Throws std::invalid_argument on an empty coincidence set.
QberReport crosstalk_and_qber(std::span<const Coincidence> coincidences);

void write_histogram_csv(std::ostream& out, const Histogram& h);
void write_crosstalk_csv(std::ostream& out, const CrosstalkMatrix& m);
/// [{pair, basis, qber, counts, timestamp}]; timestamp is the last
/// coincidence time in ps, which keeps reruns byte-identical.
nlohmann::json qber_summary_json(const std::string& pair, const QberReport& report, std::uint64_t timestamp_ps);

}  // namespace qdslab

#endif
