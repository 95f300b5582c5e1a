#ifndef QDSLAB_CALIBRATION_HPP
#define QDSLAB_CALIBRATION_HPP

#include "qdslab/params.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"

namespace qdslab {

/// LCVR indices: 0-1 Alice pre-splitter, 2-3 Bob pre, 4-5 Charlie pre,
/// 6 Alice post (D/A phase), 7 Bob post. Charlie's D/A phase is the reference.
inline constexpr std::size_t kLcvrs = 8;
using Voltages = std::array<double, kLcvrs>;

/// Six measured QBERs, indexed pair * 2 + basis (basis 0 = H/V, 1 = D/A).
inline constexpr std::size_t kPairBases = 6;
using QberVector = std::array<double, kPairBases>;
inline std::size_t pair_basis_index(UserPair p, int basis) { return p.index() * 2 + std::size_t(basis); }

/// Retardance phi(V) = phi_max / (1 + (V / v_half)^2), strictly decreasing for V >= 0.
struct LcvrCurve {
    double phi_max = 3.0 * 3.141592653589793;
    double v_half = 2.0;

    [[nodiscard]] double phase(double v) const;
    /// Inverse on (phase(v_max), phi_max]; throws std::domain_error outside.
    [[nodiscard]] double voltage(double phase) const;
};

/// Simulated polarization plant. A basis QBER is
///   floor + (0.5 - floor) sin^2(min(theta, pi) / 2),
/// where theta^2 is a sum of squared linear combinations of phase errors:
///   H/V of pair (i,j): |r_i|^2 + |r_j|^2, r_u = (d1 + cos(a) d2, sin(a) d2)
///     from user u's two pre-splitter phase errors d1, d2;
///   D/A of pair (i,j): (psi_i - psi_j)^2, psi_u = post_u + k (d1 - d2).
struct LcvrPlant {
    std::array<LcvrCurve, kLcvrs> curves{};
    std::array<double, kLcvrs> phi_opt{};
    std::array<double, kPairs> floor_z{0.017, 0.013, 0.013};
    std::array<double, kPairs> floor_x{0.031, 0.019, 0.018};
    double pre_angle = 1.0471975511965976;  // 60 degrees between a user's two pre-splitter axes
    double post_coupling = 0.3;
    std::uint32_t samples = 2000;  // coincidences per QBER measurement
    std::uint64_t seed = 0;
    double v_min = 0.0;
    double v_max = 8.0;
    Voltages start{};
    std::uint64_t calls = 0;

    [[nodiscard]] double true_qber(const Voltages& v, UserPair pair, int basis) const;
    [[nodiscard]] QberVector true_qbers(const Voltages& v) const;
    [[nodiscard]] double floor(UserPair pair, int basis) const;
    [[nodiscard]] Voltages optimum() const;

    /// Binomial(samples, true QBER) / samples, deterministic in (seed, call counter).
    double measure_qber(const Voltages& v, UserPair pair, int basis);

    /// Random curves and optimum for a seed, with a start point at roughly
    /// 20% H/V QBER and D/A phases off by under pi.
    static LcvrPlant random(std::uint64_t seed, const std::array<double, kPairs>& floor_z,
                            const std::array<double, kPairs>& floor_x);
};

struct DescentConfig {
    double v_min = 0.0;
    double v_max = 8.0;
    double step_low = 0.1;     // below step_switch_v
    double step_high = 0.5;    // at or above step_switch_v
    double step_switch_v = 2.0;
    int max_samples = 40;      // per coordinate
    int min_samples = 6;       // a bracketed walk is topped up to this many samples
    double noise_factor = 1.0; // slopes within this many pooled standard errors count as flat
    std::uint32_t samples_per_measurement = 2000;
    int passes = 3;            // coordinate sweeps per H/V stage
    int max_cycles = 10;
    int max_rechecks = 2;      // H/V stage repeats when the third pair fails verification
    double convergence_se = 2.0;     // a cycle is stable when every QBER moved by less than
    double convergence_abs = 0.002;  // max(convergence_se * SE, convergence_abs)
    double save_threshold = 0.10;
    int coarse_cycles = 2;     // cycles at the full step sizes
    double fine_scale = 0.4;   // step multiplier for later cycles (stands in for manual fine tuning)
    int fine_min_samples = 8;
    double step_scale = 1.0;   // applied by step(); run_multistate sets it per cycle

    [[nodiscard]] double step(double v) const { return step_scale * (v < step_switch_v ? step_low : step_high); }
    void validate() const;
};

struct Sample {
    double voltage = 0.0;
    double qber = 0.0;
};

struct DescentResult {
    double voltage = 0.0;
    std::vector<Sample> samples;
    std::array<double, 3> fit{};  // q = fit[0] + fit[1] v + fit[2] v^2
    bool bracketed = false;       // stopped on two successive rises
    bool nonconvex = false;       // fit opened downward; best sample used instead
};

using Measurement = std::function<double(double voltage)>;

/// One-dimensional sampling walk followed by a least-squares parabola fit.
DescentResult descend_coordinate(const Measurement& measure, double start, const DescentConfig& config);

/// Objective of a schedule step: mean of the listed measured QBERs.
struct Objective {
    std::vector<std::pair<UserPair, int>> terms;
};

DescentResult descend_coordinate(LcvrPlant& plant, Voltages& state, std::size_t coordinate, const Objective& objective,
                                 const DescentConfig& config);

struct CalibrationLogEntry {
    int cycle = 0;
    std::size_t coordinate = 0;
    DescentResult descent;
};

struct CalibrationResult {
    Voltages voltages{};
    bool converged = false;
    int cycles = 0;
    int best_cycle = 0;  // cycle whose end state is returned
    int rechecks = 0;
    int nonconvex_fits = 0;
    std::vector<QberVector> true_trace;      // before the first cycle and after each cycle
    std::vector<QberVector> measured_trace;  // same points, measured
    std::vector<CalibrationLogEntry> log;
};

/// Cyclic multi-state schedule: Alice-Bob H/V over LCVRs 0-3, Alice-Charlie
/// H/V over 4-5, Bob-Charlie H/V verification, Alice-Charlie D/A over 6, then
/// the mean of Alice-Bob and Bob-Charlie D/A over 7.
/// The first coarse_cycles use the full steps. Later cycles use fine steps and
/// the state with the lowest measured mean QBER among them is returned. A first
/// cycle in which no voltage moves more than one step ends the run.
CalibrationResult run_multistate(LcvrPlant& plant, const DescentConfig& config);

nlohmann::json calibration_log_json(const CalibrationResult& result);

}  // namespace qdslab

#endif
