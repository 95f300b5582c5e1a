#include "qdslab/calibration.hpp"

#include "qdslab/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace qdslab {

namespace {

constexpr double kPi = std::numbers::pi;

// Pre-splitter LCVRs of each user and the post LCVR (none for Charlie).
constexpr std::array<std::array<std::size_t, 2>, kUsers> kPre{{{0, 1}, {2, 3}, {4, 5}}};
constexpr std::array<int, kUsers> kPost{6, 7, -1};

double qber_from_theta(double floor, double theta) {
    const double s = std::sin(std::min(std::abs(theta), kPi) / 2.0);
    return floor + (0.5 - floor) * s * s;
}

std::array<double, kLcvrs> phase_errors(const LcvrPlant& p, const Voltages& v) {
    std::array<double, kLcvrs> d{};
    for (std::size_t i = 0; i < kLcvrs; ++i) d[i] = p.curves[i].phase(v[i]) - p.phi_opt[i];
    return d;
}

double pre_norm2(const LcvrPlant& p, const std::array<double, kLcvrs>& d, User u) {
    const auto& idx = kPre[static_cast<std::size_t>(u)];
    const double x = d[idx[0]] + std::cos(p.pre_angle) * d[idx[1]];
    const double y = std::sin(p.pre_angle) * d[idx[1]];
    return x * x + y * y;
}

double post_phase(const LcvrPlant& p, const std::array<double, kLcvrs>& d, User u) {
    const auto& idx = kPre[static_cast<std::size_t>(u)];
    const int post = kPost[static_cast<std::size_t>(u)];
    return (post >= 0 ? d[static_cast<std::size_t>(post)] : 0.0) + p.post_coupling * (d[idx[0]] - d[idx[1]]);
}

}  // namespace

double LcvrCurve::phase(double v) const {
    const double r = v / v_half;
    return phi_max / (1.0 + r * r);
}

double LcvrCurve::voltage(double phase) const {
    if (!(phase > 0.0 && phase <= phi_max)) throw std::domain_error("LcvrCurve: phase outside the curve's range");
    return v_half * std::sqrt(phi_max / phase - 1.0);
}

double LcvrPlant::floor(UserPair pair, int basis) const {
    return basis == 0 ? floor_z[pair.index()] : floor_x[pair.index()];
}

double LcvrPlant::true_qber(const Voltages& v, UserPair pair, int basis) const {
    const auto d = phase_errors(*this, v);
    double theta = 0.0;
    if (basis == 0) {
        theta = std::sqrt(pre_norm2(*this, d, pair.first) + pre_norm2(*this, d, pair.second));
    } else {
        theta = post_phase(*this, d, pair.first) - post_phase(*this, d, pair.second);
    }
    return qber_from_theta(floor(pair, basis), theta);
}

QberVector LcvrPlant::true_qbers(const Voltages& v) const {
    QberVector q{};
    for (const auto& pair : kAllPairs) {
        for (int b = 0; b < 2; ++b) q[pair_basis_index(pair, b)] = true_qber(v, pair, b);
    }
    return q;
}

Voltages LcvrPlant::optimum() const {
    Voltages v{};
    for (std::size_t i = 0; i < kLcvrs; ++i) v[i] = curves[i].voltage(phi_opt[i]);
    return v;
}

double LcvrPlant::measure_qber(const Voltages& v, UserPair pair, int basis) {
    for (double x : v) {
        if (x < v_min - 1e-12 || x > v_max + 1e-12) throw std::domain_error("measure_qber: voltage out of bounds");
    }
    auto rng = make_rng(seed, 0xca11u, calls++);
    std::binomial_distribution<std::uint32_t> dist(samples, true_qber(v, pair, basis));
    return double(dist(rng)) / double(samples);
}

LcvrPlant LcvrPlant::random(std::uint64_t seed, const std::array<double, kPairs>& floor_z,
                            const std::array<double, kPairs>& floor_x) {
    LcvrPlant p;
    p.seed = seed;
    p.floor_z = floor_z;
    p.floor_x = floor_x;
    auto rng = make_rng(seed, 0x91a7u);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    for (std::size_t i = 0; i < kLcvrs; ++i) {
        p.curves[i] = {uni(2.5, 3.5) * kPi, uni(0.7, 0.9)};
        p.phi_opt[i] = p.curves[i].phase(uni(1.2, 4.5));
    }

    auto place = [&](std::size_t i, double delta) {
        const double phase = p.phi_opt[i] + delta;
        if (!(phase > p.curves[i].phase(p.v_max) && phase < p.curves[i].phi_max)) return false;
        p.start[i] = p.curves[i].voltage(phase);
        return true;
    };
    for (int attempt = 0; attempt < 10000; ++attempt) {
        bool ok = true;
        for (const auto& idx : kPre) {
            const double rho = uni(0.8, 1.1);
            const double psi = uni(0.0, 2.0 * kPi);
            const double d2 = rho * std::sin(psi) / std::sin(p.pre_angle);
            const double d1 = rho * std::cos(psi) - std::cos(p.pre_angle) * d2;
            ok = ok && place(idx[0], d1) && place(idx[1], d2);
        }
        for (int post : kPost) {
            if (post < 0) continue;
            const double mag = uni(0.4, 1.2);
            ok = ok && place(static_cast<std::size_t>(post), u01(rng) < 0.5 ? -mag : mag);
        }
        if (!ok) continue;
        const auto q = p.true_qbers(p.start);
        for (const auto& pair : kAllPairs) {
            const double z = q[pair_basis_index(pair, 0)];
            const double x = q[pair_basis_index(pair, 1)];
            ok = ok && z >= 0.10 && z <= 0.30 && x < qber_from_theta(p.floor_x[pair.index()], 0.8 * kPi);
        }
        if (ok) return p;
    }
    throw std::runtime_error("LcvrPlant::random: could not place a start point");
}

void DescentConfig::validate() const {
    if (!(step_low > 0.0 && step_high > 0.0)) throw std::invalid_argument("DescentConfig: steps must be > 0");
    if (!(std::isfinite(v_min) && std::isfinite(v_max) && v_min < v_max)) {
        throw std::invalid_argument("DescentConfig: bounds must be finite and ordered");
    }
    if (min_samples < 6 || fine_min_samples < 6) throw std::invalid_argument("DescentConfig: min_samples must be >= 6");
    if (max_samples < std::max(min_samples, fine_min_samples)) {
        throw std::invalid_argument("DescentConfig: max_samples below min_samples");
    }
    if (!(convergence_se >= 0.0 && convergence_abs >= 0.0)) throw std::invalid_argument("DescentConfig: negative convergence threshold");
    if (!(fine_scale > 0.0 && step_scale > 0.0)) throw std::invalid_argument("DescentConfig: step scales must be > 0");
    if (coarse_cycles < 1 || max_cycles < 1 || passes < 1 || max_rechecks < 0) {
        throw std::invalid_argument("DescentConfig: cycle counts must be positive");
    }
    if (samples_per_measurement == 0) throw std::invalid_argument("DescentConfig: samples_per_measurement must be > 0");
}

DescentResult descend_coordinate(const Measurement& measure, double start, const DescentConfig& config) {
    config.validate();
    DescentResult r;
    auto clamp = [&](double v) { return std::clamp(v, config.v_min, config.v_max); };
    auto sample = [&](double v) {
        const double q = measure(v);
        r.samples.push_back({v, q});
        return Sample{v, q};
    };
    auto move = [&](double v, int dir) { return clamp(v + dir * config.step(v)); };
    auto noise = [&](double qa, double qb) {
        const double q = std::clamp(0.5 * (qa + qb), 1e-6, 0.5);
        return config.noise_factor * std::sqrt(2.0 * q * (1.0 - q) / config.samples_per_measurement);
    };

    const Sample s0 = sample(clamp(start));
    int dir = s0.voltage >= config.v_max ? -1 : 1;
    const Sample s1 = sample(move(s0.voltage, dir));
    const double dq = s1.qber - s0.qber;
    const double thr = noise(s0.qber, s1.qber);
    Sample cur;
    if (dq < -thr) {
        cur = s1;
    } else if (dq > thr) {
        dir = -dir;
        cur = s0;
    } else {
        // Flat start: look on the other side too before choosing a direction.
        const Sample sm = sample(move(s0.voltage, -dir));
        if (sm.qber < s1.qber) {
            dir = -dir;
            cur = sm;
        } else {
            cur = s1;
        }
    }

    int rises = 0;
    while (static_cast<int>(r.samples.size()) < config.max_samples) {
        const double v = move(cur.voltage, dir);
        if (v == cur.voltage) break;
        const Sample s = sample(v);
        rises = s.qber > cur.qber ? rises + 1 : 0;
        cur = s;
        if (rises >= 2) {
            r.bracketed = true;
            break;
        }
    }
    // Top up a short bracketed walk, always on the side of the best sample
    // that has fewer points, so the fit stays centred on the minimum.
    while (r.bracketed && static_cast<int>(r.samples.size()) < config.min_samples) {
        const auto best = *std::min_element(r.samples.begin(), r.samples.end(),
                                            [](const Sample& a, const Sample& b) { return a.qber < b.qber; });
        double lo = best.voltage;
        double hi = best.voltage;
        int below = 0;
        int above = 0;
        for (const auto& s : r.samples) {
            lo = std::min(lo, s.voltage);
            hi = std::max(hi, s.voltage);
            below += s.voltage < best.voltage;
            above += s.voltage > best.voltage;
        }
        double v = below <= above ? move(lo, -1) : move(hi, 1);
        if (v == lo || v == hi) v = below <= above ? move(hi, 1) : move(lo, -1);
        if (v == lo || v == hi) break;
        sample(v);
    }

    const auto best = *std::min_element(r.samples.begin(), r.samples.end(),
                                        [](const Sample& a, const Sample& b) { return a.qber < b.qber; });
    double lo = r.samples.front().voltage;
    double hi = lo;
    std::set<double> distinct;
    double mean = 0.0;
    for (const auto& s : r.samples) {
        lo = std::min(lo, s.voltage);
        hi = std::max(hi, s.voltage);
        distinct.insert(s.voltage);
        mean += s.voltage;
    }
    mean /= double(r.samples.size());

    if (distinct.size() < 3) {
        r.nonconvex = true;
        r.voltage = best.voltage;
        return r;
    }
    const auto n = static_cast<Eigen::Index>(r.samples.size());
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd q(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = r.samples[static_cast<std::size_t>(i)].voltage - mean;
        a(i, 0) = 1.0;
        a(i, 1) = x;
        a(i, 2) = x * x;
        q(i) = r.samples[static_cast<std::size_t>(i)].qber;
    }
    const Eigen::Vector3d c = a.colPivHouseholderQr().solve(q);
    r.fit = {c(0) - c(1) * mean + c(2) * mean * mean, c(1) - 2.0 * c(2) * mean, c(2)};
    if (!(c(2) > 0.0)) {
        r.nonconvex = true;
        r.voltage = best.voltage;
        return r;
    }
    r.voltage = std::clamp(mean - c(1) / (2.0 * c(2)), lo, hi);
    return r;
}

DescentResult descend_coordinate(LcvrPlant& plant, Voltages& state, std::size_t coordinate, const Objective& objective,
                                 const DescentConfig& config) {
    if (coordinate >= kLcvrs) throw std::out_of_range("descend_coordinate: coordinate");
    if (objective.terms.empty()) throw std::invalid_argument("descend_coordinate: empty objective");
    Voltages probe = state;
    auto measure = [&](double v) {
        probe[coordinate] = v;
        double sum = 0.0;
        for (const auto& [pair, basis] : objective.terms) sum += plant.measure_qber(probe, pair, basis);
        return sum / double(objective.terms.size());
    };
    DescentResult r = descend_coordinate(measure, state[coordinate], config);
    state[coordinate] = r.voltage;
    return r;
}

namespace {

QberVector measure_all(LcvrPlant& plant, const Voltages& v) {
    QberVector q{};
    for (const auto& pair : kAllPairs) {
        for (int b = 0; b < 2; ++b) q[pair_basis_index(pair, b)] = plant.measure_qber(v, pair, b);
    }
    return q;
}

}  // namespace

CalibrationResult run_multistate(LcvrPlant& plant, const DescentConfig& config) {
    config.validate();
    constexpr UserPair ab{User::Alice, User::Bob};
    constexpr UserPair ac{User::Alice, User::Charlie};
    constexpr UserPair bc{User::Bob, User::Charlie};

    CalibrationResult res;
    Voltages v = plant.start;
    res.true_trace.push_back(plant.true_qbers(v));
    QberVector before = measure_all(plant, v);
    res.measured_trace.push_back(before);

    DescentConfig cfg = config;
    Voltages best = v;
    double best_mean = std::numeric_limits<double>::infinity();
    bool best_saved = false;
    bool settled = false;
    auto descend = [&](int cycle, std::size_t coord, const Objective& obj) {
        auto d = descend_coordinate(plant, v, coord, obj, cfg);
        if (d.nonconvex) ++res.nonconvex_fits;
        res.log.push_back({cycle, coord, std::move(d)});
    };

    for (int cycle = 1; cycle <= config.max_cycles; ++cycle) {
        res.cycles = cycle;
        const bool fine = cycle > config.coarse_cycles;
        cfg.step_scale = config.step_scale * (fine ? config.fine_scale : 1.0);
        cfg.min_samples = fine ? config.fine_min_samples : config.min_samples;
        for (int check = 0; check <= config.max_rechecks; ++check) {
            for (int pass = 0; pass < config.passes; ++pass) {
                for (std::size_t c : {0u, 1u, 2u, 3u}) descend(cycle, c, {{{ab, 0}}});
            }
            for (int pass = 0; pass < config.passes; ++pass) {
                for (std::size_t c : {4u, 5u}) descend(cycle, c, {{{ac, 0}}});
            }
            if (plant.measure_qber(v, bc, 0) <= config.save_threshold) break;
            if (check < config.max_rechecks) ++res.rechecks;
        }
        descend(cycle, 6, {{{ac, 1}}});
        descend(cycle, 7, {{{ab, 1}, {bc, 1}}});

        const QberVector after = measure_all(plant, v);
        res.true_trace.push_back(plant.true_qbers(v));
        res.measured_trace.push_back(after);

        bool stable = true;
        bool saved = true;
        for (std::size_t i = 0; i < kPairBases; ++i) {
            const double q = std::clamp(after[i], 1e-6, 0.5);
            const double se = std::sqrt(2.0 * q * (1.0 - q) / config.samples_per_measurement);
            stable = stable && std::abs(after[i] - before[i]) < std::max(config.convergence_se * se, config.convergence_abs);
            saved = saved && after[i] < config.save_threshold;
        }
        before = after;
        if (cycle == 1 && saved) {
            bool still = true;
            for (std::size_t i = 0; i < kLcvrs; ++i) still = still && std::abs(v[i] - plant.start[i]) <= config.step(plant.start[i]);
            if (still) {
                // Already calibrated: keep whichever of start and cycle 1 measured lower.
                const auto& first = res.measured_trace.front();
                const bool keep_start = std::accumulate(first.begin(), first.end(), 0.0) <=
                                        std::accumulate(after.begin(), after.end(), 0.0);
                best = keep_start ? plant.start : v;
                res.best_cycle = keep_start ? 0 : 1;
                res.converged = true;
                break;
            }
        }
        if (cycle <= config.coarse_cycles) continue;
        settled = settled || stable;
        // Fine cycles scatter around the optimum with sampling noise; keep the
        // one with the lowest measured mean QBER.
        const double mean = std::accumulate(after.begin(), after.end(), 0.0) / double(kPairBases);
        if (mean < best_mean) {
            best_mean = mean;
            best = v;
            best_saved = saved;
            res.best_cycle = cycle;
        }
        res.converged = settled && best_saved;
    }
    res.voltages = best;
    return res;
}

nlohmann::json calibration_log_json(const CalibrationResult& result) {
    nlohmann::json j;
    j["converged"] = result.converged;
    j["cycles"] = result.cycles;
    j["best_cycle"] = result.best_cycle;
    j["rechecks"] = result.rechecks;
    j["nonconvex_fits"] = result.nonconvex_fits;
    j["voltages"] = result.voltages;
    j["true_trace"] = result.true_trace;
    j["measured_trace"] = result.measured_trace;
    auto& steps = j["steps"] = nlohmann::json::array();
    for (const auto& e : result.log) {
        nlohmann::json samples = nlohmann::json::array();
        for (const auto& s : e.descent.samples) samples.push_back({{"voltage", s.voltage}, {"qber", s.qber}});
        steps.push_back({{"cycle", e.cycle},
                         {"coordinate", e.coordinate},
                         {"voltage", e.descent.voltage},
                         {"fit", e.descent.fit},
                         {"bracketed", e.descent.bracketed},
                         {"nonconvex", e.descent.nonconvex},
                         {"samples", samples}});
    }
    return j;
}

}  // namespace qdslab
