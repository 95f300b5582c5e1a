#include "qdslab/photon_sim.hpp"

#include "qdslab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace qdslab {

namespace {

constexpr std::uint64_t kChunkWindows = 1ULL << 24;
constexpr std::uint64_t kNever = std::numeric_limits<std::uint64_t>::max();
constexpr int kMaxPairs = 64;

using TimeTable = std::array<std::array<double, kLogicalDetectors>, kUsers>;
using TransmitMask = std::array<std::array<bool, kLogicalDetectors>, kUsers>;

struct WindowEvent {
    std::uint64_t window = 0;
    int pairs = 0;
    std::array<UserOutcome, kUsers> users{};
    TimeTable times{};  // click time inside the window, ps
};

// Gap sampler: windows skipped before the next event of probability p.
class Gap {
public:
    explicit Gap(double p) : p_(p) {
        if (p_ > 0.0 && p_ < 1.0) dist_ = std::geometric_distribution<std::uint64_t>(p_);
    }
    std::uint64_t next(std::uint64_t from, std::mt19937_64& rng) {
        if (p_ <= 0.0) return kNever;
        if (p_ >= 1.0) return from;
        return from + dist_(rng);
    }

private:
    double p_;
    std::geometric_distribution<std::uint64_t> dist_;
};

class WindowEngine {
public:
    WindowEngine(const EngineSpec& spec, int forced_pairs, const TransmitMask& transmit, double period_ps,
                 double jitter_ps, bool want_times)
        : spec_(spec),
          forced_(forced_pairs),
          transmit_(transmit),
          period_(period_ps),
          jitter_(jitter_ps),
          want_times_(want_times),
          mu_(2.0 * spec.lambda),
          pair_gap_(forced_pairs >= 0 ? (forced_pairs > 0 ? 1.0 : 0.0) : -std::expm1(-2.0 * spec.lambda)) {
        double cum = 0.0;
        for (std::size_t u = 0; u < kUsers; ++u) {
            cum += spec.users[u].transmission;
            route_[u] = cum;
            dark_gap_.emplace_back(spec.users[u].dark);
        }
        if (cum > 1.0 + 1e-12) throw std::invalid_argument("photon_sim: user transmissions sum above 1");
    }

    template <typename Visit>
    void run(std::uint64_t w0, std::uint64_t w1, std::mt19937_64& rng, Visit&& visit) {
        std::uint64_t next_pair = pair_gap_.next(w0, rng);
        std::array<std::array<std::uint64_t, kLogicalDetectors>, kUsers> next_dark{};
        for (std::size_t u = 0; u < kUsers; ++u) {
            for (auto& d : next_dark[u]) d = dark_gap_[u].next(w0, rng);
        }

        WindowEvent ev;
        while (true) {
            std::uint64_t w = next_pair;
            for (const auto& user : next_dark) {
                for (auto d : user) w = std::min(w, d);
            }
            if (w >= w1) break;

            ev.window = w;
            ev.pairs = 0;
            std::array<std::uint8_t, kUsers> clicks{};
            if (want_times_) {
                for (auto& row : ev.times) row.fill(std::numeric_limits<double>::infinity());
            }
            if (next_pair == w) {
                ev.pairs = forced_ > 0 ? forced_ : draw_pairs(rng);
                emit_pairs(ev, clicks, rng);
                next_pair = pair_gap_.next(w + 1, rng);
            }
            for (std::size_t u = 0; u < kUsers; ++u) {
                for (int l = 0; l < kLogicalDetectors; ++l) {
                    auto& d = next_dark[u][static_cast<std::size_t>(l)];
                    if (d != w) continue;
                    clicks[u] |= static_cast<std::uint8_t>(1u << l);
                    if (want_times_) {
                        auto& t = ev.times[u][static_cast<std::size_t>(l)];
                        t = std::min(t, unit_(rng) * period_);
                    }
                    d = dark_gap_[u].next(w + 1, rng);
                }
            }

            bool any = false;
            for (std::size_t u = 0; u < kUsers; ++u) {
                for (int l = 0; l < kLogicalDetectors; ++l) {
                    if (!transmit_[u][static_cast<std::size_t>(l)]) clicks[u] &= static_cast<std::uint8_t>(~(1u << l));
                }
                ev.users[u] = post_select(clicks[u], (rng() & 1u) != 0);
                any = any || clicks[u] != 0;
            }
            if (any) visit(ev);
        }
    }

private:
    int draw_pairs(std::mt19937_64& rng) {
        // Zero-truncated Poisson by inverse CDF.
        const double u = unit_(rng) * -std::expm1(-mu_);
        double term = std::exp(-mu_);
        double cum = 0.0;
        for (int n = 1; n < kMaxPairs; ++n) {
            term *= mu_ / n;
            cum += term;
            if (u <= cum) return n;
        }
        return kMaxPairs;
    }

    double jitter(std::mt19937_64& rng) {
        if (jitter_ <= 0.0) return 0.0;
        while (true) {
            const double x = normal_(rng);
            if (std::abs(x) <= 3.0) return x * jitter_;
        }
    }

    void emit_pairs(WindowEvent& ev, std::array<std::uint8_t, kUsers>& clicks, std::mt19937_64& rng) {
        const double emission = want_times_ ? unit_(rng) * period_ : 0.0;
        for (int i = 0; i < ev.pairs; ++i) {
            const int diag = static_cast<int>(rng() & 1u);
            for (int pol = 0; pol < 2; ++pol) {
                const double r = unit_(rng);
                std::size_t u = 0;
                while (u < kUsers && r >= route_[u]) ++u;
                if (u == kUsers) continue;
                const int basis = static_cast<int>(rng() & 1u);
                const auto& ch = spec_.users[u];
                int bit = basis == 0 ? pol : diag;
                if (unit_(rng) < (basis == 0 ? ch.flip_z : ch.flip_x)) bit ^= 1;
                const int l = logical_index(basis, bit);
                clicks[u] |= static_cast<std::uint8_t>(1u << l);
                if (want_times_) {
                    auto& t = ev.times[u][static_cast<std::size_t>(l)];
                    t = std::min(t, emission + jitter(rng));
                }
            }
        }
    }

    EngineSpec spec_;
    int forced_;
    TransmitMask transmit_;
    double period_;
    double jitter_;
    bool want_times_;
    double mu_;
    Gap pair_gap_;
    std::vector<Gap> dark_gap_;
    std::array<double, kUsers> route_{};
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

std::size_t chunk_count(std::uint64_t windows) {
    return static_cast<std::size_t>((windows + kChunkWindows - 1) / kChunkWindows);
}

double flip_from_contrast(double c) { return (1.0 - std::clamp(c, 0.0, 1.0)) / 2.0; }

std::array<double, kUsers> user_contrasts(const std::array<double, kPairs>& e_pair) {
    std::array<double, kPairs> c{};
    for (std::size_t p = 0; p < kPairs; ++p) c[p] = 1.0 - 2.0 * e_pair[p];
    // Each user of a pair flips with the pair's e_d, so c_u c_v = c_pair^2 and
    // c_A = c_AB c_AC / c_BC (AB=0, AC=1, BC=2)
    auto ratio = [](double num, double den) { return den > 1e-12 ? num / den : 1.0; };
    return {ratio(c[0] * c[1], c[2]), ratio(c[0] * c[2], c[1]), ratio(c[1] * c[2], c[0])};
}

}  // namespace

MuxLayout MuxLayout::standard(double window_ps) {
    const auto unit = static_cast<std::int64_t>(std::ceil(4.0 * window_ps));
    MuxLayout m;
    for (std::size_t l = 0; l < kLogicalDetectors; ++l) {
        const auto k = static_cast<std::int64_t>(l);
        m.delay_ps[0][l] = k * unit;
        m.delay_ps[1][l] = 4 * k * unit;
        m.delay_ps[2][l] = 16 * k * unit;
    }
    m.user_offset_ps = {0, 150'000, 90'000};
    return m;
}

void MuxLayout::validate(double window_ps) const {
    for (std::size_t u = 0; u < kUsers; ++u) {
        if (user_offset_ps[u] < 0) throw std::invalid_argument("mux: user offsets must be >= 0");
        for (std::size_t i = 0; i < kLogicalDetectors; ++i) {
            if (delay_ps[u][i] < 0) throw std::invalid_argument("mux: delays must be >= 0");
            for (std::size_t j = 0; j < i; ++j) {
                if (std::llabs(delay_ps[u][i] - delay_ps[u][j]) < 4.0 * window_ps) {
                    throw std::invalid_argument("mux: delays of user " + std::string(user_name(User(u))) +
                                                " must be at least 4 windows apart");
                }
            }
        }
    }
    for (const auto& pair : kAllPairs) {
        std::vector<std::int64_t> rel;
        for (int la = 0; la < kLogicalDetectors; ++la) {
            for (int lb = 0; lb < kLogicalDetectors; ++lb) rel.push_back(total(pair.second, lb) - total(pair.first, la));
        }
        std::sort(rel.begin(), rel.end());
        for (std::size_t i = 1; i < rel.size(); ++i) {
            if (double(rel[i] - rel[i - 1]) <= window_ps) {
                throw std::invalid_argument("mux: relative delays of pair " + pair.label() +
                                            " are not separated by more than one window");
            }
        }
    }
}

std::uint64_t SimConfig::total_windows() const {
    if (windows > 0) return windows;
    return static_cast<std::uint64_t>(std::llround(duration_s * params.rep_rate_hz));
}

void SimConfig::validate() const {
    params.validate();
    if (!(window_ps > 0.0)) throw std::invalid_argument("SimConfig.window_ps must be > 0");
    if (!(jitter_ps >= 0.0)) throw std::invalid_argument("SimConfig.jitter_ps must be >= 0");
    if (!(duration_s >= 0.0)) throw std::invalid_argument("SimConfig.duration_s must be >= 0");
    if (forced_pairs > kMaxPairs) throw std::invalid_argument("SimConfig.forced_pairs too large");
    mux.validate(window_ps);
}

EngineSpec engine_spec(const SystemParams& params) {
    EngineSpec s;
    s.lambda = params.lambda;
    const auto cz = user_contrasts(params.misalign_z);
    const auto cx = user_contrasts(params.misalign_x);
    for (std::size_t u = 0; u < kUsers; ++u) {
        s.users[u] = {params.user_transmission(User(u)), flip_from_contrast(cz[u]), flip_from_contrast(cx[u]),
                      params.dark_prob[u]};
    }
    return s;
}

EngineSpec oracle_spec(const SystemParams& params, UserPair pair) {
    EngineSpec s;
    s.lambda = params.lambda;
    const LinkBudget b = link_budget(params, pair);
    const double d0 = params.pair_dark_prob(pair);
    const double ez = params.misalign_z_for(pair);
    const double ex = params.misalign_x_for(pair);
    s.users[static_cast<std::size_t>(pair.first)] = {b.t_source, ez, ex, d0};
    s.users[static_cast<std::size_t>(pair.second)] = {b.t_remote, ez, ex, d0};
    return s;
}

UserOutcome post_select(std::uint8_t clicks, bool random_bit) {
    UserOutcome o;
    o.clicks = clicks;
    const int z = clicks & 0x3;
    const int x = (clicks >> 2) & 0x3;
    if ((z != 0) == (x != 0)) return o;  // nothing, or both bases
    o.basis = static_cast<std::int8_t>(z != 0 ? 0 : 1);
    const int bits = z != 0 ? z : x;
    o.bit = static_cast<std::int8_t>(bits == 0x3 ? (random_bit ? 1 : 0) : (bits == 0x2 ? 1 : 0));
    return o;
}

void PairTally::add(const UserOutcome& a, const UserOutcome& b) {
    if (a.basis < 0 || b.basis < 0) return;
    if (a.basis != b.basis) {
        ++cross_basis;
        return;
    }
    ++sifted[static_cast<std::size_t>(a.basis)];
    if (is_error(a.basis, a.bit, b.bit)) ++errors[static_cast<std::size_t>(a.basis)];
}

PairTally& PairTally::operator+=(const PairTally& o) {
    for (std::size_t b = 0; b < 2; ++b) {
        sifted[b] += o.sifted[b];
        errors[b] += o.errors[b];
    }
    cross_basis += o.cross_basis;
    return *this;
}

double PairTally::qber(int basis) const {
    const auto b = static_cast<std::size_t>(basis);
    return sifted[b] > 0 ? double(errors[b]) / double(sifted[b]) : 0.5;
}

SimResult simulate_run(const SimConfig& config) {
    config.validate();
    const std::uint64_t windows = config.total_windows();
    const double period = config.params.period_ps();
    const EngineSpec spec = engine_spec(config.params);

    struct Chunk {
        std::array<std::vector<TagRecord>, kUsers> tags;
        std::vector<WindowRecord> records;
        std::array<PairTally, kPairs> tallies{};
        std::array<std::uint64_t, kUsers> clicks{};
    };
    std::vector<Chunk> chunks(chunk_count(windows));

    parallel_for(chunks.size(), [&](std::size_t c) {
        auto rng = make_rng(config.seed, 0x51u, c);
        WindowEngine engine(spec, config.forced_pairs, config.transmit, period, config.jitter_ps, true);
        const std::uint64_t w0 = c * kChunkWindows;
        const std::uint64_t w1 = std::min(windows, w0 + kChunkWindows);
        Chunk& out = chunks[c];
        engine.run(w0, w1, rng, [&](const WindowEvent& ev) {
            const double base = double(ev.window) * period;
            for (std::size_t u = 0; u < kUsers; ++u) {
                const auto clicks = ev.users[u].clicks;
                for (int l = 0; l < kLogicalDetectors; ++l) {
                    if (!(clicks & (1u << l))) continue;
                    const double t = base + ev.times[u][static_cast<std::size_t>(l)] +
                                     double(config.mux.total(User(u), l));
                    out.tags[u].push_back({static_cast<std::uint64_t>(std::llround(std::max(0.0, t))),
                                           static_cast<std::uint16_t>(logical_basis(l)), 0});
                    ++out.clicks[u];
                }
            }
            for (std::size_t p = 0; p < kPairs; ++p) {
                const UserPair pair = kAllPairs[p];
                out.tallies[p].add(ev.users[static_cast<std::size_t>(pair.first)],
                                   ev.users[static_cast<std::size_t>(pair.second)]);
            }
            if (config.record_truth) {
                out.records.push_back({ev.window, static_cast<std::uint8_t>(ev.pairs), ev.users});
            }
        });
    });

    SimResult result;
    result.truth.windows = windows;
    for (std::size_t u = 0; u < kUsers; ++u) {
        auto& s = result.streams[u];
        s.user_id = static_cast<std::uint16_t>(u);
        s.channel_count = kPhysicalChannels;
        s.resolution_ps = 1;
        std::size_t total = 0;
        for (const auto& c : chunks) total += c.tags[u].size();
        s.records.reserve(total);
        for (const auto& c : chunks) s.records.insert(s.records.end(), c.tags[u].begin(), c.tags[u].end());
        std::sort(s.records.begin(), s.records.end(), [](const TagRecord& a, const TagRecord& b) {
            return a.timestamp_ps != b.timestamp_ps ? a.timestamp_ps < b.timestamp_ps : a.channel < b.channel;
        });
        // Equal timestamps on one channel would be a single detector event.
        s.records.erase(std::unique(s.records.begin(), s.records.end()), s.records.end());
    }
    for (auto& c : chunks) {
        result.truth.records.insert(result.truth.records.end(), c.records.begin(), c.records.end());
        for (std::size_t p = 0; p < kPairs; ++p) result.truth.tallies[p] += c.tallies[p];
        for (std::size_t u = 0; u < kUsers; ++u) result.truth.clicks[u] += c.clicks[u];
        c = Chunk{};
    }
    return result;
}

OracleEstimate run_oracle(const EngineSpec& spec, UserPair pair, std::uint64_t windows, std::uint64_t seed,
                          int forced_pairs) {
    const auto ia = static_cast<std::size_t>(pair.first);
    const auto ib = static_cast<std::size_t>(pair.second);
    TransmitMask all{};
    for (auto& row : all) row.fill(true);

    std::vector<PairTally> tallies(chunk_count(windows));
    parallel_for(tallies.size(), [&](std::size_t c) {
        auto rng = make_rng(seed, 0x0au, c);
        WindowEngine engine(spec, forced_pairs, all, 1.0, 0.0, false);
        const std::uint64_t w0 = c * kChunkWindows;
        const std::uint64_t w1 = std::min(windows, w0 + kChunkWindows);
        engine.run(w0, w1, rng, [&](const WindowEvent& ev) { tallies[c].add(ev.users[ia], ev.users[ib]); });
    });

    OracleEstimate est;
    est.windows = windows;
    for (const auto& t : tallies) est.tally += t;
    const double w = double(windows);
    const double sz = double(est.tally.sifted[0]);
    const double sx = double(est.tally.sifted[1]);
    const double q = (sz + sx) / (2.0 * w);
    est.gain.q_total = q;
    est.q_se = std::sqrt(std::max(q * (1.0 - q), 0.0) / (2.0 * w));
    est.gain.e_z = est.tally.qber(0);
    est.gain.e_x = est.tally.qber(1);
    est.gain.e_avg = 0.5 * (est.gain.e_z + est.gain.e_x);
    auto se = [](double e, double n) { return n > 0 ? std::sqrt(e * (1.0 - e) / n) : 0.5; };
    est.e_z_se = se(est.gain.e_z, sz);
    est.e_x_se = se(est.gain.e_x, sx);
    return est;
}

OracleEstimate oracle_gain_qber(const SimConfig& config, UserPair pair) {
    config.params.validate();
    const std::uint64_t windows = config.total_windows();
    if (windows < 1'000'000) throw std::invalid_argument("oracle_gain_qber: needs at least 1e6 windows");
    return run_oracle(oracle_spec(config.params, pair), pair, windows, config.seed, config.forced_pairs);
}

}  // namespace qdslab
