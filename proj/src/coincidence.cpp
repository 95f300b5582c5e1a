#include "qdslab/coincidence.hpp"

#include "qdslab/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace qdslab {

namespace {

constexpr std::array<const char*, 4> kLogicalNames{"Z0", "Z1", "X0", "X1"};

// b - a as a signed value.
std::int64_t signed_diff(std::uint64_t b, std::uint64_t a) {
    return b >= a ? std::int64_t(b - a) : -std::int64_t(a - b);
}

void check_binning(std::int64_t bin_ps, std::int64_t range_ps) {
    if (bin_ps <= 0) throw std::invalid_argument("cross_correlate: bin_ps must be > 0");
    if (range_ps <= 0 || range_ps % bin_ps != 0) {
        throw std::invalid_argument("cross_correlate: range_ps must be a positive multiple of bin_ps");
    }
}

Histogram empty_histogram(std::int64_t bin_ps, std::int64_t range_ps) {
    Histogram h;
    h.bin_ps = bin_ps;
    h.range_ps = range_ps;
    h.counts.assign(static_cast<std::size_t>(2 * range_ps / bin_ps), 0);
    return h;
}

void accumulate(Timestamps a, Timestamps b, Histogram& h) {
    if (a.empty() || b.empty()) return;
    const std::int64_t range = h.range_ps;
    const std::uint64_t first = a.front();
    const std::uint64_t from = first > std::uint64_t(range) ? first - std::uint64_t(range) : 0;
    std::size_t lo = static_cast<std::size_t>(std::lower_bound(b.begin(), b.end(), from) - b.begin());
    for (const std::uint64_t ta : a) {
        while (lo < b.size() && signed_diff(b[lo], ta) < -range) ++lo;
        for (std::size_t j = lo; j < b.size(); ++j) {
            const std::int64_t d = signed_diff(b[j], ta);
            if (d >= range) break;
            ++h.counts[static_cast<std::size_t>((d + range) / h.bin_ps)];
        }
    }
}

}  // namespace

std::uint64_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

Histogram& Histogram::operator+=(const Histogram& o) {
    if (o.bin_ps != bin_ps || o.range_ps != range_ps) throw std::invalid_argument("Histogram: binning mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
}

Histogram cross_correlate(Timestamps a, Timestamps b, std::int64_t bin_ps, std::int64_t range_ps) {
    check_binning(bin_ps, range_ps);
    Histogram h = empty_histogram(bin_ps, range_ps);
    accumulate(a, b, h);
    return h;
}

Histogram cross_correlate_chunked(Timestamps a, Timestamps b, std::int64_t bin_ps, std::int64_t range_ps,
                                  std::size_t chunks) {
    check_binning(bin_ps, range_ps);
    chunks = std::max<std::size_t>(1, std::min(chunks, std::max<std::size_t>(1, a.size())));
    std::vector<Histogram> parts(chunks, empty_histogram(bin_ps, range_ps));
    const std::size_t step = (a.size() + chunks - 1) / chunks;
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t begin = std::min(a.size(), c * step);
        const std::size_t end = std::min(a.size(), begin + step);
        accumulate(a.subspan(begin, end - begin), b, parts[c]);
    });
    Histogram h = empty_histogram(bin_ps, range_ps);
    for (const auto& p : parts) h += p;
    return h;
}

DelayEstimate find_delay(Timestamps a, Timestamps b, const DelayOptions& options) {
    DelayEstimate est;
    est.histogram = cross_correlate(a, b, options.bin_ps, options.range_ps);
    const auto& c = est.histogram.counts;
    if (est.histogram.total() == 0) throw NoSignificantPeak("no significant peak: histogram is empty");

    const auto peak = static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
    const auto guard = static_cast<std::size_t>(2 * std::max(options.refine_bins, 1));
    double sum = 0.0;
    double sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const std::size_t dist = i > peak ? i - peak : peak - i;
        if (dist <= guard) continue;
        sum += double(c[i]);
        sum2 += double(c[i]) * double(c[i]);
        ++n;
    }
    est.peak_counts = c[peak];
    est.peak_center_ps = est.histogram.bin_center(peak);
    est.background_mean = n > 0 ? sum / double(n) : 0.0;
    est.background_sd = n > 1 ? std::sqrt(std::max(0.0, (sum2 - sum * sum / double(n)) / double(n - 1))) : 0.0;

    // An empty background still leaves room for chance: use (sum + 1) / n as the rate.
    const double mu = (sum + 1.0) / double(std::max<std::size_t>(n, 1));
    const double tail = boost::math::gamma_p(double(est.peak_counts), mu);
    est.false_alarm_p = std::min(1.0, tail * double(c.size()));

    const bool above = double(est.peak_counts) >= est.background_mean + options.sigma_threshold * est.background_sd;
    if (!above || est.false_alarm_p > options.false_alarm) {
        throw NoSignificantPeak("no significant peak: max " + std::to_string(est.peak_counts) + " vs background " +
                                std::to_string(est.background_mean));
    }

    double w_sum = 0.0;
    double wt_sum = 0.0;
    const auto r = static_cast<std::ptrdiff_t>(options.refine_bins);
    for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(peak) + k;
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(c.size())) continue;
        const double w = std::max(0.0, double(c[static_cast<std::size_t>(i)]) - est.background_mean);
        w_sum += w;
        wt_sum += w * est.histogram.bin_center(static_cast<std::size_t>(i));
    }
    est.delay_ps = w_sum > 0.0 ? wt_sum / w_sum : est.peak_center_ps;
    return est;
}

PairDelays PairDelays::from_logical(const std::array<double, kLogicalDetectors>& a,
                                    const std::array<double, kLogicalDetectors>& b) {
    PairDelays d;
    for (std::size_t la = 0; la < kLogicalDetectors; ++la) {
        for (std::size_t lb = 0; lb < kLogicalDetectors; ++lb) d.offset_ps[la][lb] = b[lb] - a[la];
    }
    return d;
}

PairDelays PairDelays::from_layout(const MuxLayout& mux, UserPair pair) {
    std::array<double, kLogicalDetectors> a{};
    std::array<double, kLogicalDetectors> b{};
    for (int l = 0; l < kLogicalDetectors; ++l) {
        a[static_cast<std::size_t>(l)] = double(mux.total(pair.first, l));
        b[static_cast<std::size_t>(l)] = double(mux.total(pair.second, l));
    }
    return from_logical(a, b);
}

std::array<double, kLogicalDetectors> PairDelays::logical_a() const {
    std::array<double, kLogicalDetectors> a{};
    for (std::size_t la = 0; la < kLogicalDetectors; ++la) a[la] = offset_ps[0][0] - offset_ps[la][0];
    return a;
}

std::array<double, kLogicalDetectors> PairDelays::logical_b() const {
    std::array<double, kLogicalDetectors> b{};
    for (std::size_t lb = 0; lb < kLogicalDetectors; ++lb) b[lb] = offset_ps[0][lb];
    return b;
}

PairDelays PairDelays::swapped() const {
    PairDelays s;
    for (std::size_t la = 0; la < kLogicalDetectors; ++la) {
        for (std::size_t lb = 0; lb < kLogicalDetectors; ++lb) s.offset_ps[lb][la] = -offset_ps[la][lb];
    }
    return s;
}

void PairDelays::validate(double window_ps) const {
    const auto a = logical_a();
    const auto b = logical_b();
    for (std::size_t la = 0; la < kLogicalDetectors; ++la) {
        for (std::size_t lb = 0; lb < kLogicalDetectors; ++lb) {
            if (std::abs(offset_ps[la][lb] - (b[lb] - a[la])) > 1.0) {
                throw std::invalid_argument("PairDelays: table is not generated by per-detector offsets");
            }
        }
    }
    for (int ca = 0; ca < 2; ++ca) {
        for (int cb = 0; cb < 2; ++cb) {
            std::vector<double> v;
            for (int ia = 0; ia < 2; ++ia) {
                for (int ib = 0; ib < 2; ++ib) {
                    v.push_back(offset_ps[static_cast<std::size_t>(2 * ca + ia)][static_cast<std::size_t>(2 * cb + ib)]);
                }
            }
            std::sort(v.begin(), v.end());
            for (std::size_t i = 1; i < v.size(); ++i) {
                if (v[i] - v[i - 1] <= window_ps) {
                    throw std::invalid_argument("PairDelays: offsets on one channel pair overlap within the window");
                }
            }
        }
    }
}

std::uint64_t count_coincidences(Timestamps a, Timestamps b, double delay_ps, double window_ps) {
    if (window_ps <= 0.0 || a.empty() || b.empty()) return 0;
    const double half = window_ps / 2.0;
    std::uint64_t count = 0;
    std::size_t lo = 0;
    for (const std::uint64_t ta : a) {
        while (lo < b.size() && double(signed_diff(b[lo], ta)) - delay_ps < -half) ++lo;
        for (std::size_t j = lo; j < b.size() && double(signed_diff(b[j], ta)) - delay_ps <= half; ++j) ++count;
    }
    return count;
}

namespace {

struct Match {
    double est = 0.0;
    std::uint64_t ta = 0;
    std::uint64_t tb = 0;
    std::int8_t la = 0;
    std::int8_t lb = 0;
};

struct ClusterTag {
    std::int8_t logical = 0;
    std::uint64_t t = 0;
    friend bool operator<(const ClusterTag& x, const ClusterTag& y) {
        return x.logical != y.logical ? x.logical < y.logical : x.t < y.t;
    }
    friend bool operator==(const ClusterTag&, const ClusterTag&) = default;
};

// Post-selects one user's side of a cluster. Returns false if the cluster must be dropped.
bool resolve_side(std::vector<ClusterTag>& tags, UserOutcome& out, ExtractionDiagnostics& diag) {
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    std::uint8_t clicks = 0;
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const auto bit = static_cast<std::uint8_t>(1u << tags[i].logical);
        if (clicks & bit) {
            ++diag.ambiguous;
            return false;
        }
        clicks |= bit;
        h = mix64(h ^ tags[i].t);
    }
    out = post_select(clicks, (h & 1u) != 0);
    if (out.basis < 0) {
        ++diag.cross_basis;
        return false;
    }
    if (((clicks >> (2 * out.basis)) & 0x3) == 0x3) ++diag.double_clicks;
    return true;
}

}  // namespace

CoincidenceSet extract_coincidences(const TagStream& a, const TagStream& b, const PairDelays& delays,
                                    double window_ps) {
    CoincidenceSet out;
    if (!(window_ps > 0.0)) return out;
    delays.validate(window_ps);
    const double half = window_ps / 2.0;
    const auto offset_a = delays.logical_a();

    std::array<std::vector<std::uint64_t>, kPhysicalChannels> ta;
    std::array<std::vector<std::uint64_t>, kPhysicalChannels> tb;
    for (std::uint16_t c = 0; c < kPhysicalChannels; ++c) {
        ta[c] = a.channel_times(c);
        tb[c] = b.channel_times(c);
    }

    std::vector<Match> matches;
    for (int la = 0; la < kLogicalDetectors; ++la) {
        for (int lb = 0; lb < kLogicalDetectors; ++lb) {
            const auto& xa = ta[static_cast<std::size_t>(logical_basis(la))];
            const auto& xb = tb[static_cast<std::size_t>(logical_basis(lb))];
            const double delta = delays.offset_ps[static_cast<std::size_t>(la)][static_cast<std::size_t>(lb)];
            std::size_t lo = 0;
            for (const std::uint64_t t : xa) {
                while (lo < xb.size() && double(signed_diff(xb[lo], t)) - delta < -half) ++lo;
                for (std::size_t j = lo; j < xb.size() && double(signed_diff(xb[j], t)) - delta <= half; ++j) {
                    matches.push_back({double(t) - offset_a[static_cast<std::size_t>(la)], t, xb[j],
                                       static_cast<std::int8_t>(la), static_cast<std::int8_t>(lb)});
                }
            }
        }
    }
    out.diagnostics.matches = matches.size();
    std::sort(matches.begin(), matches.end(), [](const Match& x, const Match& y) {
        if (x.est != y.est) return x.est < y.est;
        if (x.ta != y.ta) return x.ta < y.ta;
        return x.tb < y.tb;
    });

    std::vector<ClusterTag> side_a;
    std::vector<ClusterTag> side_b;
    std::size_t i = 0;
    while (i < matches.size()) {
        std::size_t j = i + 1;
        while (j < matches.size() && matches[j].est - matches[j - 1].est <= window_ps) ++j;
        ++out.diagnostics.clusters;
        side_a.clear();
        side_b.clear();
        for (std::size_t k = i; k < j; ++k) {
            side_a.push_back({matches[k].la, matches[k].ta});
            side_b.push_back({matches[k].lb, matches[k].tb});
        }
        i = j;

        UserOutcome ua;
        UserOutcome ub;
        if (!resolve_side(side_a, ua, out.diagnostics) || !resolve_side(side_b, ub, out.diagnostics)) continue;
        Coincidence c;
        c.t_a = std::min_element(side_a.begin(), side_a.end(), [](auto& x, auto& y) { return x.t < y.t; })->t;
        c.t_b = std::min_element(side_b.begin(), side_b.end(), [](auto& x, auto& y) { return x.t < y.t; })->t;
        c.basis_a = ua.basis;
        c.bit_a = ua.bit;
        c.basis_b = ub.basis;
        c.bit_b = ub.bit;
        out.events.push_back(c);
    }
    return out;
}

std::vector<std::uint8_t> SiftedKeyPair::bits_a(std::optional<int> basis) const {
    std::vector<std::uint8_t> v;
    for (const auto& e : events) {
        if (!basis || e.basis == *basis) v.push_back(e.bit_a);
    }
    return v;
}

std::vector<std::uint8_t> SiftedKeyPair::bits_b(std::optional<int> basis) const {
    std::vector<std::uint8_t> v;
    for (const auto& e : events) {
        if (!basis || e.basis == *basis) v.push_back(e.bit_b);
    }
    return v;
}

std::uint64_t SiftedKeyPair::count(int basis) const {
    return static_cast<std::uint64_t>(
        std::count_if(events.begin(), events.end(), [basis](const SiftedEvent& e) { return e.basis == basis; }));
}

std::uint64_t SiftedKeyPair::mismatches(int basis) const {
    return static_cast<std::uint64_t>(std::count_if(events.begin(), events.end(), [basis](const SiftedEvent& e) {
        return e.basis == basis && e.bit_a != e.bit_b;
    }));
}

SiftedKeyPair sift(std::span<const Coincidence> coincidences, bool flip_second_z) {
    SiftedKeyPair s;
    for (const auto& c : coincidences) {
        if (c.basis_a != c.basis_b) {
            ++s.cross_basis;
            continue;
        }
        auto bit_b = static_cast<std::uint8_t>(c.bit_b);
        if (flip_second_z && c.basis_b == 0) bit_b ^= 1u;
        s.events.push_back({c.t_a, c.basis_a, static_cast<std::uint8_t>(c.bit_a), bit_b});
    }
    return s;
}

QberReport crosstalk_and_qber(std::span<const Coincidence> coincidences) {
    if (coincidences.empty()) throw std::invalid_argument("crosstalk_and_qber: no coincidences");
    QberReport r;
    auto& m = r.matrix;
    for (const auto& c : coincidences) {
        const int row = logical_index(c.basis_a, c.bit_a);
        const int col = logical_index(c.basis_b, c.basis_b == 0 ? c.bit_b ^ 1 : c.bit_b);
        ++m.counts[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
    }
    m.total = coincidences.size();
    std::uint64_t rows_z = 0;
    std::uint64_t cols_z = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            m.prob[i][j] = double(m.counts[i][j]) / double(m.total);
            if (i < 2) rows_z += m.counts[i][j];
            if (j < 2) cols_z += m.counts[i][j];
        }
    }
    for (std::size_t b = 0; b < 2; ++b) {
        const std::size_t k = 2 * b;
        const std::uint64_t off = m.counts[k][k + 1] + m.counts[k + 1][k];
        const std::uint64_t tot = off + m.counts[k][k] + m.counts[k + 1][k + 1];
        r.basis_counts[b] = tot;
        if (tot > 0) (b == 0 ? r.qber_z : r.qber_x) = double(off) / double(tot);
    }
    r.z_fraction_a = double(rows_z) / double(m.total);
    r.z_fraction_b = double(cols_z) / double(m.total);
    return r;
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
    out << "delta_ps,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) out << h.bin_center(i) << ',' << h.counts[i] << '\n';
}

void write_crosstalk_csv(std::ostream& out, const CrosstalkMatrix& m) {
    out << "first,second,count,probability\n";
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            out << kLogicalNames[i] << ',' << kLogicalNames[j] << ',' << m.counts[i][j] << ',' << m.prob[i][j] << '\n';
        }
    }
}

nlohmann::json qber_summary_json(const std::string& pair, const QberReport& report, std::uint64_t timestamp_ps) {
    nlohmann::json arr = nlohmann::json::array();
    for (int b = 0; b < 2; ++b) {
        const auto& q = b == 0 ? report.qber_z : report.qber_x;
        arr.push_back({{"pair", pair},
                       {"basis", b == 0 ? "Z" : "X"},
                       {"qber", q ? nlohmann::json(*q) : nlohmann::json(nullptr)},
                       {"counts", report.basis_counts[static_cast<std::size_t>(b)]},
                       {"timestamp", timestamp_ps}});
    }
    return arr;
}

}  // namespace qdslab
