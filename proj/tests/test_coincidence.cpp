#include "doctest.h"

#include "qdslab/coincidence.hpp"
#include "qdslab/pipeline.hpp"
#include "qdslab/tag_stream.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace qdslab;

namespace {

constexpr UserPair kAB{User::Alice, User::Bob};

std::vector<std::uint64_t> poisson_times(double rate_per_ps, double span_ps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> gap(rate_per_ps);
    std::vector<std::uint64_t> t;
    for (double x = gap(rng); x < span_ps; x += gap(rng)) t.push_back(static_cast<std::uint64_t>(x));
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

TagStream stream_of(std::uint16_t user, const std::vector<std::pair<std::uint64_t, std::uint16_t>>& tags) {
    TagStream s;
    s.user_id = user;
    for (auto [t, ch] : tags) s.records.push_back({t, ch, 0});
    return s;
}

// Coincidence with the given logical labels at time t, for delays that are all zero.
Coincidence event(int basis_a, int bit_a, int basis_b, int bit_b) {
    Coincidence c;
    c.basis_a = std::int8_t(basis_a);
    c.bit_a = std::int8_t(bit_a);
    c.basis_b = std::int8_t(basis_b);
    c.bit_b = std::int8_t(bit_b);
    return c;
}

}  // namespace

TEST_CASE("tag stream binary format") {
    TagStream s = stream_of(2, {{10, 0}, {25, 1}, {25, 0}, {1'000'000'000'000ULL, 1}});
    std::ostringstream out;
    write_tag_stream(out, s);
    const std::string bytes = out.str();
    REQUIRE(bytes.size() == TagStream::kHeaderBytes + 4 * TagStream::kRecordBytes);
    CHECK(bytes.substr(0, 4) == "QTAG");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version, little-endian
    CHECK(static_cast<unsigned char>(bytes[6]) == 2);  // user id

    std::istringstream in(bytes);
    CHECK(read_tag_stream(in) == s);

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream b(bad);
        CHECK_THROWS_AS(read_tag_stream(b), TagFormatError);
    }
    SUBCASE("truncated record") {
        std::istringstream b(bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_tag_stream(b), TagFormatError);
    }
    SUBCASE("unknown channel") {
        TagStream bad = stream_of(0, {{5, 7}});
        CHECK_THROWS(bad.validate());
    }
    SUBCASE("decreasing timestamps on one channel") {
        TagStream bad = stream_of(0, {{50, 0}, {40, 0}});
        CHECK_THROWS(bad.validate());
    }
}

TEST_CASE("cross-correlation of shifted copies") {
    const auto a = poisson_times(1e-6, 1e10, 1);
    SUBCASE("self correlation peaks at zero") {
        const auto h = cross_correlate(a, a, 100, 100'000);
        const auto peak = std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin();
        CHECK(h.bin_center(std::size_t(peak)) == doctest::Approx(50.0));
        // every event pairs with itself; a chance neighbour inside 100 ps adds a few more
        CHECK(h.counts[std::size_t(peak)] >= a.size());
        CHECK(h.counts[std::size_t(peak)] <= a.size() + 10);
    }
    SUBCASE("shift of 5000 ps") {
        std::vector<std::uint64_t> b(a);
        for (auto& t : b) t += 5000;
        const auto h = cross_correlate(a, b, 100, 100'000);
        const auto peak = std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin();
        CHECK(h.bin_center(std::size_t(peak)) == doctest::Approx(5050.0));
        const auto d = find_delay(a, b, {100, 100'000});
        CHECK(std::abs(d.delay_ps - 5000.0) <= 100.0);
    }
    SUBCASE("chunking does not change the histogram") {
        const auto b = poisson_times(1e-6, 1e10, 2);
        const auto h1 = cross_correlate(a, b, 100, 1'000'000);
        for (std::size_t chunks : {1u, 3u, 8u, 1000u}) {
            CHECK(cross_correlate_chunked(a, b, 100, 1'000'000, chunks).counts == h1.counts);
        }
    }
    SUBCASE("empty input") {
        const std::vector<std::uint64_t> none;
        CHECK(cross_correlate(none, a, 100, 1000).total() == 0);
        CHECK_THROWS_AS(find_delay(none, a), NoSignificantPeak);
    }
    CHECK_THROWS(cross_correlate(a, a, 0, 100));
    CHECK_THROWS(cross_correlate(a, a, 100, 150));
}

TEST_CASE("uncorrelated streams give a flat accidental floor") {
    const double r1 = 2e-6, r2 = 3e-6, span = 2e10;  // per ps
    const auto a = poisson_times(r1, span, 3);
    const auto b = poisson_times(r2, span, 4);
    const std::int64_t bin = 1000, range = 1'000'000;
    const auto h = cross_correlate(a, b, bin, range);
    const double per_bin = double(a.size()) * double(b.size()) / span * double(bin);
    const double mean = double(h.total()) / double(h.counts.size());
    CHECK(std::abs(mean - per_bin) <= 3 * std::sqrt(per_bin / double(h.counts.size())) + 0.01 * per_bin);
    std::size_t inside = 0;
    for (auto c : h.counts) inside += std::abs(double(c) - per_bin) <= 3 * std::sqrt(per_bin);
    CHECK(double(inside) / double(h.counts.size()) >= 0.99);

    SUBCASE("no significant peak") { CHECK_THROWS_AS(find_delay(a, b), NoSignificantPeak); }
    SUBCASE("accidental coincidence rate r1 r2 w") {
        const double w = 2000.0;
        const auto n = double(count_coincidences(a, b, 0.0, w));
        const double expect = double(a.size()) * double(b.size()) / span * w;
        CHECK(std::abs(n - expect) <= 3 * std::sqrt(expect));
    }
}

TEST_CASE("delay recovery on simulated mux streams") {
    SimConfig c;
    c.params.lambda = 0.02;
    c.params.eta0 = 1.0;
    c.params.channel_loss_db = {0, 1, 1};
    c.params.det_eff = {0.5, 0.5, 0.5};
    c.windows = 20'000'000;
    c.seed = 9;
    const auto cal = calibrate_pair_delays(c, kAB);
    const auto truth = PairDelays::from_layout(c.mux, kAB);
    for (std::size_t i = 0; i < kLogicalDetectors; ++i) {
        for (std::size_t j = 0; j < kLogicalDetectors; ++j) {
            CHECK(std::abs(cal.delays.offset_ps[i][j] - truth.offset_ps[i][j]) <= 100.0);
        }
    }
}

TEST_CASE("coincidence extraction") {
    // Alice Z0 at t=1000 matches Bob Z1 (Bob's logical delay for Z1 is 10 ns)
    std::array<double, kLogicalDetectors> la{0, 20'000, 40'000, 60'000};
    std::array<double, kLogicalDetectors> lb{0, 10'000, 80'000, 160'000};
    const auto delays = PairDelays::from_logical(la, lb);
    const TagStream a = stream_of(0, {{1000, 0}, {500'000, 1}});
    const TagStream b = stream_of(1, {{11'300, 0}, {500'000 - 40'000 + 80'000 + 200, 1}});

    const auto set = extract_coincidences(a, b, delays, 2000.0);
    REQUIRE(set.events.size() == 2);
    CHECK(set.events[0].basis_a == 0);
    CHECK(set.events[0].bit_a == 0);
    CHECK(set.events[0].basis_b == 0);
    CHECK(set.events[0].bit_b == 1);
    CHECK(set.events[1].basis_a == 1);
    CHECK(set.events[1].bit_a == 0);
    CHECK(set.events[1].basis_b == 1);
    CHECK(set.events[1].bit_b == 0);

    SUBCASE("zero window") { CHECK(extract_coincidences(a, b, delays, 0.0).events.empty()); }
    SUBCASE("outside the window") { CHECK(extract_coincidences(a, b, delays, 400.0).events.size() == 1); }
    SUBCASE("symmetric in the two streams") {
        CHECK(extract_coincidences(b, a, delays.swapped(), 2000.0).events.size() == 2);
    }
    SUBCASE("two partners on one logical detector are dropped") {
        const TagStream b2 = stream_of(1, {{11'000, 0}, {11'600, 0}});
        const auto s = extract_coincidences(a, b2, delays, 2000.0);
        CHECK(s.events.empty());
        CHECK(s.diagnostics.ambiguous == 1);
    }
}

TEST_CASE("extraction count is symmetric on simulated data") {
    SimConfig c;
    c.params.lambda = 0.01;
    c.params.eta0 = 1.0;
    c.windows = 4'000'000;
    const auto r = simulate_run(c);
    const auto d = PairDelays::from_layout(c.mux, kAB);
    const auto ab = extract_coincidences(r.streams[0], r.streams[1], d, c.window_ps);
    const auto ba = extract_coincidences(r.streams[1], r.streams[0], d.swapped(), c.window_ps);
    CHECK(ab.events.size() == ba.events.size());
    CHECK(ab.events.size() > 20);
}

TEST_CASE("sifting") {
    SUBCASE("same basis, no errors: identical strings after the Z flip") {
        std::vector<Coincidence> v{event(0, 0, 0, 1), event(0, 1, 0, 0), event(1, 1, 1, 1), event(1, 0, 1, 0)};
        const auto s = sift(v);
        CHECK(s.bits_a() == s.bits_b());
        CHECK(s.mismatches(0) == 0);
        CHECK(s.mismatches(1) == 0);
        CHECK(s.count(0) == 2);
    }
    SUBCASE("cross-basis events are counted separately") {
        std::vector<Coincidence> v{event(0, 0, 1, 1), event(1, 0, 0, 1), event(0, 0, 0, 1)};
        const auto s = sift(v);
        CHECK(s.events.size() == 1);
        CHECK(s.cross_basis == 2);
    }
    SUBCASE("balanced random bases keep half") {
        std::mt19937_64 rng(5);
        std::vector<Coincidence> v;
        for (int i = 0; i < 40000; ++i) v.push_back(event(int(rng() & 1), int(rng() & 1), int(rng() & 1), int(rng() & 1)));
        const double kept = double(sift(v).events.size()) / double(v.size());
        CHECK(std::abs(kept - 0.5) <= 3 * std::sqrt(0.25 / double(v.size())));
    }
}

TEST_CASE("crosstalk matrix and QBER") {
    SUBCASE("ideal matrix") {
        std::vector<Coincidence> v;
        // same basis: anti-correlated in Z, correlated in X; 2 each. Cross basis: 1 each.
        for (int rep = 0; rep < 2; ++rep) {
            for (int bit : {0, 1}) {
                v.push_back(event(0, bit, 0, 1 - bit));
                v.push_back(event(1, bit, 1, bit));
            }
        }
        for (int ba : {0, 1}) for (int bb : {0, 1}) {
            v.push_back(event(0, ba, 1, bb));
            v.push_back(event(1, ba, 0, bb));
        }
        const auto r = crosstalk_and_qber(v);
        CHECK(*r.qber_z == 0.0);
        CHECK(*r.qber_x == 0.0);
        // columns hold the second user's logical state with the Z bit flipped,
        // so an error-free run sits on the diagonal
        CHECK(r.matrix.prob[0][0] == doctest::Approx(0.125));
        CHECK(r.matrix.prob[0][1] == 0.0);
        CHECK(r.matrix.prob[0][2] == doctest::Approx(0.0625));
        CHECK(r.z_fraction_a == doctest::Approx(0.5));
    }
    SUBCASE("uniform matrix") {
        std::vector<Coincidence> v;
        for (int l = 0; l < 4; ++l) for (int m = 0; m < 4; ++m) v.push_back(event(l / 2, l % 2, m / 2, m % 2));
        const auto r = crosstalk_and_qber(v);
        CHECK(*r.qber_z == doctest::Approx(0.5));
        CHECK(*r.qber_x == doctest::Approx(0.5));
        double sum = 0;
        for (const auto& row : r.matrix.prob) for (double p : row) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    SUBCASE("empty basis leaves the QBER undefined") {
        std::vector<Coincidence> v{event(0, 0, 0, 1)};
        const auto r = crosstalk_and_qber(v);
        CHECK(r.qber_z.has_value());
        CHECK_FALSE(r.qber_x.has_value());
    }
    CHECK_THROWS(crosstalk_and_qber(std::vector<Coincidence>{}));
}

TEST_CASE("QBER summary JSON shape") {
    std::vector<Coincidence> v{event(0, 0, 0, 1), event(1, 0, 1, 1)};
    const auto j = qber_summary_json("AB", crosstalk_and_qber(v), 42);
    REQUIRE(j.size() == 2);
    for (const auto& row : j) {
        CHECK(row.contains("pair"));
        CHECK(row.contains("basis"));
        CHECK(row.contains("qber"));
        CHECK(row.contains("counts"));
        CHECK(row["timestamp"] == 42);
    }
    CHECK(j[1]["qber"] == 1.0);
}
