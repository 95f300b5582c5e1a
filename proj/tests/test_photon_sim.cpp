#include "doctest.h"

#include "qdslab/coincidence.hpp"
#include "qdslab/noise_model.hpp"
#include "qdslab/photon_sim.hpp"
#include "qdslab/pipeline.hpp"

#include <cmath>

using namespace qdslab;

namespace {

constexpr UserPair kAB{User::Alice, User::Bob};

SimConfig dim_config(std::uint64_t windows, std::uint64_t seed) {
    SimConfig c;
    c.params.eta0 = 1.0;
    c.params.lambda = 1e-4;
    c.params.channel_loss_db = {0, 0, 0};
    c.params.det_eff = {0.9, 0.9, 0.9};
    c.params.dark_prob = {0, 0, 0};
    c.params.misalign_x = {0, 0, 0};
    c.params.misalign_z = {0, 0, 0};
    c.windows = windows;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("no light and no dark counts gives empty streams") {
    SimConfig c;
    c.params.lambda = 0.0;
    c.params.dark_prob = {0, 0, 0};
    c.windows = 1'000'000;
    const auto r = simulate_run(c);
    for (const auto& s : r.streams) CHECK(s.records.empty());
}

TEST_CASE("dark counts only follow the Poisson rate") {
    SimConfig c;
    c.params.lambda = 0.0;
    c.params.dark_prob = {1e-6, 1e-6, 1e-6};
    c.windows = 100'000'000;  // 0.2 s
    const auto r = simulate_run(c);
    const double expect = double(c.windows) * 1e-6 * 2;  // two logical detectors per physical channel
    for (const auto& s : r.streams) {
        for (std::uint16_t ch = 0; ch < kPhysicalChannels; ++ch) {
            const auto n = double(s.channel_times(ch).size());
            CHECK(std::abs(n - expect) <= 3 * std::sqrt(expect));
        }
    }
}

TEST_CASE("noise-free source has zero QBER in both bases") {
    const auto r = simulate_run(dim_config(2'000'000, 3));
    for (const auto& t : r.truth.tallies) {
        CHECK(t.errors[0] == 0);
        CHECK(t.errors[1] == 0);
    }
    CHECK(r.truth.tallies[0].sifted[0] > 0);
}

TEST_CASE("simulation is deterministic and time-ordered") {
    SimConfig c;
    c.params.lambda = 0.01;
    c.params.eta0 = 1.0;
    c.windows = 3'000'000;
    c.seed = 77;
    const auto a = simulate_run(c);
    const auto b = simulate_run(c);
    for (std::size_t u = 0; u < kUsers; ++u) {
        CHECK(a.streams[u] == b.streams[u]);
        for (std::uint16_t ch = 0; ch < kPhysicalChannels; ++ch) {
            const auto t = a.streams[u].channel_times(ch);
            for (std::size_t i = 1; i < t.size(); ++i) CHECK_MESSAGE(t[i] > t[i - 1], "channel " << ch);
        }
    }
    c.seed = 78;
    CHECK_FALSE(simulate_run(c).streams[0] == a.streams[0]);
}

TEST_CASE("post-selection rules") {
    // logical index = basis * 2 + bit
    CHECK(post_select(0, false).basis == -1);
    const auto z1 = post_select(1u << logical_index(0, 1), false);
    CHECK(z1.basis == 0);
    CHECK(z1.bit == 1);
    // clicks in both bases are discarded
    CHECK(post_select((1u << logical_index(0, 0)) | (1u << logical_index(1, 0)), false).basis == -1);
    // same-basis double click takes the supplied random bit
    const std::uint8_t dbl = (1u << logical_index(1, 0)) | (1u << logical_index(1, 1));
    CHECK(post_select(dbl, true).basis == 1);
    CHECK(post_select(dbl, true).bit == 1);
    CHECK(post_select(dbl, false).bit == 0);
}

TEST_CASE("single-pair windows reproduce the first-order error") {
    auto p = SystemParams::current();
    p.dark_prob = {0, 0, 0};
    p.eta0 = 1.0;  // more coincidences per window; the ratio does not depend on T
    const auto est = run_oracle(oracle_spec(p, kAB), kAB, 20'000'000, 5, 1);
    const double e = p.misalign_z_for(kAB);
    const double expect = 2 * e * (1 - e);
    CHECK(std::abs(est.gain.e_z - expect) <= 3 * est.e_z_se);
}

TEST_CASE("basis choice is balanced") {
    SimConfig c;
    c.params = SystemParams::current();
    c.params.eta0 = 1.0;
    c.params.lambda = 0.01;
    c.windows = 5'000'000;
    const auto est = oracle_gain_qber(c, kAB);
    const double nz = double(est.tally.sifted[0]), nx = double(est.tally.sifted[1]);
    const double n = nz + nx;
    CHECK(std::abs(nz / n - 0.5) <= 3 * std::sqrt(0.25 / n));
}

TEST_CASE("oracle needs enough windows") {
    SimConfig c;
    c.windows = 1000;
    CHECK_THROWS_AS(oracle_gain_qber(c, kAB), std::invalid_argument);
}

TEST_CASE("mux layout validation") {
    const auto m = MuxLayout::standard(2000.0);
    CHECK_NOTHROW(m.validate(2000.0));
    auto bad = m;
    bad.delay_ps[1][1] = bad.delay_ps[1][0] + 1000;
    CHECK_THROWS_AS(bad.validate(2000.0), std::invalid_argument);
}

TEST_CASE("engine per-user flips reproduce the single-pair error of every pair") {
    auto p = SystemParams::current();
    p.misalign_z = {0.02, 0.03, 0.04};
    p.misalign_x = {0.05, 0.01, 0.045};
    const auto spec = engine_spec(p);
    for (std::size_t i = 0; i < kPairs; ++i) {
        const auto pair = kAllPairs[i];
        const auto& u = spec.users[static_cast<std::size_t>(pair.first)];
        const auto& v = spec.users[static_cast<std::size_t>(pair.second)];
        // a pair error needs exactly one of the two users to flip; the model's
        // single-pair error is 2 e_d (1 - e_d), both analyzers misaligned by e_d
        const double ez = p.misalign_z[i], ex = p.misalign_x[i];
        CHECK(u.flip_z * (1 - v.flip_z) + v.flip_z * (1 - u.flip_z) == doctest::Approx(2 * ez * (1 - ez)).epsilon(1e-12));
        CHECK(u.flip_x * (1 - v.flip_x) + v.flip_x * (1 - u.flip_x) == doctest::Approx(2 * ex * (1 - ex)).epsilon(1e-12));
    }
}

TEST_CASE("dim noiseless source: pipeline coincidences equal ground truth") {
    const auto c = dim_config(20'000'000, 11);
    const auto r = simulate_run(c);
    for (UserPair pair : kAllPairs) {
        const auto a = analyze_pair(r.streams, pair, PairDelays::from_layout(c.mux, pair), c.window_ps);
        const auto& t = r.truth.tallies[pair.index()];
        INFO(pair.label());
        // logical delays are whole multiples of four windows, so clicks from
        // different pairs can line up by chance; about 0.3 such events are expected here
        for (int b : {0, 1}) {
            CHECK(a.sifted.count(b) >= t.sifted[std::size_t(b)]);
            CHECK(a.sifted.count(b) <= t.sifted[std::size_t(b)] + 3);
            CHECK(a.sifted.mismatches(b) <= a.sifted.count(b) - t.sifted[std::size_t(b)]);
        }
    }
}
