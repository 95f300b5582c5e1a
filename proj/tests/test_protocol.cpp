#include "doctest.h"

#include "qdslab/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace qdslab;

namespace {

// Sifted key pair with the given number of events and independent bit errors.
SiftedKeyPair keys(std::size_t n, double error, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution flip(error);
    SiftedKeyPair k;
    for (std::size_t i = 0; i < n; ++i) {
        const auto bit = static_cast<std::uint8_t>(rng() & 1u);
        k.events.push_back({i, std::int8_t(i % 2), bit, static_cast<std::uint8_t>(bit ^ flip(rng))});
    }
    return k;
}

Bits random_bits(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Bits b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng() & 1u);
    return b;
}

// Verifier holding exact copies of Alice's keys.
struct ErrorFreeSetup {
    Distribution d;
    Symmetrized s;
};

ErrorFreeSetup error_free(std::uint64_t length, std::uint64_t seed) {
    ErrorFreeSetup e;
    e.d = distribute(keys(2 * length, 0.0, seed), keys(2 * length, 0.0, seed + 1), length);
    e.s = symmetrize(e.d.keys[0].bob, e.d.keys[0].charlie, seed);
    return e;
}

}  // namespace

TEST_CASE("distribution") {
    SUBCASE("error-free keys are exact copies") {
        const auto d = distribute(keys(200, 0.0, 1), keys(200, 0.0, 2), 100);
        for (const auto& k : d.keys) {
            CHECK(k.alice_b == k.bob);
            CHECK(k.alice_c == k.charlie);
            CHECK(k.alice_b.size() == 100);
        }
        CHECK(d.keys[0].alice_b != d.keys[1].alice_b);
    }
    SUBCASE("bits are consumed in order") {
        const auto ab = keys(20, 0.0, 3);
        const auto d = distribute(ab, keys(20, 0.0, 4), 10);
        const auto bits = ab.bits_a();
        CHECK(d.keys[0].alice_b == Bits(bits.begin(), bits.begin() + 10));
        CHECK(d.keys[1].alice_b == Bits(bits.begin() + 10, bits.end()));
    }
    SUBCASE("insufficient key material") {
        CHECK_THROWS_AS(distribute(keys(200, 0, 1), keys(199, 0, 2), 100), InsufficientKeyMaterial);
        CHECK_THROWS_AS(distribute(keys(199, 0, 1), keys(200, 0, 2), 100), InsufficientKeyMaterial);
        CHECK_NOTHROW(distribute(keys(200, 0, 1), keys(200, 0, 2), 100));
    }
    SUBCASE("error rate of noisy keys") {
        const std::uint64_t len = 20000;
        const auto d = distribute(keys(2 * len, 0.05, 5), keys(2 * len, 0.05, 6), len);
        std::uint64_t mism = 0;
        for (std::size_t i = 0; i < len; ++i) mism += d.keys[0].alice_b[i] != d.keys[0].bob[i];
        const double f = double(mism) / double(len);
        CHECK(std::abs(f - 0.05) <= 3 * std::sqrt(0.05 * 0.95 / double(len)));
    }
}

TEST_CASE("symmetrization") {
    SUBCASE("L = 2 exchanges one index each way") {
        const auto s = symmetrize({0, 1}, {1, 1}, 9);
        CHECK(s.bob.own.index.size() == 1);
        CHECK(s.bob.received.index.size() == 1);
        CHECK(s.bob.received.origin == User::Charlie);
        CHECK(s.charlie.received.origin == User::Bob);
    }
    SUBCASE("kept and sent halves partition each key") {
        const Bits kb = random_bits(64, 1), kc = random_bits(64, 2);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto s = symmetrize(kb, kc, seed);
            for (const auto& [kept, sent, key] : {std::tuple{&s.bob.own, &s.charlie.received, &kb},
                                                  std::tuple{&s.charlie.own, &s.bob.received, &kc}}) {
                std::set<std::uint32_t> all(kept->index.begin(), kept->index.end());
                for (auto i : sent->index) CHECK(all.insert(i).second);
                CHECK(all.size() == 64);
                CHECK(std::is_sorted(kept->index.begin(), kept->index.end()));
                // bits travel with their positions
                for (std::size_t i = 0; i < kept->index.size(); ++i) CHECK(kept->bits[i] == (*key)[kept->index[i]]);
                for (std::size_t i = 0; i < sent->index.size(); ++i) CHECK(sent->bits[i] == (*key)[sent->index[i]]);
            }
        }
    }
    SUBCASE("each index is sent with probability one half") {
        const std::size_t len = 20;
        const int seeds = 10000;
        std::vector<int> sent_b(len), sent_c(len);
        const Bits k(len, 0);
        for (int s = 0; s < seeds; ++s) {
            const auto sym = symmetrize(k, k, std::uint64_t(s));
            for (auto i : sym.charlie.received.index) ++sent_b[i];
            for (auto i : sym.bob.received.index) ++sent_c[i];
        }
        // one chi-square over all 40 cells rather than 40 separate 3-sigma checks
        const double var = 0.25 * seeds;
        double chi2 = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            chi2 += std::pow(sent_b[i] - 0.5 * seeds, 2) / var + std::pow(sent_c[i] - 0.5 * seeds, 2) / var;
        }
        CHECK(chi2 < 73.4);  // 99.9% quantile for 40 degrees of freedom
    }
    SUBCASE("invalid lengths") {
        CHECK_THROWS(symmetrize({0, 1, 1}, {0, 1, 1}, 1));
        CHECK_THROWS(symmetrize({0, 1}, {0, 1, 1, 0}, 1));
    }
}

TEST_CASE("verification") {
    const Thresholds t{0.1, 0.2};
    const std::uint64_t len = 100;
    auto setup = error_free(len, 17);
    const auto pkg = sign(setup.d, 0);

    SUBCASE("identical bits accept") {
        for (auto role : {VerifyRole::direct, VerifyRole::forwarded}) {
            const auto v = verify(pkg, setup.s.bob, role, t, len);
            CHECK(v.accepted);
            CHECK(v.mismatches_own == 0);
            CHECK(v.mismatches_received == 0);
        }
    }
    SUBCASE("mismatches exactly at the limit reject") {
        // direct limit s_a L / 2 = 5
        auto bad = pkg;
        auto& own = setup.s.bob.own;
        for (int k = 0; k < 5; ++k) bad.sig_b[own.index[std::size_t(k)]] ^= 1u;
        auto v = verify(bad, setup.s.bob, VerifyRole::direct, t, len);
        CHECK(v.mismatches_own == 5);
        CHECK(v.limit == doctest::Approx(5.0));
        CHECK_FALSE(v.accepted);
        // one fewer is accepted
        bad.sig_b[own.index[0]] ^= 1u;
        v = verify(bad, setup.s.bob, VerifyRole::direct, t, len);
        CHECK(v.mismatches_own == 4);
        CHECK(v.accepted);
    }
    SUBCASE("received half is checked against its origin") {
        auto bad = pkg;
        const auto& recv = setup.s.bob.received;  // from Charlie's key
        for (int k = 0; k < 10; ++k) bad.sig_c[recv.index[std::size_t(k)]] ^= 1u;
        const auto d = verify(bad, setup.s.bob, VerifyRole::direct, t, len);
        CHECK(d.mismatches_own == 0);
        CHECK(d.mismatches_received == 10);
        CHECK_FALSE(d.accepted);
        // forwarded limit is 10 as well, still strict
        CHECK_FALSE(verify(bad, setup.s.bob, VerifyRole::forwarded, t, len).accepted);
    }
    SUBCASE("random forgery") {
        const std::uint64_t big = 1000;
        auto s = error_free(big, 3);
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const auto f = random_forgery(0, big, seed);
            CHECK_FALSE(verify(f, s.s.bob, VerifyRole::direct, {0.09, 0.15}, big).accepted);
            CHECK_FALSE(verify(f, s.s.charlie, VerifyRole::forwarded, {0.09, 0.15}, big).accepted);
        }
    }
    SUBCASE("direct acceptance implies forwarded acceptance") {
        std::mt19937_64 rng(8);
        for (int k = 0; k < 300; ++k) {
            auto bad = pkg;
            const int flips = int(rng() % 25);
            for (int i = 0; i < flips; ++i) bad.sig_b[rng() % len] ^= 1u;
            for (int i = 0; i < flips; ++i) bad.sig_c[rng() % len] ^= 1u;
            const auto d = verify(bad, setup.s.charlie, VerifyRole::direct, t, len);
            const auto f = verify(bad, setup.s.charlie, VerifyRole::forwarded, t, len);
            if (d.accepted) CHECK(f.accepted);
            // deterministic
            CHECK(verify(bad, setup.s.charlie, VerifyRole::direct, t, len).mismatches_own == d.mismatches_own);
        }
    }
    SUBCASE("error-free keys accept for every even L") {
        for (std::uint64_t l = 2; l <= 40; l += 2) {
            auto s = error_free(l, l);
            for (int m : {0, 1}) {
                const auto p = sign(s.d, m);
                CHECK(p.message == m);
                const auto sm = symmetrize(s.d.keys[std::size_t(m)].bob, s.d.keys[std::size_t(m)].charlie, l);
                CHECK(verify(p, sm.bob, VerifyRole::direct, {0.01, 0.02}, l).accepted);
                CHECK(verify(p, sm.charlie, VerifyRole::forwarded, {0.01, 0.02}, l).accepted);
            }
        }
    }
    SUBCASE("invalid input") {
        CHECK_THROWS_AS(verify(pkg, setup.s.bob, VerifyRole::direct, {0.2, 0.1}, len), std::invalid_argument);
        CHECK_THROWS_AS(verify(pkg, setup.s.bob, VerifyRole::direct, {0.0, 0.1}, len), std::invalid_argument);
        CHECK_THROWS_AS(verify(pkg, setup.s.bob, VerifyRole::direct, {0.1, 0.5}, len), std::invalid_argument);
        auto short_sig = pkg;
        short_sig.sig_b.pop_back();
        CHECK_THROWS_AS(verify(short_sig, setup.s.bob, VerifyRole::direct, t, len), std::invalid_argument);
        CHECK_THROWS(sign(setup.d, 2));
    }
}

TEST_CASE("channel") {
    Channel ch;
    ch.send(User::Bob, User::Charlie, KeyHalfMessage{0, {}});
    ch.send(User::Alice, User::Bob, SignedMessage{});
    ch.send(User::Charlie, User::Bob, KeyHalfMessage{1, {}});
    const auto first = ch.receive(User::Bob);
    CHECK(first.from == User::Alice);
    CHECK(std::holds_alternative<SignedMessage>(first.payload));
    CHECK(ch.receive(User::Bob).from == User::Charlie);
    CHECK(ch.receive(User::Charlie).from == User::Bob);
    CHECK_THROWS_AS(ch.receive(User::Alice), std::logic_error);
    CHECK(ch.log().size() == 3);
}

TEST_CASE("end-to-end runs") {
    SUBCASE("low-noise bench accepts") {
        auto p = desk_params();
        p.misalign_x = {0, 0, 0};
        p.misalign_z = {0, 0, 0};
        p.dark_prob = {0, 0, 0};
        ProtocolOptions o;
        o.seed = 4;
        const auto t = end_to_end_run(p, o);
        CHECK(t.outcome == Outcome::accepted);
        CHECK(t.direct.accepted);
        CHECK(t.forwarded.accepted);
        CHECK(t.budget.raw_len % 2 == 0);
    }
    SUBCASE("honest desk run, forgeries rejected, transcript replayable") {
        ProtocolOptions o;
        o.seed = 12;
        o.message = 1;
        o.forgery_trials = 20;
        const auto t = end_to_end_run(desk_params(), o);
        CHECK(t.outcome == Outcome::accepted);
        CHECK(t.qber > 0.04);
        CHECK(t.qber < 0.07);
        CHECK(t.budget.raw_len == required_length(t.qber, o.epsilon));
        CHECK(t.forgeries_accepted_direct == 0);
        CHECK(t.forgeries_accepted_forwarded == 0);
        for (double e : t.key_error_rate) CHECK(e < t.budget.s_a);

        const auto j = t.to_json();
        for (const char* k : {"outcome", "seed", "qber", "security", "direct", "forwarded", "pairs", "messages", "forgeries_accepted"}) {
            CHECK_MESSAGE(j.contains(k), k);
        }
        CHECK(end_to_end_run(desk_params(), o).to_json() == j);
    }
    SUBCASE("forged signature is rejected") {
        ProtocolOptions o;
        o.seed = 5;
        o.forge = true;
        const auto t = end_to_end_run(desk_params(), o);
        CHECK_FALSE(t.direct.accepted);
        CHECK_FALSE(t.forwarded.accepted);
        CHECK(t.outcome == Outcome::rejected_direct);
    }
    SUBCASE("no security margin is an outcome, not an exception") {
        auto p = desk_params();
        p.misalign_x = {0.15, 0.15, 0.15};
        p.misalign_z = {0.15, 0.15, 0.15};
        ProtocolOptions o;
        const auto t = end_to_end_run(p, o);
        CHECK(t.outcome == Outcome::no_security_margin);
        CHECK(outcome_name(t.outcome) == "no_security_margin");
    }
    SUBCASE("window cap ends the run before simulating") {
        ProtocolOptions o;
        o.max_windows = 1000;
        const auto t = end_to_end_run(desk_params(), o);
        CHECK(t.outcome == Outcome::insufficient_key);
        CHECK(t.windows == 0);
        CHECK(t.windows_needed > 1000.0);
        CHECK(t.to_json().at("windows_needed") == t.windows_needed);
    }
}
