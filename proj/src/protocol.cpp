#include "qdslab/protocol.hpp"

#include "qdslab/core_math.hpp"
#include "qdslab/parallel.hpp"
#include "qdslab/photon_sim.hpp"
#include "qdslab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace qdslab {

Distribution distribute(const SiftedKeyPair& ab, const SiftedKeyPair& ac, std::uint64_t length) {
    if (length == 0) throw std::invalid_argument("distribute: key length must be > 0");
    const Bits ab_a = ab.bits_a();
    const Bits ab_b = ab.bits_b();
    const Bits ac_a = ac.bits_a();
    const Bits ac_c = ac.bits_b();
    if (ab_a.size() < 2 * length || ac_a.size() < 2 * length) {
        throw InsufficientKeyMaterial("distribute: need " + std::to_string(2 * length) + " sifted bits per pair, have " +
                                      std::to_string(ab_a.size()) + " (AB) and " + std::to_string(ac_a.size()) +
                                      " (AC)");
    }
    Distribution d;
    d.length = length;
    for (std::size_t m = 0; m < 2; ++m) {
        const auto lo = static_cast<std::ptrdiff_t>(m * length);
        const auto hi = static_cast<std::ptrdiff_t>((m + 1) * length);
        auto& k = d.keys[m];
        k.alice_b.assign(ab_a.begin() + lo, ab_a.begin() + hi);
        k.bob.assign(ab_b.begin() + lo, ab_b.begin() + hi);
        k.alice_c.assign(ac_a.begin() + lo, ac_a.begin() + hi);
        k.charlie.assign(ac_c.begin() + lo, ac_c.begin() + hi);
    }
    return d;
}

namespace {

// Splits a key into a random half to send and the complement to keep.
std::pair<KeyHalf, KeyHalf> split(const Bits& key, User origin, std::mt19937_64& rng) {
    std::vector<std::uint32_t> idx(key.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto half = static_cast<std::ptrdiff_t>(key.size() / 2);
    std::vector<std::uint32_t> sent(idx.begin(), idx.begin() + half);
    std::vector<std::uint32_t> kept(idx.begin() + half, idx.end());
    std::sort(sent.begin(), sent.end());
    std::sort(kept.begin(), kept.end());
    auto pick = [&](const std::vector<std::uint32_t>& ix) {
        KeyHalf h{origin, ix, {}};
        h.bits.reserve(ix.size());
        for (auto i : ix) h.bits.push_back(key[i]);
        return h;
    };
    return {pick(sent), pick(kept)};
}

std::uint64_t count_mismatches(const KeyHalf& half, const Bits& sig) {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < half.index.size(); ++i) n += half.bits[i] != sig.at(half.index[i]);
    return n;
}

}  // namespace

Symmetrized symmetrize(const Bits& bob_key, const Bits& charlie_key, std::uint64_t seed) {
    if (bob_key.size() != charlie_key.size()) throw std::invalid_argument("symmetrize: key lengths differ");
    if (bob_key.empty() || bob_key.size() % 2 != 0) throw std::invalid_argument("symmetrize: key length must be even");
    auto rng_b = make_rng(seed, 0xb0bu);
    auto rng_c = make_rng(seed, 0xc4au);
    auto [b_sent, b_kept] = split(bob_key, User::Bob, rng_b);
    auto [c_sent, c_kept] = split(charlie_key, User::Charlie, rng_c);
    return {{User::Bob, std::move(b_kept), std::move(c_sent)}, {User::Charlie, std::move(c_kept), std::move(b_sent)}};
}

SignaturePackage sign(const Distribution& d, int message) {
    if (message != 0 && message != 1) throw std::invalid_argument("sign: message must be 0 or 1");
    const auto& k = d.keys[static_cast<std::size_t>(message)];
    return {message, k.alice_b, k.alice_c};
}

SignaturePackage random_forgery(int message, std::uint64_t length, std::uint64_t seed) {
    auto rng = make_rng(seed, 0xf0f9u);
    SignaturePackage p{message, Bits(length), Bits(length)};
    for (auto& b : p.sig_b) b = static_cast<std::uint8_t>(rng() & 1u);
    for (auto& b : p.sig_c) b = static_cast<std::uint8_t>(rng() & 1u);
    return p;
}

Verdict verify(const SignaturePackage& package, const VerifierState& state, VerifyRole role, Thresholds t,
               std::uint64_t length) {
    if (!(t.s_a > 0.0 && t.s_a < t.s_v && t.s_v < 0.5)) {
        throw std::invalid_argument("verify: thresholds must satisfy 0 < s_a < s_v < 1/2");
    }
    if (package.sig_b.size() != length || package.sig_c.size() != length) {
        throw std::invalid_argument("verify: signature length differs from L");
    }
    if (state.own.index.size() != length / 2 || state.received.index.size() != length / 2 ||
        state.own.bits.size() != state.own.index.size() || state.received.bits.size() != state.received.index.size()) {
        throw std::invalid_argument("verify: key halves must hold L/2 bits");
    }
    auto component = [&](const KeyHalf& h) -> const Bits& { return h.origin == User::Bob ? package.sig_b : package.sig_c; };
    Verdict v;
    v.mismatches_own = count_mismatches(state.own, component(state.own));
    v.mismatches_received = count_mismatches(state.received, component(state.received));
    v.limit = (role == VerifyRole::direct ? t.s_a : t.s_v) * double(length) / 2.0;
    v.accepted = double(v.mismatches_own) < v.limit && double(v.mismatches_received) < v.limit;
    return v;
}

void Channel::send(User from, User to, Payload payload) {
    const char* kind = std::holds_alternative<KeyHalfMessage>(payload) ? "key-half" : "signature";
    log_.push_back(std::string(user_name(from)) + " -> " + std::string(user_name(to)) + ": " + kind);
    queue_.push_back({from, to, std::move(payload)});
}

Envelope Channel::receive(User to) {
    const auto it = std::find_if(queue_.begin(), queue_.end(), [&](const Envelope& e) { return e.to == to; });
    if (it == queue_.end()) throw std::logic_error("Channel: no message for " + std::string(user_name(to)));
    Envelope e = std::move(*it);
    queue_.erase(it);
    return e;
}

SystemParams desk_params() {
    SystemParams p;
    p.eta0 = 1.0;
    p.lambda = 0.005;
    p.t1 = 1.0 / 3.0;
    p.channel_loss_db = {0.0, 0.0, 0.0};
    p.det_eff = {0.9, 0.9, 0.9};
    p.dark_prob = {1e-6, 1e-6, 1e-6};
    p.misalign_x = {0.02, 0.02, 0.02};
    p.misalign_z = {0.02, 0.02, 0.02};
    return p;
}

std::string_view outcome_name(Outcome o) {
    switch (o) {
        case Outcome::accepted: return "accepted";
        case Outcome::rejected_direct: return "rejected_direct";
        case Outcome::rejected_forwarded: return "rejected_forwarded";
        case Outcome::no_security_margin: return "no_security_margin";
        case Outcome::insufficient_key: return "insufficient_key";
    }
    return "unknown";
}

namespace {

constexpr UserPair kAb{User::Alice, User::Bob};
constexpr UserPair kAc{User::Alice, User::Charlie};

nlohmann::json verdict_json(const Verdict& v) {
    return {{"accepted", v.accepted},
            {"mismatches_own", v.mismatches_own},
            {"mismatches_received", v.mismatches_received},
            {"limit", v.limit}};
}

double error_rate(const Bits& a, const Bits& b) {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return a.empty() ? 0.0 : double(n) / double(a.size());
}

}  // namespace

nlohmann::json Transcript::to_json() const {
    nlohmann::json pj = nlohmann::json::array();
    const std::array<const char*, 2> labels{"AB", "AC"};
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& p = pairs[i];
        pj.push_back({{"pair", labels[i]},
                      {"analytic_qber", p.analytic_qber},
                      {"gain", p.gain},
                      {"measured_qber", p.measured_qber},
                      {"sifted", p.sifted},
                      {"counts", p.counts},
                      {"mismatches", p.mismatches},
                      {"key_error_rate", key_error_rate[i]}});
    }
    return {{"outcome", outcome_name(outcome)},
            {"seed", seed},
            {"message", message},
            {"forged", forged},
            {"qber", qber},
            {"security",
             {{"p_e", budget.p_e},
              {"s_a", budget.s_a},
              {"s_v", budget.s_v},
              {"length", budget.raw_len},
              {"epsilon", budget.epsilon},
              {"bounds",
               {{"abort", budget.bounds.abort},
                {"repudiation", budget.bounds.repudiation},
                {"forge", budget.bounds.forge}}}}},
            {"windows", windows},
            {"attempts", attempts},
            {"windows_needed", windows_needed},
            {"pairs", pj},
            {"direct", verdict_json(direct)},
            {"forwarded", verdict_json(forwarded)},
            {"forgery_trials", forgery_trials},
            {"forgeries_accepted", {{"direct", forgeries_accepted_direct}, {"forwarded", forgeries_accepted_forwarded}}},
            {"messages", messages}};
}

Transcript end_to_end_run(const SystemParams& params, const ProtocolOptions& o) {
    params.validate();
    if (o.message != 0 && o.message != 1) throw std::invalid_argument("end_to_end_run: message must be 0 or 1");
    if (!(o.key_margin >= 1.0) || o.max_attempts < 1) throw std::invalid_argument("end_to_end_run: invalid options");

    Transcript t;
    t.seed = o.seed;
    t.message = o.message;
    t.forged = o.forge;

    const std::array<UserPair, 2> pairs{kAb, kAc};
    double min_gain = 1.0;
    double analytic = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const GainQber g = gain_qber(params, pairs[i]);
        t.pairs[i].analytic_qber = g.e_avg;
        t.pairs[i].gain = g.q_total;
        analytic = std::max(analytic, g.e_avg);
        min_gain = std::min(min_gain, g.q_total);
    }
    // The analytic QBER only sizes the first simulation; thresholds and L come
    // from the QBER the parties measure on their sifted data.
    std::uint64_t length = 0;
    try {
        length = required_length(analytic, o.epsilon);
    } catch (const NoSecurityMargin&) {
        t.qber = analytic;
        t.outcome = Outcome::no_security_margin;
        return t;
    }

    // Sifted bits per window are about twice the per-basis gain. Later
    // attempts simulate only the shortfall and append to the sifted keys.
    double windows = std::ceil(o.key_margin * double(2 * length) / (2.0 * min_gain));
    std::array<SiftedKeyPair, 2> keys;
    Distribution dist;
    bool have_keys = false;
    for (int attempt = 0; attempt < o.max_attempts && !have_keys; ++attempt) {
        windows = std::max(windows, 1.0);
        if (double(t.windows) + windows > double(o.max_windows)) {
            t.windows_needed = double(t.windows) + windows;
            break;
        }
        SimConfig cfg;
        cfg.params = params;
        cfg.windows = static_cast<std::uint64_t>(windows);
        cfg.seed = mix64(o.seed + std::uint64_t(attempt));
        cfg.record_truth = false;
        const SimResult sim = simulate_run(cfg);
        t.windows += cfg.windows;
        t.attempts = attempt + 1;

        std::uint64_t fewest = std::numeric_limits<std::uint64_t>::max();
        bool both_bases = true;
        t.qber = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            const PairAnalysis an =
                analyze_pair(sim.streams, pairs[i], PairDelays::from_layout(cfg.mux, pairs[i]), cfg.window_ps);
            keys[i].events.insert(keys[i].events.end(), an.sifted.events.begin(), an.sifted.events.end());
            keys[i].cross_basis += an.sifted.cross_basis;
            auto& s = t.pairs[i];
            s.sifted = keys[i].events.size();
            fewest = std::min(fewest, s.sifted);
            for (int b = 0; b < 2; ++b) {
                s.counts[std::size_t(b)] = keys[i].count(b);
                s.mismatches[std::size_t(b)] = keys[i].mismatches(b);
            }
            both_bases = both_bases && s.counts[0] > 0 && s.counts[1] > 0;
            if (!both_bases) continue;
            s.measured_qber = 0.5 * (double(s.mismatches[0]) / double(s.counts[0]) +
                                     double(s.mismatches[1]) / double(s.counts[1]));
            t.qber = std::max(t.qber, s.measured_qber);
        }
        if (!both_bases) continue;
        try {
            t.budget = security_budget(t.qber, o.epsilon);
        } catch (const NoSecurityMargin&) {
            t.outcome = Outcome::no_security_margin;
            return t;
        }
        length = t.budget.raw_len;
        if (fewest >= 2 * length) {
            dist = distribute(keys[0], keys[1], length);
            have_keys = true;
        } else {
            const double per_window = double(std::max<std::uint64_t>(fewest, 1)) / double(t.windows);
            windows = std::ceil(o.key_margin * double(2 * length - fewest) / per_window);
        }
    }
    if (!have_keys) {
        t.outcome = Outcome::insufficient_key;
        return t;
    }
    const Thresholds th{t.budget.s_a, t.budget.s_v};
    const auto& km = dist.keys[static_cast<std::size_t>(o.message)];
    t.key_error_rate = {error_rate(km.alice_b, km.bob), error_rate(km.alice_c, km.charlie)};

    // Symmetrization of both message values through the channel.
    Channel ch;
    std::array<VerifierState, 2> bob_state;
    std::array<VerifierState, 2> charlie_state;
    for (int m = 0; m < 2; ++m) {
        const auto& k = dist.keys[std::size_t(m)];
        Symmetrized s = symmetrize(k.bob, k.charlie, mix64(o.seed ^ (0x5e11u + std::uint64_t(m))));
        ch.send(User::Bob, User::Charlie, KeyHalfMessage{m, s.charlie.received});
        ch.send(User::Charlie, User::Bob, KeyHalfMessage{m, s.bob.received});
        bob_state[std::size_t(m)] = {User::Bob, std::move(s.bob.own), {}};
        charlie_state[std::size_t(m)] = {User::Charlie, std::move(s.charlie.own), {}};
    }
    for (int i = 0; i < 2; ++i) {
        auto to_charlie = std::get<KeyHalfMessage>(ch.receive(User::Charlie).payload);
        charlie_state[std::size_t(to_charlie.message)].received = std::move(to_charlie.half);
        auto to_bob = std::get<KeyHalfMessage>(ch.receive(User::Bob).payload);
        bob_state[std::size_t(to_bob.message)].received = std::move(to_bob.half);
    }

    // Messaging: Alice signs, Bob checks and forwards, Charlie checks.
    const SignaturePackage pkg = o.forge ? random_forgery(o.message, length, mix64(o.seed ^ 0xf06eu))
                                         : sign(dist, o.message);
    ch.send(User::Alice, User::Bob, SignedMessage{pkg});
    const SignaturePackage at_bob = std::get<SignedMessage>(ch.receive(User::Bob).payload).package;
    t.direct = verify(at_bob, bob_state[std::size_t(at_bob.message)], VerifyRole::direct, th, length);
    // Charlie's check always runs so a transcript shows both verdicts, as if
    // Bob forwarded regardless of his own result.
    ch.send(User::Bob, User::Charlie, SignedMessage{at_bob});
    const SignaturePackage at_charlie = std::get<SignedMessage>(ch.receive(User::Charlie).payload).package;
    t.forwarded = verify(at_charlie, charlie_state[std::size_t(at_charlie.message)], VerifyRole::forwarded, th, length);

    t.outcome = !t.direct.accepted ? Outcome::rejected_direct
                                   : (!t.forwarded.accepted ? Outcome::rejected_forwarded : Outcome::accepted);
    t.messages = ch.log();

    for (int k = 0; k < o.forgery_trials; ++k) {
        const auto fake = random_forgery(o.message, length, mix64(o.seed ^ (0xfa4e0000u + std::uint64_t(k))));
        t.forgeries_accepted_direct +=
            verify(fake, bob_state[std::size_t(o.message)], VerifyRole::direct, th, length).accepted;
        t.forgeries_accepted_forwarded +=
            verify(fake, charlie_state[std::size_t(o.message)], VerifyRole::forwarded, th, length).accepted;
    }
    t.forgery_trials = o.forgery_trials;
    return t;
}

}  // namespace qdslab
