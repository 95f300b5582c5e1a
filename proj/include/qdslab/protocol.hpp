#ifndef QDSLAB_PROTOCOL_HPP
#define QDSLAB_PROTOCOL_HPP

#include "qdslab/coincidence.hpp"
#include "qdslab/params.hpp"
#include "qdslab/security.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace qdslab {

using Bits = std::vector<std::uint8_t>;

class InsufficientKeyMaterial : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raw keys for one future message value: Alice's copies shared with Bob and
/// Charlie, and the verifiers' (possibly erroneous) copies.
struct KeyMaterial {
    Bits alice_b;
    Bits alice_c;
    Bits bob;
    Bits charlie;
};

struct Distribution {
    std::uint64_t length = 0;
    std::array<KeyMaterial, 2> keys;  // by message value
};

/// Consumes sifted bits in order: the first L for m = 0, the next L for m = 1.
/// ab must have Alice first and Bob second, ac Alice and Charlie. Throws
/// InsufficientKeyMaterial if either stream has fewer than 2L bits.
Distribution distribute(const SiftedKeyPair& ab, const SiftedKeyPair& ac, std::uint64_t length);

/// Positions and values of half of one verifier's key.
struct KeyHalf {
    User origin = User::Bob;
    std::vector<std::uint32_t> index;  // ascending
    Bits bits;
};

/// A verifier's key after symmetrization: the half it kept and the half the
/// other verifier sent it.
struct VerifierState {
    User owner = User::Bob;
    KeyHalf own;
    KeyHalf received;
};

struct Symmetrized {
    VerifierState bob;
    VerifierState charlie;
};

/// Each verifier picks a uniformly random L/2-subset of its key positions and
/// sends those bits to the other; it keeps the complement. L must be even.
Symmetrized symmetrize(const Bits& bob_key, const Bits& charlie_key, std::uint64_t seed);

struct SignaturePackage {
    int message = 0;
    Bits sig_b;  // Alice's key shared with Bob
    Bits sig_c;  // Alice's key shared with Charlie
};

SignaturePackage sign(const Distribution& d, int message);

/// Same length as a genuine signature, every bit uniformly random.
SignaturePackage random_forgery(int message, std::uint64_t length, std::uint64_t seed);

enum class VerifyRole { direct, forwarded };

struct Verdict {
    bool accepted = false;
    std::uint64_t mismatches_own = 0;
    std::uint64_t mismatches_received = 0;
    double limit = 0.0;  // threshold * L / 2; both counts must be strictly below
};

/// Compares each held half against the signature component of its origin.
/// Throws std::invalid_argument on length mismatches or invalid thresholds.
Verdict verify(const SignaturePackage& package, const VerifierState& state, VerifyRole role, Thresholds thresholds,
               std::uint64_t length);

/// In-process transport between parties. Messages are delivered in order and
/// logged for the transcript.
struct KeyHalfMessage {
    int message = 0;
    KeyHalf half;
};
struct SignedMessage {
    SignaturePackage package;
};
using Payload = std::variant<KeyHalfMessage, SignedMessage>;

struct Envelope {
    User from = User::Alice;
    User to = User::Bob;
    Payload payload;
};

class Channel {
public:
    void send(User from, User to, Payload payload);
    /// Next message addressed to `to`; throws std::logic_error if none.
    Envelope receive(User to);
    [[nodiscard]] const std::vector<std::string>& log() const { return log_; }

private:
    std::deque<Envelope> queue_;
    std::vector<std::string> log_;
};

/// Bright, low-loss bench configuration: eta0 = 1, eta_D = 0.9, equal
/// splitting so every user sees T = 0.3, lambda = 0.005, e_d = 0.02 in both
/// bases. Measured sifted QBER is about 0.056 once mux accidentals are added.
SystemParams desk_params();

struct ProtocolOptions {
    double epsilon = 1e-10;
    int message = 0;
    std::uint64_t seed = 1;
    bool forge = false;          // replace Alice's signature by random bits
    double key_margin = 1.25;    // simulated windows relative to the expected need
    int max_attempts = 3;        // retries scale the window count to the shortfall
    std::uint64_t max_windows = 5'000'000'000;  // total simulated windows before giving up
    int forgery_trials = 0;      // extra random forgeries checked against the same keys
};

enum class Outcome { accepted, rejected_direct, rejected_forwarded, no_security_margin, insufficient_key };

std::string_view outcome_name(Outcome o);

struct PairSummary {
    double analytic_qber = 0.0;  // (E_X + E_Z) / 2
    double measured_qber = 0.0;  // same average over the sifted data
    double gain = 0.0;
    std::uint64_t sifted = 0;
    std::array<std::uint64_t, 2> mismatches{};  // per basis
    std::array<std::uint64_t, 2> counts{};
};

struct Transcript {
    Outcome outcome = Outcome::no_security_margin;
    std::uint64_t seed = 0;
    int message = 0;
    bool forged = false;
    double qber = 0.0;  // measured, max over the two pairs with Alice
    SecurityBudget budget;
    std::uint64_t windows = 0;
    int attempts = 0;
    double windows_needed = 0.0;  // set when the next attempt would exceed max_windows
    std::array<PairSummary, 2> pairs;  // AB, AC
    std::array<double, 2> key_error_rate{};  // Alice vs Bob and Alice vs Charlie over provisioned keys
    Verdict direct;
    Verdict forwarded;
    std::vector<std::string> messages;
    int forgery_trials = 0;
    int forgeries_accepted_direct = 0;
    int forgeries_accepted_forwarded = 0;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Simulation with known mux delays, coincidence extraction for AB and AC,
/// QBER estimation, distribution, symmetrization, signing, Bob's direct check
/// and Charlie's forwarded check. Security aborts are reported in the
/// transcript. E is the larger measured QBER of AB and AC; L and the
/// thresholds follow from it.
Transcript end_to_end_run(const SystemParams& params, const ProtocolOptions& options);

}  // namespace qdslab

#endif
