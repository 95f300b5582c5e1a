#ifndef QDSLAB_PARAMS_HPP
#define QDSLAB_PARAMS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace qdslab {

enum class User : std::uint8_t { Alice = 0, Bob = 1, Charlie = 2 };

inline constexpr std::size_t kUsers = 3;
inline constexpr std::size_t kPairs = 3;

std::string_view user_name(User u);
char user_letter(User u);

/// Ordered pair of distinct users. The canonical pairs are AB, AC, BC.
struct UserPair {
    User first = User::Alice;
    User second = User::Bob;

    /// Index into per-pair tables: AB=0, AC=1, BC=2.
    [[nodiscard]] std::size_t index() const;
    [[nodiscard]] std::string label() const;  // "AB", ...
    [[nodiscard]] bool involves_alice() const { return first == User::Alice || second == User::Alice; }

    static UserPair from_index(std::size_t i);
    /// Parses "AB", "ac", "Bob-Charlie".
    static UserPair parse(std::string_view text);

    friend bool operator==(const UserPair&, const UserPair&) = default;
};

inline constexpr std::array<UserPair, kPairs> kAllPairs{{
    {User::Alice, User::Bob},
    {User::Alice, User::Charlie},
    {User::Bob, User::Charlie},
}};

/// Physical parameterization of one three-party deployment.
/// Per-user arrays are indexed Alice, Bob, Charlie; per-pair arrays AB, AC, BC.
struct SystemParams {
    double eta0 = 0.3;          // source internal transmission
    double lambda = 0.0047;     // half the mean pair number per window
    double t1 = 1.0 / 3.0;      // splitter fraction routed to Alice
    double rep_rate_hz = 5e8;   // inverse coincidence window for a CW pump
    std::array<double, kUsers> channel_loss_db{0.0, 2.44, 5.5};
    std::array<double, kUsers> det_eff{0.14, 0.035, 0.12};
    std::array<double, kUsers> dark_prob{1e-7, 1e-6, 1e-7};
    std::array<double, kPairs> misalign_x{0.031, 0.019, 0.018};
    std::array<double, kPairs> misalign_z{0.017, 0.013, 0.013};
    double epsilon = 1e-10;
    double f_ec = 1.16;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;

    [[nodiscard]] double misalign_x_for(UserPair p) const { return misalign_x[p.index()]; }
    [[nodiscard]] double misalign_z_for(UserPair p) const { return misalign_z[p.index()]; }
    /// Worst-case dark-count probability of the two users.
    [[nodiscard]] double pair_dark_prob(UserPair p) const;
    /// Probability that a single emitted photon is detected by user u.
    [[nodiscard]] double user_transmission(User u) const;
    /// Window period in picoseconds.
    [[nodiscard]] double period_ps() const { return 1e12 / rep_rate_hz; }

    /// Sets the channel loss that the sweeps associate with a pair: the remote
    /// user for pairs with Alice, both remote users for Bob-Charlie.
    void set_pair_loss(UserPair p, double loss_db);

    /// Deployed system.
    static SystemParams current();
    /// Upgraded source, detectors and optics.
    static SystemParams improved();
};

/// Detection probabilities of a single photon at the two users of a pair.
struct LinkBudget {
    double t_source = 0.0;  // first user of the pair
    double t_remote = 0.0;  // second user
};

LinkBudget link_budget(const SystemParams& params, UserPair pair);

}  // namespace qdslab

#endif
