#include "qdslab/params.hpp"

#include "qdslab/core_math.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace qdslab {

std::string_view user_name(User u) {
    switch (u) {
        case User::Alice: return "Alice";
        case User::Bob: return "Bob";
        case User::Charlie: return "Charlie";
    }
    return "?";
}

char user_letter(User u) { return user_name(u).front(); }

std::size_t UserPair::index() const {
    auto a = static_cast<int>(first);
    auto b = static_cast<int>(second);
    if (a > b) std::swap(a, b);
    if (a == 0 && b == 1) return 0;
    if (a == 0 && b == 2) return 1;
    if (a == 1 && b == 2) return 2;
    throw std::invalid_argument("UserPair: users must differ");
}

std::string UserPair::label() const {
    return {user_letter(first), user_letter(second)};
}

UserPair UserPair::from_index(std::size_t i) {
    if (i >= kPairs) throw std::out_of_range("UserPair::from_index");
    return kAllPairs[i];
}

UserPair UserPair::parse(std::string_view text) {
    // "AB", "ac", "Alice-Bob", "bob_charlie"
    std::string letters;
    std::size_t pos = 0;
    const bool tokenized = text.find_first_of("-_ ") != std::string_view::npos;
    while (pos < text.size()) {
        const std::size_t end = tokenized ? std::min(text.find_first_of("-_ ", pos), text.size()) : pos + 1;
        if (end > pos) letters.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(text[pos]))));
        pos = end + (tokenized ? 1 : 0);
    }
    auto user_of = [&](char c) {
        switch (c) {
            case 'A': return User::Alice;
            case 'B': return User::Bob;
            case 'C': return User::Charlie;
            default: throw std::invalid_argument("unknown user in pair '" + std::string(text) + "'");
        }
    };
    if (letters.size() != 2) throw std::invalid_argument("bad pair '" + std::string(text) + "'");
    UserPair p{user_of(letters[0]), user_of(letters[1])};
    (void)p.index();
    return p;
}

namespace {

void require_unit(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
        std::ostringstream msg;
        msg << "SystemParams." << name << "=" << v << " outside [0,1]";
        throw std::invalid_argument(msg.str());
    }
}

}  // namespace

void SystemParams::validate() const {
    require_unit(eta0, "eta0");
    require_unit(t1, "t1");
    if (!(lambda >= 0.0 && lambda <= 0.1)) {
        throw std::invalid_argument("SystemParams.lambda must lie in [0, 0.1] (weak pump)");
    }
    if (!(rep_rate_hz > 0.0)) throw std::invalid_argument("SystemParams.rep_rate_hz must be > 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("SystemParams.epsilon must lie in (0,1)");
    if (!(f_ec >= 0.0)) throw std::invalid_argument("SystemParams.f_ec must be >= 0");
    for (std::size_t i = 0; i < kUsers; ++i) {
        if (!(channel_loss_db[i] >= 0.0)) throw std::invalid_argument("SystemParams.channel_loss_db must be >= 0");
        require_unit(det_eff[i], "det_eff");
        require_unit(dark_prob[i], "dark_prob");
    }
    for (std::size_t i = 0; i < kPairs; ++i) {
        if (!(misalign_x[i] >= 0.0 && misalign_x[i] <= 0.5)) throw std::invalid_argument("SystemParams.misalign_x outside [0,0.5]");
        if (!(misalign_z[i] >= 0.0 && misalign_z[i] <= 0.5)) throw std::invalid_argument("SystemParams.misalign_z outside [0,0.5]");
    }
}

double SystemParams::pair_dark_prob(UserPair p) const {
    return std::max(dark_prob[static_cast<std::size_t>(p.first)],
                    dark_prob[static_cast<std::size_t>(p.second)]);
}

double SystemParams::user_transmission(User u) const {
    const auto i = static_cast<std::size_t>(u);
    const double eta_c = db_to_linear(channel_loss_db[i]);
    if (u == User::Alice) return eta0 * t1 * eta_c * det_eff[i];
    // Bob and Charlie share the (1 - t1) arm through a 50/50 coupler.
    return eta0 * (1.0 - t1) * eta_c * det_eff[i] / 2.0;
}

void SystemParams::set_pair_loss(UserPair p, double loss_db) {
    for (User u : {p.first, p.second}) {
        if (u != User::Alice) channel_loss_db[static_cast<std::size_t>(u)] = loss_db;
    }
}

SystemParams SystemParams::current() { return SystemParams{}; }

SystemParams SystemParams::improved() {
    SystemParams p;
    p.eta0 = 0.5;
    p.lambda = 0.01;
    p.det_eff = {0.324, 0.324, 0.324};
    p.dark_prob = {1e-8, 1e-8, 1e-8};
    p.misalign_x = {0.01, 0.01, 0.01};
    p.misalign_z = {0.01, 0.01, 0.01};
    return p;
}

LinkBudget link_budget(const SystemParams& params, UserPair pair) {
    return {params.user_transmission(pair.first), params.user_transmission(pair.second)};
}

}  // namespace qdslab
