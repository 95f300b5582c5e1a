#ifndef QDSLAB_SECURITY_HPP
#define QDSLAB_SECURITY_HPP

#include "qdslab/noise_model.hpp"
#include "qdslab/params.hpp"

#include <cstdint>

namespace qdslab {

/// Mismatch-fraction acceptance thresholds: s_a for direct verification,
/// s_v for forwarded verification.
struct Thresholds {
    double s_a = 0.0;
    double s_v = 0.0;
};

/// s_a = E + (P_e - E)/4, s_v = E + 3(P_e - E)/4. Throws std::domain_error if E >= P_e.
Thresholds thresholds(double qber, double p_e);

/// Upper bounds on honest abort, repudiation and forging probabilities.
struct FailureBounds {
    double abort = 2.0;
    double repudiation = 2.0;
    double forge = 2.0;

    [[nodiscard]] double max() const;
};

FailureBounds failure_bounds(double qber, Thresholds t, double p_e, double length);

/// Smallest even raw-key length L for which all three bounds are <= epsilon
/// under the thresholds above. Throws NoSecurityMargin if E >= E_crit.
std::uint64_t required_length(double qber, double epsilon);

struct SecurityBudget {
    double qber_e = 0.0;
    double p_e = 0.5;
    double s_a = 0.0;
    double s_v = 0.0;
    std::uint64_t raw_len = 0;
    double sig_rate = 0.0;
    double epsilon = 0.0;
    FailureBounds bounds;
};

/// Everything but sig_rate, which needs the gain.
SecurityBudget security_budget(double qber, double epsilon);

struct SignatureRate {
    double rate = 0.0;  // signatures per second
    bool aborted = false;
    GainQber gain;
    SecurityBudget budget;  // meaningful only when !aborted
};

/// R = v Q / L for the pair's averaged QBER. No margin -> rate 0, aborted.
SignatureRate signature_rate(const SystemParams& params, UserPair pair);

/// Q (1 - f H2(E_Z) - H2(E_X)). Informational only.
double key_rate_check(double e_x, double e_z, double f_ec, double gain);

}  // namespace qdslab

#endif
