#ifndef QDSLAB_NOISE_MODEL_HPP
#define QDSLAB_NOISE_MODEL_HPP

#include "qdslab/params.hpp"

namespace qdslab {

/// Yield of an n-pair emission and the QBER coefficient it carries in each
/// basis. Yields are per measurement basis (the Z and X yields coincide).
struct YieldError {
    double yield = 0.0;
    double error_z = 0.5;
    double error_x = 0.5;
    bool clamped = false;
};

/// Vacuum emission: only double dark counts survive, fully random.
YieldError yield_error_0(double d0);

/// Single pair. budget holds the two users' detection probabilities.
YieldError yield_error_1(LinkBudget budget, double d0, double e_dz, double e_dx);

/// Two distinguishable pairs, including the D/A-basis split into the
/// |2,0>|2,0> (e40) and |2,0>|0,2> (e22) terms.
YieldError yield_error_2(LinkBudget budget, double d0, double e_dz, double e_dx);

/// Pessimistic m >= 3 estimate: Y_m = 2m(T_A+T_j)D0 + m^2 T_A T_j, e_m = 1/2.
YieldError yield_error_m(LinkBudget budget, double d0, int m);

/// D/A-basis components of the two-pair error, exposed for inspection.
struct TwoPairXTerms {
    double e40 = 0.0;
    double e22 = 0.0;
};
TwoPairXTerms two_pair_x_terms(LinkBudget budget, double d0, double e_dz, double e_dx);

/// Gain and QBER of a user pair.
///
/// q_total is the per-basis gain sum_n P(n) Y_n; e_avg = (e_x + e_z)/2.
struct GainQber {
    double q_total = 0.0;
    double e_x = 0.0;
    double e_z = 0.0;
    double e_avg = 0.0;
    bool clamped = false;
};

inline constexpr int kDefaultTruncation = 8;

GainQber gain_qber(LinkBudget budget, double lambda, double d0, double e_dz, double e_dx,
                   int n_max = kDefaultTruncation);

/// Uses the pair's link budget, its misalignments and the larger of the two
/// users' dark-count probabilities.
GainQber gain_qber(const SystemParams& params, UserPair pair, int n_max = kDefaultTruncation);

}  // namespace qdslab

#endif
