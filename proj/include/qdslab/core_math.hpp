#ifndef QDSLAB_CORE_MATH_HPP
#define QDSLAB_CORE_MATH_HPP

#include <stdexcept>
#include <string>

namespace qdslab {

/// Raised when the averaged QBER leaves no room between E and P_e.
class NoSecurityMargin : public std::runtime_error {
public:
    explicit NoSecurityMargin(const std::string& what)
        : std::runtime_error("no security margin: " + what) {}
};

/// H2(p) in bits, with 0*log2(0) = 0. Throws std::domain_error outside [0,1].
double binary_entropy(double p);

/// Unique E in (0, 0.5) with H2(E) = 0.5. Computed once by bisection.
double critical_qber();

/// Inverts H2(P_e) = 1 - H2(E) for P_e in (E, 0.5] by bisection (abs tol 1e-12).
/// Throws NoSecurityMargin when E >= critical_qber().
double solve_pe(double qber);

/// Photon-pair number statistics of a weakly pumped SPDC source.
/// lambda is half of the mean pair number per window.
struct PairDistribution {
    double lambda = 0.0;
    int n_max = 8;

    /// e^(-2 lambda) (2 lambda)^n / n!
    [[nodiscard]] double prob(int n) const;
    /// Probability mass above n_max.
    [[nodiscard]] double tail() const;
    void validate() const;
};

double pair_prob(double lambda, int n);

/// 10^(-dB/10).
double db_to_linear(double loss_db);

inline constexpr double kFiberLossDbPerKm = 0.2;

}  // namespace qdslab

#endif
