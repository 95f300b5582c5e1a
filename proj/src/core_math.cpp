#include "qdslab/core_math.hpp"

#include <cmath>
#include <sstream>

namespace qdslab {

namespace {

constexpr double kBisectTol = 1e-12;

template <typename F>
double bisect(F&& f, double lo, double hi) {
    // f(lo) and f(hi) must bracket a sign change.
    double flo = f(lo);
    while (hi - lo > kBisectTol) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

double binary_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        std::ostringstream msg;
        msg << "binary_entropy: p=" << p << " outside [0,1]";
        throw std::domain_error(msg.str());
    }
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double critical_qber() {
    static const double e_crit =
        bisect([](double e) { return binary_entropy(e) - 0.5; }, 1e-9, 0.5);
    return e_crit;
}

double solve_pe(double qber) {
    if (!(qber >= 0.0 && qber <= 1.0)) {
        throw std::domain_error("solve_pe: qber outside [0,1]");
    }
    if (qber >= critical_qber()) {
        std::ostringstream msg;
        msg << "E=" << qber << " >= E_crit=" << critical_qber();
        throw NoSecurityMargin(msg.str());
    }
    const double target = 1.0 - binary_entropy(qber);
    if (target >= 1.0) return 0.5;
    // H2 is increasing on [E, 0.5] and H2(E) < target <= 1 = H2(0.5).
    return bisect([target](double p) { return binary_entropy(p) - target; }, qber, 0.5);
}

double pair_prob(double lambda, int n) {
    if (n < 0) throw std::domain_error("pair_prob: n < 0");
    if (lambda < 0.0) throw std::domain_error("pair_prob: lambda < 0");
    const double mu = 2.0 * lambda;
    if (mu == 0.0) return n == 0 ? 1.0 : 0.0;
    return std::exp(-mu + n * std::log(mu) - std::lgamma(n + 1.0));
}

void PairDistribution::validate() const {
    if (!(lambda >= 0.0)) throw std::domain_error("PairDistribution: lambda < 0");
    if (n_max < 2) throw std::domain_error("PairDistribution: n_max < 2");
}

double PairDistribution::prob(int n) const { return pair_prob(lambda, n); }

double PairDistribution::tail() const {
    // Sum the remaining Poisson terms directly; they fall off as (2 lambda)^n / n!.
    double sum = 0.0;
    for (int n = n_max + 1; n < n_max + 200; ++n) {
        const double p = prob(n);
        sum += p;
        if (p < 1e-300 || (n > 4.0 * lambda + 10 && p < 1e-18 * sum)) break;
    }
    return sum;
}

double db_to_linear(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

}  // namespace qdslab
