#include "qdslab/noise_model.hpp"

#include "qdslab/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qdslab {

namespace {

void check_inputs(LinkBudget b, double d0) {
    if (!(d0 >= 0.0 && d0 < 0.01)) throw std::domain_error("noise model: d0 must lie in [0, 0.01)");
    if (!(b.t_source >= 0.0 && b.t_source <= 0.5 && b.t_remote >= 0.0 && b.t_remote <= 0.5)) {
        throw std::domain_error("noise model: transmissions must lie in [0, 0.5]");
    }
}

void clamp(YieldError& y) {
    auto clip = [&](double& v, double lo, double hi) {
        if (v < lo || v > hi) {
            v = std::clamp(v, lo, hi);
            y.clamped = true;
        }
    };
    clip(y.yield, 0.0, 1.0);
    clip(y.error_z, 0.0, 0.5);
    clip(y.error_x, 0.0, 0.5);
}

// e_d(1 - e_d)
double flip_var(double e) { return e * (1.0 - e); }

// Dark-count coefficient shared by Y2, e2^Z and e40: photons reach only one
// side and a single dark count completes the coincidence.
double two_pair_dark_coeff(double ta, double tj) {
    const double l = 1.0 - ta - tj;
    return 4.0 * (ta + tj) * l * l * l + 3.0 * (ta * ta + tj * tj) * l * l +
           (ta * ta * ta + tj * tj * tj) * l + (std::pow(ta, 4) + std::pow(tj, 4)) / 8.0;
}

double two_pair_yield(double ta, double tj, double d0) {
    const double l = 1.0 - ta - tj;
    return 4.0 * std::pow(l, 4) * d0 * d0 + two_pair_dark_coeff(ta, tj) * d0 +
           1.5 * ta * tj * l * (2.0 - ta - tj) +
           ta * tj / 8.0 * (2.0 * ta * ta + 2.0 * tj * tj + 3.0 * ta * tj);
}

// H/V-basis two-pair error coefficient evaluated with misalignment e.
// The three-photon-at-one-side term carries 1 - e(1-e)(1-2e)^2: all three
// photons landing on one detector happens with probability e(1-e) and the
// bit is then wrong with (1-2e)^2-weighted odds.
double two_pair_error_hv(double ta, double tj, double d0, double e, double y2) {
    if (y2 <= 0.0) return 0.5;
    const double l = 1.0 - ta - tj;
    const double v = flip_var(e);
    const double num = 2.0 * std::pow(l, 4) * d0 * d0 + 0.5 * two_pair_dark_coeff(ta, tj) * d0 +
                       ta * tj / 8.0 * (ta * tj + 4.0 * l * (2.0 - ta - tj)) * (1.0 + 2.0 * v) +
                       (ta * std::pow(tj, 3) + tj * std::pow(ta, 3)) / 8.0 *
                           (1.0 - v * (1.0 - 2.0 * e) * (1.0 - 2.0 * e));
    return num / y2;
}

}  // namespace

YieldError yield_error_0(double d0) {
    check_inputs({}, d0);
    YieldError y{4.0 * d0 * d0, 0.5, 0.5, false};
    clamp(y);
    return y;
}

YieldError yield_error_1(LinkBudget b, double d0, double e_dz, double e_dx) {
    check_inputs(b, d0);
    const double ta = b.t_source;
    const double tj = b.t_remote;
    const double dark = (ta + tj - 0.75 * ta * ta - 0.75 * tj * tj) * d0 + 2.0 * d0 * d0;
    YieldError y;
    y.yield = ta * tj / 2.0 + 2.0 * dark;
    if (y.yield > 0.0) {
        y.error_z = (ta * tj * flip_var(e_dz) + dark) / y.yield;
        y.error_x = (ta * tj * flip_var(e_dx) + dark) / y.yield;
    }
    clamp(y);
    return y;
}

TwoPairXTerms two_pair_x_terms(LinkBudget b, double d0, double /*e_dz*/, double e_dx) {
    check_inputs(b, d0);
    const double ta = b.t_source;
    const double tj = b.t_remote;
    const double y2 = two_pair_yield(ta, tj, d0);
    if (y2 <= 0.0) return {0.5, 0.5};
    const double l = 1.0 - ta - tj;
    const double e = e_dx;
    const double num = 2.0 * std::pow(l, 4) * d0 * d0 + 0.5 * two_pair_dark_coeff(ta, tj) * d0 +
                       3.0 * ta * tj * flip_var(e) / 4.0 * (ta * tj + 4.0 * l * (2.0 - ta - tj)) +
                       (ta * std::pow(tj, 3) + tj * std::pow(ta, 3)) / 8.0 *
                           (1.0 - (1.0 - 2.0 * e) * (std::pow(1.0 - e, 3) - std::pow(e, 3)));
    // A correct pattern in H/V is an error in D/A; the misalignment here is
    // the D/A one.
    return {num / y2, 1.0 - two_pair_error_hv(ta, tj, d0, e_dx, y2)};
}

YieldError yield_error_2(LinkBudget b, double d0, double e_dz, double e_dx) {
    check_inputs(b, d0);
    const double ta = b.t_source;
    const double tj = b.t_remote;
    YieldError y;
    y.yield = two_pair_yield(ta, tj, d0);
    if (y.yield > 0.0) {
        y.error_z = two_pair_error_hv(ta, tj, d0, e_dz, y.yield);
        const auto x = two_pair_x_terms(b, d0, e_dz, e_dx);
        y.error_x = 0.5 * (x.e40 + x.e22);
    }
    clamp(y);
    return y;
}

YieldError yield_error_m(LinkBudget b, double d0, int m) {
    if (m < 3) throw std::domain_error("yield_error_m: m must be >= 3");
    check_inputs(b, d0);
    YieldError y;
    y.yield = 2.0 * m * (b.t_source + b.t_remote) * d0 + double(m) * m * b.t_source * b.t_remote;
    clamp(y);
    return y;
}

GainQber gain_qber(LinkBudget budget, double lambda, double d0, double e_dz, double e_dx, int n_max) {
    if (n_max < 5) throw std::domain_error("gain_qber: truncation n_max must be >= 5");
    const PairDistribution dist{lambda, n_max};
    dist.validate();

    double q = 0.0;
    double ez_q = 0.0;
    double ex_q = 0.0;
    bool clamped = false;
    for (int n = 0; n <= n_max; ++n) {
        YieldError y;
        switch (n) {
            case 0: y = yield_error_0(d0); break;
            case 1: y = yield_error_1(budget, d0, e_dz, e_dx); break;
            case 2: y = yield_error_2(budget, d0, e_dz, e_dx); break;
            default: y = yield_error_m(budget, d0, n); break;
        }
        const double w = dist.prob(n) * y.yield;
        q += w;
        ez_q += y.error_z * w;
        ex_q += y.error_x * w;
        clamped = clamped || y.clamped;
    }

    GainQber out;
    out.q_total = q;
    out.clamped = clamped;
    if (q > 0.0) {
        out.e_z = ez_q / q;
        out.e_x = ex_q / q;
    } else {
        out.e_z = out.e_x = 0.5;
    }
    out.e_avg = 0.5 * (out.e_x + out.e_z);
    return out;
}

GainQber gain_qber(const SystemParams& params, UserPair pair, int n_max) {
    params.validate();
    return gain_qber(link_budget(params, pair), params.lambda, params.pair_dark_prob(pair),
                     params.misalign_z_for(pair), params.misalign_x_for(pair), n_max);
}

}  // namespace qdslab
