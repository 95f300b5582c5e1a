#include "qdslab/security.hpp"

#include "qdslab/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qdslab {

Thresholds thresholds(double qber, double p_e) {
    if (!(qber < p_e)) throw std::domain_error("thresholds: need E < P_e");
    const double gap = p_e - qber;
    return {qber + gap / 4.0, qber + 3.0 * gap / 4.0};
}

double FailureBounds::max() const { return std::max({abort, repudiation, forge}); }

FailureBounds failure_bounds(double qber, Thresholds t, double p_e, double length) {
    if (!(qber < t.s_a && t.s_a < t.s_v && t.s_v < p_e)) {
        throw std::domain_error("failure_bounds: need E < s_a < s_v < P_e");
    }
    if (length < 0.0) throw std::domain_error("failure_bounds: negative length");
    auto bound = [length](double gap) { return 2.0 * std::exp(-gap * gap * length); };
    return {bound(t.s_a - qber), bound((t.s_a - t.s_v) / 2.0), bound(p_e - t.s_a)};
}

std::uint64_t required_length(double qber, double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::domain_error("required_length: epsilon outside (0,1)");
    const double p_e = solve_pe(qber);
    const Thresholds t = thresholds(qber, p_e);
    const double gap = p_e - qber;
    const double closed = 16.0 * std::log(2.0 / epsilon) / (gap * gap);
    if (!std::isfinite(closed) || closed > 1e18) throw NoSecurityMargin("required length overflows");

    auto ok = [&](std::uint64_t len) { return failure_bounds(qber, t, p_e, double(len)).max() <= epsilon; };
    auto len = static_cast<std::uint64_t>(std::ceil(closed));
    len += len % 2;
    // Guard against rounding in the closed form.
    while (!ok(len)) len += 2;
    while (len >= 2 && ok(len - 2)) len -= 2;
    return len;
}

SecurityBudget security_budget(double qber, double epsilon) {
    SecurityBudget b;
    b.qber_e = qber;
    b.epsilon = epsilon;
    b.p_e = solve_pe(qber);
    const Thresholds t = thresholds(qber, b.p_e);
    b.s_a = t.s_a;
    b.s_v = t.s_v;
    b.raw_len = required_length(qber, epsilon);
    b.bounds = failure_bounds(qber, t, b.p_e, double(b.raw_len));
    return b;
}

SignatureRate signature_rate(const SystemParams& params, UserPair pair) {
    SignatureRate out;
    out.gain = gain_qber(params, pair);
    if (out.gain.q_total <= 0.0) {
        out.aborted = out.gain.e_avg >= critical_qber();
        return out;
    }
    try {
        out.budget = security_budget(out.gain.e_avg, params.epsilon);
    } catch (const NoSecurityMargin&) {
        out.aborted = true;
        return out;
    }
    out.rate = params.rep_rate_hz * out.gain.q_total / double(out.budget.raw_len);
    out.budget.sig_rate = out.rate;
    return out;
}

double key_rate_check(double e_x, double e_z, double f_ec, double gain) {
    return gain * (1.0 - f_ec * binary_entropy(e_z) - binary_entropy(e_x));
}

}  // namespace qdslab
