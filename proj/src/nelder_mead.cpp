#include "qdslab/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace qdslab {

NelderMeadResult nelder_mead(const Objective1& f, const std::vector<double>& x0, const NelderMeadOptions& o) {
    if (x0.empty()) throw std::invalid_argument("nelder_mead: empty start point");
    if (!(o.reflection > 0.0 && o.expansion > 1.0 && o.contraction > 0.0 && o.contraction < 1.0 && o.shrink > 0.0 &&
          o.shrink < 1.0)) {
        throw std::invalid_argument("nelder_mead: invalid coefficients");
    }
    if (!(o.initial_step > 0.0) || o.max_iterations < 0) throw std::invalid_argument("nelder_mead: invalid options");

    const std::size_t n = x0.size();
    NelderMeadResult r;
    auto eval = [&](const std::vector<double>& x) {
        ++r.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> pts(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) {
        pts[i + 1][i] += x0[i] != 0.0 ? o.initial_step * x0[i] : o.initial_step;
    }
    std::vector<double> val(n + 1);
    for (std::size_t i = 0; i <= n; ++i) val[i] = eval(pts[i]);

    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n);
    auto along = [&](const std::vector<double>& from, double t) {
        // centroid + t * (centroid - from)
        std::vector<double> x(n);
        for (std::size_t k = 0; k < n; ++k) x[k] = centroid[k] + t * (centroid[k] - from[k]);
        return x;
    };

    for (;;) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[n - 1];

        double diameter = 0.0;
        double scale = 0.0;
        for (std::size_t k = 0; k < n; ++k) scale = std::max(scale, std::abs(pts[best][k]));
        for (std::size_t i = 0; i <= n; ++i) {
            for (std::size_t k = 0; k < n; ++k) diameter = std::max(diameter, std::abs(pts[i][k] - pts[best][k]));
        }
        if (diameter <= o.tolerance * std::max(scale, 1e-300) || (o.f_target && val[best] <= *o.f_target)) {
            r.converged = true;
            break;
        }
        if (r.iterations >= o.max_iterations) break;
        ++r.iterations;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == worst) continue;
            for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k] / double(n);
        }

        const auto xr = along(pts[worst], o.reflection);
        const double fr = eval(xr);
        if (fr < val[best]) {
            const auto xe = along(pts[worst], o.reflection * o.expansion);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                val[worst] = fe;
            } else {
                pts[worst] = xr;
                val[worst] = fr;
            }
            continue;
        }
        if (fr < val[second]) {
            pts[worst] = xr;
            val[worst] = fr;
            continue;
        }
        // Outside contraction when the reflection beat the worst point, inside otherwise.
        const bool outside = fr < val[worst];
        const auto xc = outside ? along(pts[worst], o.reflection * o.contraction) : along(pts[worst], -o.contraction);
        const double fc = eval(xc);
        if (fc < (outside ? fr : val[worst])) {
            pts[worst] = xc;
            val[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == best) continue;
            for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[best][k] + o.shrink * (pts[i][k] - pts[best][k]);
            val[i] = eval(pts[i]);
        }
    }

    const auto it = std::min_element(val.begin(), val.end());
    const auto idx = static_cast<std::size_t>(it - val.begin());
    r.x = pts[idx];
    r.value = *it;
    return r;
}

}  // namespace qdslab
