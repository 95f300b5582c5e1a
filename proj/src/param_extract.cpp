#include "qdslab/param_extract.hpp"

#include "qdslab/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

namespace qdslab {

void CountTriple::validate() const {
    if (!(s_a >= 0.0 && s_b >= 0.0 && c_ab >= 0.0)) throw std::invalid_argument("CountTriple: counts must be >= 0");
    if (c_ab > std::min(s_a, s_b)) throw std::invalid_argument("CountTriple: coincidences exceed singles");
    if (!(rep_rate_hz > 0.0 && tau_s > 0.0)) throw std::invalid_argument("CountTriple: rate and time must be > 0");
}

CountTriple model_counts(double lambda, double t_a, double t_b, double d0, double rep_rate_hz, double tau_s) {
    const double rt = rep_rate_hz * tau_s;
    const double a = std::exp(-2.0 * lambda * t_a);
    const double b = std::exp(-2.0 * lambda * t_b);
    // (1-T_A)^n (1-T_B)^n averaged over the pair number.
    const double ab = std::exp(-2.0 * lambda * (t_a + t_b - t_a * t_b));
    const double m = d0 - 1.0;
    // 1 + m x is the click probability given survival factor x; expanding the
    // coincidence product keeps it non-negative only up to rounding.
    return {rt * (1.0 + a * m), rt * (1.0 + b * m), std::max(0.0, rt * (1.0 + m * (a + b) + m * m * ab)), rep_rate_hz,
            tau_s};
}

CountTriple first_order_counts(double lambda, double t_a, double t_b, double rep_rate_hz, double tau_s) {
    const double rt = rep_rate_hz * tau_s;
    return {rt * 2.0 * lambda * t_a, rt * 2.0 * lambda * t_b, rt * 2.0 * lambda * t_a * t_b, rep_rate_hz, tau_s};
}

InitialGuess initial_guess(const CountTriple& counts) {
    counts.validate();
    if (!(counts.c_ab > 0.0)) throw InsufficientStatistics("insufficient statistics: no coincidences");
    return {counts.s_a * counts.s_b / (counts.windows() * counts.c_ab), counts.c_ab / counts.s_b,
            counts.c_ab / counts.s_a};
}

namespace {

CountTriple predict(const CountTriple& measured, double lambda, double t_a, double t_b, double d0, CountModel model) {
    return model == CountModel::exact ? model_counts(lambda, t_a, t_b, d0, measured.rep_rate_hz, measured.tau_s)
                                      : first_order_counts(lambda, t_a, t_b, measured.rep_rate_hz, measured.tau_s);
}

double term(double model, double data, Residuals r) {
    const double d = model - data;
    if (r == Residuals::absolute) return d * d;
    return data > 0.0 ? (d / data) * (d / data) : d * d;
}

}  // namespace

double objective(const CountTriple& measured, double lambda, double t_a, double t_b, double d0,
                 const FitOptions& options) {
    const CountTriple m = predict(measured, lambda, t_a, t_b, d0, options.model);
    return term(m.s_a, measured.s_a, options.residuals) + term(m.s_b, measured.s_b, options.residuals) +
           term(m.c_ab, measured.c_ab, options.residuals);
}

ExtractionResult fit_params(const CountTriple& counts, double d0, const FitOptions& options) {
    if (!(d0 >= 0.0 && d0 < 1.0)) throw std::invalid_argument("fit_params: d0 must be in [0, 1)");
    const InitialGuess g = initial_guess(counts);
    const std::array<double, 4> unit{g.lambda0 / 2.0, std::min(g.t_a0, 1.0), std::min(g.t_b0, 1.0),
                                     d0 > 0.0 ? d0 : 1e-7};

    auto unpack = [&](const std::vector<double>& x) {
        return std::array<double, 4>{x[0] * unit[0], x[1] * unit[1], x[2] * unit[2],
                                     options.fit_d0 ? x[3] * unit[3] : d0};
    };
    auto f = [&](const std::vector<double>& x) {
        const auto p = unpack(x);
        double violation = std::max(0.0, -p[0]) + std::max(0.0, -p[1]) + std::max(0.0, p[1] - 1.0) +
                           std::max(0.0, -p[2]) + std::max(0.0, p[2] - 1.0) + std::max(0.0, -p[3]) +
                           std::max(0.0, p[3] - 1.0);
        if (violation > 0.0 || p[0] == 0.0 || p[1] == 0.0 || p[2] == 0.0) return 1e300 * (1.0 + violation);
        return objective(counts, p[0], p[1], p[2], p[3], options);
    };

    std::vector<double> x0(options.fit_d0 ? 4 : 3, 1.0);
    ExtractionResult r;
    r.initial_residual = f(x0);
    // An exact fit is done: otherwise the simplex keeps shrinking around a
    // zero residual until its diameter passes the tolerance.
    NelderMeadOptions nm_options = options.simplex;
    if (!nm_options.f_target) {
        const double scale = options.residuals == Residuals::relative
                                 ? 1.0
                                 : counts.s_a * counts.s_a + counts.s_b * counts.s_b + counts.c_ab * counts.c_ab;
        nm_options.f_target = 1e-28 * scale;
    }
    const NelderMeadResult nm = nelder_mead(f, x0, nm_options);
    const auto p = unpack(nm.x);
    r.lambda = p[0];
    r.t_a = p[1];
    r.t_b = p[2];
    r.d0 = p[3];
    r.residual = nm.value;
    r.iterations = nm.iterations;
    r.converged = nm.converged;
    return r;
}

std::array<std::array<double, 3>, 3> propagated_covariance(const CountTriple& counts, double lambda, double t_a,
                                                           double t_b, double d0) {
    const double rt = counts.windows();
    const double m = d0 - 1.0;
    const double a = std::exp(-2.0 * lambda * t_a);
    const double b = std::exp(-2.0 * lambda * t_b);
    const double u = t_a + t_b - t_a * t_b;
    const double ab = std::exp(-2.0 * lambda * u);

    Eigen::Matrix3d j;  // rows S_A, S_B, C; columns lambda, T_A, T_B
    j << -2.0 * rt * m * t_a * a, -2.0 * rt * m * lambda * a, 0.0,
        -2.0 * rt * m * t_b * b, 0.0, -2.0 * rt * m * lambda * b,
        -2.0 * rt * (m * (t_a * a + t_b * b) + m * m * u * ab),
        -2.0 * rt * lambda * (m * a + m * m * (1.0 - t_b) * ab),
        -2.0 * rt * lambda * (m * b + m * m * (1.0 - t_a) * ab);

    Eigen::Matrix3d sigma;
    const double c = counts.c_ab;
    sigma << counts.s_a, c, c, c, counts.s_b, c, c, c, c;

    const Eigen::Matrix3d inv = j.inverse();
    const Eigen::Matrix3d cov = inv * sigma * inv.transpose();
    std::array<std::array<double, 3>, 3> out{};
    for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) out[std::size_t(r)][std::size_t(k)] = cov(r, k);
    }
    return out;
}

CountTriple poisson_counts(const CountTriple& expected, std::uint64_t seed) {
    expected.validate();
    auto rng = make_rng(seed, 0xc07u);
    auto draw = [&](double mean) {
        if (!(mean > 0.0)) return 0.0;
        return double(std::poisson_distribution<long long>(mean)(rng));
    };
    const double both = draw(expected.c_ab);
    const double a_only = draw(expected.s_a - expected.c_ab);
    const double b_only = draw(expected.s_b - expected.c_ab);
    return {both + a_only, both + b_only, both, expected.rep_rate_hz, expected.tau_s};
}

double eta0_from_calibration(double t_total, double downstream_eff) {
    if (!(downstream_eff > 0.0 && downstream_eff <= 1.0)) {
        throw std::invalid_argument("eta0_from_calibration: downstream efficiency must be in (0, 1]");
    }
    if (!(t_total >= 0.0)) throw std::invalid_argument("eta0_from_calibration: transmission must be >= 0");
    const double eta0 = t_total / downstream_eff;
    if (eta0 > 1.0) throw std::domain_error("eta0_from_calibration: source transmission above 1");
    return eta0;
}

double mean_lambda(std::span<const ExtractionResult> fits) {
    if (fits.empty()) throw std::invalid_argument("mean_lambda: no fits");
    double s = 0.0;
    for (const auto& f : fits) s += f.lambda;
    return s / double(fits.size());
}

nlohmann::json extraction_json(const CountTriple& counts, const ExtractionResult& r) {
    const auto cov = propagated_covariance(counts, r.lambda, r.t_a, r.t_b, r.d0);
    return {{"counts",
             {{"s_a", counts.s_a}, {"s_b", counts.s_b}, {"c_ab", counts.c_ab}, {"rep_rate_hz", counts.rep_rate_hz},
              {"tau_s", counts.tau_s}}},
            {"lambda", r.lambda},
            {"t_a", r.t_a},
            {"t_b", r.t_b},
            {"d0", r.d0},
            {"residual", r.residual},
            {"initial_residual", r.initial_residual},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"std_error",
             {{"lambda", std::sqrt(std::max(0.0, cov[0][0]))},
              {"t_a", std::sqrt(std::max(0.0, cov[1][1]))},
              {"t_b", std::sqrt(std::max(0.0, cov[2][2]))}}}};
}

}  // namespace qdslab
