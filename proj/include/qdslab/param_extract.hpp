#ifndef QDSLAB_PARAM_EXTRACT_HPP
#define QDSLAB_PARAM_EXTRACT_HPP

#include "qdslab/nelder_mead.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "json.hpp"

namespace qdslab {

/// Singles and coincidence counts of two detectors over a counting time.
struct CountTriple {
    double s_a = 0.0;
    double s_b = 0.0;
    double c_ab = 0.0;
    double rep_rate_hz = 5e8;
    double tau_s = 1.0;

    [[nodiscard]] double windows() const { return rep_rate_hz * tau_s; }
    /// Throws std::invalid_argument on negative counts, c_ab > min(s_a, s_b)
    /// or non-positive rate and time.
    void validate() const;
};

/// Expected counts of the distinguishable-pair source model (Poisson pair
/// number with mean 2 lambda, threshold detectors with dark probability d0).
CountTriple model_counts(double lambda, double t_a, double t_b, double d0, double rep_rate_hz, double tau_s);

/// Lowest-order counts without noise: S = R tau 2 lambda T, C = R tau 2 lambda T_A T_B.
CountTriple first_order_counts(double lambda, double t_a, double t_b, double rep_rate_hz, double tau_s);

class InsufficientStatistics : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// First-order inversion. lambda0 estimates the mean pair number 2 lambda of
/// the model, so a fit starts from lambda0 / 2.
struct InitialGuess {
    double lambda0 = 0.0;
    double t_a0 = 0.0;
    double t_b0 = 0.0;
};

/// Throws InsufficientStatistics when there are no coincidences.
InitialGuess initial_guess(const CountTriple& counts);

enum class CountModel { exact, first_order };
enum class Residuals { absolute, relative };

struct FitOptions {
    CountModel model = CountModel::exact;
    Residuals residuals = Residuals::absolute;
    bool fit_d0 = false;  // fit the dark probability as a fourth parameter, starting from the given value
    NelderMeadOptions simplex{};
};

/// F = sum of squared (absolute or relative) differences of S_A, S_B, C_AB.
double objective(const CountTriple& measured, double lambda, double t_a, double t_b, double d0,
                 const FitOptions& options = {});

struct ExtractionResult {
    double lambda = 0.0;
    double t_a = 0.0;
    double t_b = 0.0;
    double d0 = 0.0;
    double residual = 0.0;
    double initial_residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Nelder-Mead over (lambda, T_A, T_B) in units of the initial guess, with
/// T kept in (0, 1] and lambda > 0 by a penalty.
ExtractionResult fit_params(const CountTriple& counts, double d0, const FitOptions& options = {});

/// Covariance of (lambda, T_A, T_B) propagated from Poisson counts: Var S = S,
/// and every covariance between S_A, S_B and C equals C (shared pair events).
std::array<std::array<double, 3>, 3> propagated_covariance(const CountTriple& counts, double lambda, double t_a,
                                                           double t_b, double d0);

/// Poisson draw of the three counts with the correlation of real detection
/// records: both-click, A-only and B-only windows are sampled separately.
CountTriple poisson_counts(const CountTriple& expected, std::uint64_t seed);

/// Source-internal transmission from a fitted arm transmission.
/// Throws std::domain_error when the result exceeds 1.
double eta0_from_calibration(double t_total, double downstream_eff);

/// Mean of the fitted lambdas (per pair and basis in practice).
double mean_lambda(std::span<const ExtractionResult> fits);

nlohmann::json extraction_json(const CountTriple& counts, const ExtractionResult& result);

}  // namespace qdslab

#endif
