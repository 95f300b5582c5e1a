#ifndef QDSLAB_NELDER_MEAD_HPP
#define QDSLAB_NELDER_MEAD_HPP

#include <functional>
#include <optional>
#include <vector>

namespace qdslab {

struct NelderMeadOptions {
    double reflection = 1.0;
    double expansion = 2.0;
    double contraction = 0.5;
    double shrink = 0.5;
    double initial_step = 0.05;  // relative to each coordinate; absolute for zero coordinates
    double tolerance = 1e-9;     // simplex diameter relative to the best vertex
    int max_iterations = 10000;
    std::optional<double> f_target;  // stop as soon as the best value reaches it
};

struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

using Objective1 = std::function<double(const std::vector<double>&)>;

/// Derivative-free simplex minimization. Non-finite objective values are
/// treated as +infinity.
NelderMeadResult nelder_mead(const Objective1& f, const std::vector<double>& x0, const NelderMeadOptions& options = {});

}  // namespace qdslab

#endif
