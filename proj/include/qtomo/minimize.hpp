#pragma once

// Quasi-Newton (BFGS) minimizer with a strong-Wolfe line search.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qtomo/state_model.hpp"

namespace qtomo {

struct OptimizerConfig {
    double gradient_norm_tolerance = 1e-6;
    double relative_decrease_tolerance = 1e-10;
    /// Defaults to 200 * (number of parameters) = 200 * 4^n when unset.
    std::optional<int> max_iterations;
    double line_search_sufficient_decrease = 1e-4;
    double line_search_curvature = 0.9;
    double initial_step = 1.0;

    /// Throws std::invalid_argument unless tolerances are positive and
    /// 0 < sufficient_decrease < curvature < 1.
    void validate() const;
};

enum class TerminationReason {
    GradientConverged,
    DecreaseConverged,
    IterationCap,
    LineSearchFailure,
};

std::string to_string(TerminationReason reason);

struct OptimizationReport {
    CholeskyParams final_params;
    double final_objective = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
    TerminationReason termination_reason = TerminationReason::IterationCap;

    int function_evaluations = 0;
    int gradient_evaluations = 0;
    int restarts = 0;
    double line_search_ms = 0.0;          // total wall time spent in line searches
    std::vector<double> objective_trace;  // objective after each accepted iterate

    /// Single-object JSON text with the fields above (trace omitted).
    std::string to_json() const;
};

using ObjectiveFn = std::function<double(const RealVector&)>;
using GradientFn = std::function<RealVector(const RealVector&)>;

/// Minimizes `objective` over the parameter vector of `start`. Accepted
/// iterates never increase the objective. A failed line search triggers one
/// restart with the inverse-Hessian approximation reset; a second consecutive
/// failure ends the run with the best iterate.
OptimizationReport minimize(const ObjectiveFn& objective, const GradientFn& gradient,
                            const CholeskyParams& start, const OptimizerConfig& config = {});

}  // namespace qtomo
