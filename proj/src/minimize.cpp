#include "qtomo/minimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace qtomo {

namespace {

constexpr int kMaxBracketSteps = 40;
constexpr int kMaxZoomSteps = 40;

struct Point {
    double alpha = 0.0;
    double f = 0.0;
    double slope = 0.0;  // directional derivative along p
    RealVector x;
    RealVector g;
};

struct LineSearchOutcome {
    bool ok = false;
    Point point;
};

class LineSearch {
public:
    LineSearch(const ObjectiveFn& f, const GradientFn& grad, const OptimizerConfig& cfg,
               OptimizationReport& report)
        : f_(f), grad_(grad), c1_(cfg.line_search_sufficient_decrease),
          c2_(cfg.line_search_curvature), report_(report) {}

    LineSearchOutcome run(const RealVector& x0, double f0, const RealVector& g0,
                          const RealVector& p, double alpha_init) {
        x0_ = &x0;
        p_ = &p;
        f0_ = f0;
        slope0_ = g0.dot(p);

        Point prev;
        prev.alpha = 0.0;
        prev.f = f0;
        prev.slope = slope0_;
        prev.x = x0;
        prev.g = g0;

        double alpha = alpha_init;
        for (int i = 0; i < kMaxBracketSteps; ++i) {
            Point cur = evaluate(alpha);
            if (!std::isfinite(cur.f) || cur.f > f0_ + c1_ * alpha * slope0_ ||
                (i > 0 && cur.f >= prev.f)) {
                if (!std::isfinite(cur.f)) {
                    // step overshot into a region where the objective blows up
                    alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
                    if (i + 1 < kMaxBracketSteps) {
                        continue;
                    }
                }
                return zoom(prev, cur);
            }
            if (std::abs(cur.slope) <= -c2_ * slope0_) {
                return {true, std::move(cur)};
            }
            if (cur.slope >= 0.0) {
                return zoom(cur, prev);
            }
            prev = std::move(cur);
            alpha *= 2.0;
        }
        return accept_if_decreased(prev);
    }

private:
    Point evaluate(double alpha) {
        Point pt;
        pt.alpha = alpha;
        pt.x = *x0_ + alpha * *p_;
        pt.f = f_(pt.x);
        ++report_.function_evaluations;
        if (std::isfinite(pt.f)) {
            pt.g = grad_(pt.x);
            ++report_.gradient_evaluations;
            pt.slope = pt.g.dot(*p_);
        } else {
            pt.slope = std::numeric_limits<double>::quiet_NaN();
        }
        return pt;
    }

    static double cubic_minimizer(const Point& a, const Point& b) {
        const double d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
        const double disc = d1 * d1 - a.slope * b.slope;
        if (!(disc >= 0.0) || !std::isfinite(disc)) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
        const double denom = b.slope - a.slope + 2.0 * d2;
        if (denom == 0.0) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        return b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / denom;
    }

    LineSearchOutcome zoom(Point lo, Point hi) {
        for (int j = 0; j < kMaxZoomSteps; ++j) {
            const double left = std::min(lo.alpha, hi.alpha);
            const double right = std::max(lo.alpha, hi.alpha);
            const double width = right - left;
            if (width <= 1e-16 * std::max(1.0, right)) {
                break;
            }
            double alpha = std::isfinite(hi.f) && std::isfinite(hi.slope)
                               ? cubic_minimizer(lo, hi)
                               : std::numeric_limits<double>::quiet_NaN();
            if (!std::isfinite(alpha) || alpha < left + 0.1 * width || alpha > right - 0.1 * width) {
                alpha = 0.5 * (left + right);
            }
            Point cur = evaluate(alpha);
            if (!std::isfinite(cur.f) || cur.f > f0_ + c1_ * alpha * slope0_ || cur.f >= lo.f) {
                hi = std::move(cur);
                continue;
            }
            if (std::abs(cur.slope) <= -c2_ * slope0_) {
                return {true, std::move(cur)};
            }
            if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) {
                hi = std::move(lo);
            }
            lo = std::move(cur);
        }
        return accept_if_decreased(lo);
    }

    // Curvature could not be met but `pt` still satisfies sufficient decrease:
    // take the step rather than stall.
    LineSearchOutcome accept_if_decreased(Point& pt) const {
        if (pt.alpha > 0.0 && std::isfinite(pt.f) && pt.f < f0_ &&
            pt.f <= f0_ + c1_ * pt.alpha * slope0_) {
            return {true, std::move(pt)};
        }
        return {false, {}};
    }

    const ObjectiveFn& f_;
    const GradientFn& grad_;
    double c1_;
    double c2_;
    OptimizationReport& report_;

    const RealVector* x0_ = nullptr;
    const RealVector* p_ = nullptr;
    double f0_ = 0.0;
    double slope0_ = 0.0;
};

}  // namespace

void OptimizerConfig::validate() const {
    if (!(gradient_norm_tolerance > 0.0) || !(relative_decrease_tolerance > 0.0)) {
        throw std::invalid_argument("optimizer: tolerances must be positive");
    }
    if (max_iterations && *max_iterations < 1) {
        throw std::invalid_argument("optimizer: max_iterations must be >= 1");
    }
    if (!(line_search_sufficient_decrease > 0.0 && line_search_sufficient_decrease < 1.0) ||
        !(line_search_curvature > 0.0 && line_search_curvature < 1.0) ||
        !(line_search_curvature > line_search_sufficient_decrease)) {
        throw std::invalid_argument(
            "optimizer: need 0 < sufficient_decrease < curvature < 1 for the line search");
    }
    if (!(initial_step > 0.0)) {
        throw std::invalid_argument("optimizer: initial_step must be positive");
    }
}

std::string to_string(TerminationReason reason) {
    switch (reason) {
        case TerminationReason::GradientConverged: return "gradient-converged";
        case TerminationReason::DecreaseConverged: return "decrease-converged";
        case TerminationReason::IterationCap: return "iteration-cap";
        case TerminationReason::LineSearchFailure: return "line-search-failure";
    }
    return "unknown";
}

std::string OptimizationReport::to_json() const {
    nlohmann::json j;
    j["qubits"] = final_params.qubits;
    j["final_params"] = std::vector<double>(final_params.t.data(),
                                            final_params.t.data() + final_params.t.size());
    j["final_objective"] = final_objective;
    j["iterations"] = iterations;
    j["gradient_norm"] = gradient_norm;
    j["termination_reason"] = to_string(termination_reason);
    j["function_evaluations"] = function_evaluations;
    j["gradient_evaluations"] = gradient_evaluations;
    j["restarts"] = restarts;
    j["line_search_ms"] = line_search_ms;
    return j.dump(2);
}

OptimizationReport minimize(const ObjectiveFn& objective, const GradientFn& gradient,
                            const CholeskyParams& start, const OptimizerConfig& config) {
    config.validate();
    const Eigen::Index m = start.t.size();
    const int max_iter = config.max_iterations.value_or(static_cast<int>(
        std::min<long long>(200LL * m, std::numeric_limits<int>::max())));

    OptimizationReport report;
    report.final_params = start;

    RealVector x = start.t;
    double f = objective(x);
    ++report.function_evaluations;
    if (!std::isfinite(f)) {
        throw std::invalid_argument("minimize: objective is not finite at the start point");
    }
    RealVector g = gradient(x);
    ++report.gradient_evaluations;
    report.objective_trace.push_back(f);

    RealMatrix H = RealMatrix::Identity(m, m);
    bool unscaled = true;   // H still the unscaled identity
    bool just_reset = false;
    LineSearch search(objective, gradient, config, report);

    while (true) {
        const double gnorm = g.norm();
        report.gradient_norm = gnorm;
        if (gnorm <= config.gradient_norm_tolerance) {
            report.termination_reason = TerminationReason::GradientConverged;
            break;
        }
        if (report.iterations >= max_iter) {
            report.termination_reason = TerminationReason::IterationCap;
            break;
        }

        RealVector p = -(H * g);
        if (!(g.dot(p) < 0.0)) {
            H.setIdentity();
            unscaled = true;
            p = -g;
        }
        const double alpha0 =
            unscaled ? config.initial_step * std::min(1.0, 1.0 / p.norm()) : config.initial_step;

        const auto t0 = std::chrono::steady_clock::now();
        LineSearchOutcome ls = search.run(x, f, g, p, alpha0);
        report.line_search_ms +=
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        if (!ls.ok) {
            if (just_reset) {
                report.termination_reason = TerminationReason::LineSearchFailure;
                break;
            }
            H.setIdentity();
            unscaled = true;
            just_reset = true;
            ++report.restarts;
            continue;
        }
        just_reset = false;

        const RealVector s = ls.point.x - x;
        const RealVector y = ls.point.g - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
            if (unscaled) {
                H *= sy / y.squaredNorm();
                unscaled = false;
            }
            const double rho = 1.0 / sy;
            const RealVector Hy = H * y;
            const double yHy = y.dot(Hy);
            H.noalias() -= rho * (Hy * s.transpose() + s * Hy.transpose());
            H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose());
        }

        const double decrease = f - ls.point.f;
        const double f_prev = f;
        x = std::move(ls.point.x);
        f = ls.point.f;
        g = std::move(ls.point.g);
        ++report.iterations;
        report.objective_trace.push_back(f);

        if (decrease <= config.relative_decrease_tolerance * std::abs(f_prev)) {
            report.gradient_norm = g.norm();
            report.termination_reason = report.gradient_norm <= config.gradient_norm_tolerance
                                            ? TerminationReason::GradientConverged
                                            : TerminationReason::DecreaseConverged;
            break;
        }
    }

    report.final_params = CholeskyParams(start.qubits, x);
    report.final_objective = f;
    return report;
}

}  // namespace qtomo
