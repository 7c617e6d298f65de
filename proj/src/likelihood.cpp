#include "qtomo/likelihood.hpp"

#include <algorithm>
#include <sstream>

namespace qtomo {

namespace {

// <P, Q> = sum_ij P(i,j) Q(i,j)
double frobenius_dot(const RealMatrix& p, const RealMatrix& q) { return p.cwiseProduct(q).sum(); }

void check_params(const CholeskyParams& t, const LikelihoodContext& ctx) {
    if (t.qubits != ctx.qubits() || static_cast<std::uint64_t>(t.t.size()) != ctx.projector_count()) {
        std::ostringstream os;
        os << "likelihood: parameters describe " << t.qubits << " qubits, record has "
           << ctx.qubits();
        throw std::invalid_argument(os.str());
    }
    if (!(t.t.squaredNorm() > 0.0)) {
        throw std::invalid_argument("likelihood: parameter vector is identically zero");
    }
}

// Calls fn(nu, K_nu, Lambda_nu) for every projector.
template <class Fn>
void for_each_projector(const LikelihoodContext& ctx, Fn&& fn) {
    const std::uint64_t count = ctx.projector_count();
    if (ctx.parts_cached()) {
        for (std::uint64_t nu = 0; nu < count; ++nu) {
            fn(nu, ctx.real_part(nu), ctx.imag_part(nu));
        }
    } else {
        for (std::uint64_t nu = 0; nu < count; ++nu) {
            const auto [k, l] = ctx.projector_parts(nu);
            fn(nu, k, l);
        }
    }
}

}  // namespace

LikelihoodContext::LikelihoodContext(MeasurementRecord record, ProjectorBasis basis,
                                     MemoryBudget budget)
    : record_(std::move(record)), basis_(std::move(basis)) {
    record_.validate();
    basis_.validate();
    const int n = record_.qubits;
    const std::uint64_t count = pow4(n);
    const std::uint64_t dim = pow2(n);

    denominators_.resize(static_cast<std::size_t>(count));
    for (std::uint64_t nu = 0; nu < count; ++nu) {
        denominators_[nu] = std::max(record_.counts[nu], 1.0);
    }

    const std::size_t per_matrix = static_cast<std::size_t>(dim * dim * sizeof(double));
    const bool fits = count <= budget.bytes / (2 * per_matrix);
    // deepest prefix cache that fits the budget
    int depth = std::min(n, 5);
    while (depth > 1 && pow4(depth) * MemoryBudget::complex_matrix_bytes(pow2(depth), pow2(depth)) > budget.bytes) {
        --depth;
    }
    cache_ = std::make_unique<ProjectorCache>(basis_, n, depth, budget);
    if (fits) {
        real_parts_.reserve(static_cast<std::size_t>(count));
        imag_parts_.reserve(static_cast<std::size_t>(count));
        for (std::uint64_t nu = 0; nu < count; ++nu) {
            const ComplexMatrix p = cache_->projector(nu);
            real_parts_.push_back(p.real());
            imag_parts_.push_back(p.imag());
        }
        cache_.reset();
    }
}

std::pair<RealMatrix, RealMatrix> LikelihoodContext::projector_parts(std::uint64_t nu) const {
    if (nu >= projector_count()) {
        throw std::out_of_range("LikelihoodContext: projector index out of range");
    }
    if (parts_cached()) {
        return {real_parts_[nu], imag_parts_[nu]};
    }
    const ComplexMatrix p = cache_->projector(nu);
    return {p.real(), p.imag()};
}

double likelihood(const CholeskyParams& t, const LikelihoodContext& ctx, OperationCount* ops) {
    check_params(t, ctx);
    const double shots = ctx.record().shots;
    const double a = t.t.squaredNorm();
    const ComplexMatrix T = cholesky_factor(t);
    const ComplexMatrix phi = T.adjoint() * T;
    const RealMatrix phi_re = phi.real();
    const RealMatrix phi_im = phi.imag();

    double total = 0.0;
    for_each_projector(ctx, [&](std::uint64_t nu, const RealMatrix& k, const RealMatrix& l) {
        // Re Tr{Pi Phi} = <K, Re Phi> + <Lambda, Im Phi> for Hermitian Pi, Phi
        const double b = frobenius_dot(k, phi_re) + frobenius_dot(l, phi_im);
        const double residual = shots * b / a - ctx.record().counts[nu];
        total += residual * residual / ctx.denominator(nu);
    });

    if (ops) {
        const auto d = static_cast<std::uint64_t>(T.rows());
        ops->multiply_adds += d * d * d + ctx.projector_count() * 2 * d * d;
        ++ops->likelihood_calls;
    }
    return 0.5 * total;
}

ComplexMatrix likelihood_gradient_matrix(const CholeskyParams& t, const LikelihoodContext& ctx,
                                         OperationCount* ops) {
    check_params(t, ctx);
    const double shots = ctx.record().shots;
    const double a = t.t.squaredNorm();
    const ComplexMatrix T = cholesky_factor(t);
    const RealMatrix X = T.real();
    const RealMatrix Y = T.imag();
    const ComplexMatrix phi = T.adjoint() * T;
    const RealMatrix phi_re = phi.real();
    const RealMatrix phi_im = phi.imag();
    const Eigen::Index d = T.rows();

    // B'_nu is linear in (K_nu, Lambda_nu), so sum_nu C_nu B'_nu only needs the
    // C-weighted sums of K and Lambda.
    RealMatrix k_sum = RealMatrix::Zero(d, d);
    RealMatrix l_sum = RealMatrix::Zero(d, d);
    double cb_sum = 0.0;
    for_each_projector(ctx, [&](std::uint64_t nu, const RealMatrix& k, const RealMatrix& l) {
        const double b = frobenius_dot(k, phi_re) + frobenius_dot(l, phi_im);
        const double n_nu = ctx.denominator(nu);
        // The guarded denominator replaces n_nu only where it divides.
        const double c = (shots * b - a * ctx.record().counts[nu]) / (a * n_nu);
        k_sum += c * k;
        l_sum += c * l;
        cb_sum += c * b;
    });

    // A sum C B' - (sum C B) A'
    const RealMatrix re = a * (2.0 * X * k_sum - 2.0 * Y * l_sum) - cb_sum * 2.0 * X;
    const RealMatrix im = a * (2.0 * X * l_sum + 2.0 * Y * k_sum) - cb_sum * 2.0 * Y;

    ComplexMatrix grad(d, d);
    grad.real() = re;
    grad.imag() = im;
    grad *= shots / (a * a);

    if (ops) {
        const auto ud = static_cast<std::uint64_t>(d);
        ops->multiply_adds += ud * ud * ud + ctx.projector_count() * 4 * ud * ud + 4 * ud * ud * ud;
        ++ops->gradient_calls;
    }
    return grad;
}

RealVector likelihood_gradient(const CholeskyParams& t, const LikelihoodContext& ctx,
                               OperationCount* ops) {
    return extract_gradient_vector(likelihood_gradient_matrix(t, ctx, ops), t.qubits);
}

RealVector extract_gradient_vector(const ComplexMatrix& grad_matrix, int n) {
    return read_cholesky_slots(grad_matrix, n);
}

ComplexMatrix seed_gradient_matrix(const RealVector& values, int n) {
    return cholesky_factor(CholeskyParams(n, values));
}

MleResult mle_estimate_from(const DensityMatrix& start, const LikelihoodContext& ctx,
                            const OptimizerConfig& config) {
    if (start.qubits != ctx.qubits()) {
        throw std::invalid_argument("mle_estimate: start state and record disagree on qubit count");
    }
    const CholeskyParams seed = cholesky_params_of(start);
    const int n = ctx.qubits();
    const ObjectiveFn objective = [&](const RealVector& v) {
        return likelihood(CholeskyParams(n, v), ctx);
    };
    const GradientFn gradient = [&](const RealVector& v) {
        return likelihood_gradient(CholeskyParams(n, v), ctx);
    };
    OptimizationReport report = minimize(objective, gradient, seed, config);
    DensityMatrix estimate = rho_from_cholesky(report.final_params);
    return {std::move(estimate), std::move(report)};
}

MleResult mle_estimate(const MeasurementRecord& record, const ProjectorBasis& basis,
                       const OptimizerConfig& config, const MemoryBudget& budget) {
    const DensityMatrix linear = linear_reconstruct(record, basis, budget);
    const DensityMatrix qd = quick_and_dirty(linear);
    const LikelihoodContext ctx(record, basis, budget);
    return mle_estimate_from(qd, ctx, config);
}

}  // namespace qtomo
