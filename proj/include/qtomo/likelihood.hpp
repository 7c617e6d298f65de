#pragma once

// Maximum-likelihood estimation over the Cholesky manifold: the n-qubit
// Gaussian-approximated likelihood, its closed-form matrix-calculus gradient,
// and the linear -> clip -> minimize pipeline.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "qtomo/minimize.hpp"
#include "qtomo/reconstruction.hpp"

namespace qtomo {

/// Multiply-add counters used to compare evaluation costs.
struct OperationCount {
    std::uint64_t multiply_adds = 0;
    std::uint64_t likelihood_calls = 0;
    std::uint64_t gradient_calls = 0;
};

/// Counts, basis and the real/imaginary split Pi_nu = K_nu + i Lambda_nu of
/// every tensor projector. When the full split does not fit the memory budget
/// the projectors are rebuilt per evaluation from a ProjectorCache.
/// Immutable after construction.
class LikelihoodContext {
public:
    LikelihoodContext(MeasurementRecord record, ProjectorBasis basis, MemoryBudget budget = {});

    int qubits() const { return record_.qubits; }
    const MeasurementRecord& record() const { return record_; }
    const ProjectorBasis& basis() const { return basis_; }
    std::uint64_t projector_count() const { return record_.counts.size(); }

    /// Observed count with the zero guard applied: max(n_nu, 1).
    double denominator(std::uint64_t nu) const { return denominators_[nu]; }

    bool parts_cached() const { return !real_parts_.empty(); }

    /// K_nu and Lambda_nu; served from the cache when present.
    std::pair<RealMatrix, RealMatrix> projector_parts(std::uint64_t nu) const;

    /// Cached K_nu / Lambda_nu (only valid when parts_cached()).
    const RealMatrix& real_part(std::uint64_t nu) const { return real_parts_[nu]; }
    const RealMatrix& imag_part(std::uint64_t nu) const { return imag_parts_[nu]; }

private:
    MeasurementRecord record_;
    ProjectorBasis basis_;
    std::vector<double> denominators_;
    std::vector<RealMatrix> real_parts_;
    std::vector<RealMatrix> imag_parts_;
    std::unique_ptr<ProjectorCache> cache_;
};

/// L(t) = 1/2 sum_nu [N Tr{Pi_nu rho(t)} - n_nu]^2 / max(n_nu, 1).
double likelihood(const CholeskyParams& t, const LikelihoodContext& ctx,
                  OperationCount* ops = nullptr);

/// dL/dT assembled as N sum_nu C_nu D_nu with
///   A = Tr{T^dag T}, B_nu = Tr{Pi_nu T^dag T},
///   A' = 2X + 2iY, B'_nu = 2X K - 2Y Lambda + i (2X Lambda + 2Y K),
///   C_nu = (N B_nu - A n_nu) / (A n_nu), D_nu = (A B'_nu - B_nu A') / A^2,
/// where T = X + iY.
ComplexMatrix likelihood_gradient_matrix(const CholeskyParams& t, const LikelihoodContext& ctx,
                                         OperationCount* ops = nullptr);

/// Gradient vector: likelihood_gradient_matrix read at the parameter slots.
RealVector likelihood_gradient(const CholeskyParams& t, const LikelihoodContext& ctx,
                               OperationCount* ops = nullptr);

/// Reads dL/dt from a 2^n x 2^n derivative matrix: real part on the diagonal,
/// real and imaginary parts of each strictly-lower entry.
RealVector extract_gradient_vector(const ComplexMatrix& grad_matrix, int n);

/// Places a parameter-ordered vector back into matrix slots (inverse of
/// extract_gradient_vector on the lower triangle).
ComplexMatrix seed_gradient_matrix(const RealVector& values, int n);

struct MleResult {
    DensityMatrix estimate;
    OptimizationReport report;
};

/// linear_reconstruct -> quick_and_dirty -> cholesky_params_of -> minimize ->
/// rho_from_cholesky.
MleResult mle_estimate(const MeasurementRecord& record, const ProjectorBasis& basis,
                       const OptimizerConfig& config = {}, const MemoryBudget& budget = {});

/// Same as mle_estimate but starting from a given physical state.
MleResult mle_estimate_from(const DensityMatrix& start, const LikelihoodContext& ctx,
                            const OptimizerConfig& config = {});

}  // namespace qtomo
