#pragma once

// Linear inversion of projector counts into a density matrix without ever
// materializing the 4^n x 4^n measurement matrix, and the two eigenvalue
// repairs ("quick and dirty" clipping and forced purity).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "qtomo/state_model.hpp"

namespace qtomo {

/// Observed (or expected) counts n_nu for the 4^n tensor projectors, nu in
/// ascending base-4 order, each measured `shots` times.
struct MeasurementRecord {
    int qubits = 0;
    double shots = 0.0;
    std::vector<double> counts;

    /// Throws std::invalid_argument on wrong length, negative counts or
    /// non-positive shots.
    void validate() const;
};

/// beta(nu, mu) = Tr{Pi_nu sigma_mu} for a single qubit, and its inverse.
struct BetaMatrix {
    Eigen::Matrix4d beta;
    Eigen::Matrix4d beta_inverse;
};

/// Throws std::invalid_argument when |det beta| < 1e-10 (informationally
/// incomplete basis) or when the traces have imaginary parts above 1e-12.
BetaMatrix beta_matrix(const ProjectorBasis& basis);

/// (B^-1)_{nu,mu} = prod_xi beta^-1_{nu_xi, mu_xi} for the sigma-string
/// measurement matrix B_{nu,mu} = Tr{Pi_nu sigma_mu...}.
double b_inverse_element(std::uint64_t nu, std::uint64_t mu, const BetaMatrix& beta, int n);

/// Running byte counter for scratch storage; `peak` is the high-water mark.
struct AllocationStats {
    std::size_t current = 0;
    std::size_t peak = 0;
    std::size_t allocations = 0;

    void add(std::size_t bytes) {
        current += bytes;
        ++allocations;
        if (current > peak) {
            peak = current;
        }
    }
    void remove(std::size_t bytes) { current -= bytes; }
};

/// Allocator that reports every allocation to an AllocationStats sink, used
/// for the auxiliary buffers of linear_reconstruct so their footprint can be
/// measured.
template <class T>
struct TrackedAllocator {
    using value_type = T;

    AllocationStats* stats = nullptr;

    TrackedAllocator() = default;
    explicit TrackedAllocator(AllocationStats* s) : stats(s) {}
    template <class U>
    TrackedAllocator(const TrackedAllocator<U>& other) : stats(other.stats) {}

    T* allocate(std::size_t count) {
        if (stats) {
            stats->add(count * sizeof(T));
        }
        return std::allocator<T>{}.allocate(count);
    }
    void deallocate(T* p, std::size_t count) {
        if (stats) {
            stats->remove(count * sizeof(T));
        }
        std::allocator<T>{}.deallocate(p, count);
    }

    template <class U>
    bool operator==(const TrackedAllocator<U>& other) const {
        return stats == other.stats;
    }
};

/// Builds tensor projectors on demand. Prefix tensors over the first
/// `prefix_depth` qubits are cached; the remaining factors are tensored on
/// per request. Read-only after construction.
class ProjectorCache {
public:
    /// prefix_depth < 0 selects min(n, 5).
    ProjectorCache(ProjectorBasis basis, int n, int prefix_depth = -1, MemoryBudget budget = {});

    int qubits() const { return n_; }
    int prefix_depth() const { return depth_; }
    std::size_t cached_bytes() const;

    ComplexMatrix projector(std::uint64_t nu) const;

private:
    ProjectorBasis basis_;
    int n_;
    int depth_;
    MemoryBudget budget_;
    std::vector<ComplexMatrix> prefixes_;
};

/// Tr{Pi_nu m} for every nu, by recursive partial contraction of m one qubit
/// at a time: O(n 4^n) work, O(4^n) storage. `m` need not be Hermitian.
std::vector<Complex> projector_expectations(const ComplexMatrix& m, const ProjectorBasis& basis);

/// counts(nu) = shots * Re Tr{Pi_nu rho}.
MeasurementRecord expected_counts(const DensityMatrix& rho, double shots,
                                  const ProjectorBasis& basis);

/// rho_linear = sum_nu Gamma_nu r_nu with r = shots^-1 B^-1 n, where B^-1 is
/// evaluated element by element. Hermitian and unit-trace, not necessarily
/// positive. Auxiliary storage is O(4^n); when `stats` is given, every
/// auxiliary allocation is recorded there.
DensityMatrix linear_reconstruct(const MeasurementRecord& record, const ProjectorBasis& basis,
                                 const MemoryBudget& budget = {}, AllocationStats* stats = nullptr);

/// Zero the negative eigenvalues and renormalize. Throws NonPhysicalState when
/// no eigenvalue is positive.
DensityMatrix quick_and_dirty(const DensityMatrix& rho_linear);

struct RepairDiagnostics {
    bool eigenvalue_tie = false;
    std::string warning;
};

/// Projector onto the eigenvector of the largest eigenvalue. On a tie (within
/// 1e-12) the tied eigenvector whose amplitudes, by magnitude, are
/// lexicographically largest wins and a warning is recorded in `diag`
/// (or printed to stderr if `diag` is null).
DensityMatrix forced_purity(const DensityMatrix& rho_linear, RepairDiagnostics* diag = nullptr);

/// Counts file: "qubits=<n>,shots=<N>" then 4^n lines "<nu base-4>,<count>".
void write_counts(std::ostream& os, const MeasurementRecord& record);
MeasurementRecord read_counts(std::istream& is);
void save_counts(const std::string& path, const MeasurementRecord& record);
MeasurementRecord load_counts(const std::string& path);

}  // namespace qtomo
