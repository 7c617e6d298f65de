#pragma once

// Dense complex matrix primitives shared by every estimator.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qtomo {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

/// Thrown when a requested dense allocation would exceed the configured cap.
class MemoryBudgetExceeded : public std::runtime_error {
public:
    MemoryBudgetExceeded(std::size_t requested, std::size_t budget, const std::string& what);

    std::size_t requested_bytes() const noexcept { return requested_; }
    std::size_t budget_bytes() const noexcept { return budget_; }

private:
    std::size_t requested_;
    std::size_t budget_;
};

/// Thrown when the Hermitian eigensolver fails to converge.
class EigenNoConvergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Upper bound on the size of any single dense matrix the library will allocate.
struct MemoryBudget {
    static constexpr std::size_t kDefaultBytes = std::size_t{2} << 30;  // 2 GiB

    std::size_t bytes = kDefaultBytes;

    /// Throws MemoryBudgetExceeded if `requested` exceeds the budget.
    void check(std::size_t requested, const std::string& what) const;

    /// Bytes needed for a rows x cols complex matrix, saturating on overflow.
    static std::size_t complex_matrix_bytes(std::uint64_t rows, std::uint64_t cols);
};

struct EigenDecomposition {
    RealVector eigenvalues;     // ascending
    ComplexMatrix eigenvectors; // column k pairs with eigenvalues(k)
};

/// Kronecker product; entry (i1*b.rows+i2, j1*b.cols+j2) = a(i1,j1)*b(i2,j2).
ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b,
                   const MemoryBudget& budget = {});

/// Spectral decomposition of a Hermitian matrix. The input must be Hermitian
/// to 1e-10 (relative to its largest entry); it is symmetrized before solving.
EigenDecomposition hermitian_eig(const ComplexMatrix& h);

/// Tr{a b} computed as sum_ij a(i,j) b(j,i), without forming the product.
Complex trace_product(const ComplexMatrix& a, const ComplexMatrix& b);

/// Largest |h(i,j) - conj(h(j,i))|; infinite for non-square input.
double hermiticity_error(const ComplexMatrix& h);

bool is_hermitian(const ComplexMatrix& h, double tol);

}  // namespace qtomo
