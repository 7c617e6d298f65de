#include "qtomo/matrix_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace qtomo {

namespace {

std::string budget_message(std::size_t requested, std::size_t budget, const std::string& what) {
    std::ostringstream os;
    os << what << " needs " << requested << " bytes, memory budget is " << budget << " bytes";
    return os.str();
}

}  // namespace

MemoryBudgetExceeded::MemoryBudgetExceeded(std::size_t requested, std::size_t budget,
                                           const std::string& what)
    : std::runtime_error(budget_message(requested, budget, what)),
      requested_(requested),
      budget_(budget) {}

void MemoryBudget::check(std::size_t requested, const std::string& what) const {
    if (requested > bytes) {
        throw MemoryBudgetExceeded(requested, bytes, what);
    }
}

std::size_t MemoryBudget::complex_matrix_bytes(std::uint64_t rows, std::uint64_t cols) {
    constexpr auto kMax = std::numeric_limits<std::size_t>::max();
    if (rows != 0 && cols > kMax / rows) {
        return kMax;
    }
    const std::uint64_t entries = rows * cols;
    if (entries > kMax / sizeof(Complex)) {
        return kMax;
    }
    return static_cast<std::size_t>(entries * sizeof(Complex));
}

ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b, const MemoryBudget& budget) {
    const std::uint64_t rows = static_cast<std::uint64_t>(a.rows()) * b.rows();
    const std::uint64_t cols = static_cast<std::uint64_t>(a.cols()) * b.cols();
    budget.check(MemoryBudget::complex_matrix_bytes(rows, cols), "kron");

    ComplexMatrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index j1 = 0; j1 < a.cols(); ++j1) {
        for (Eigen::Index i1 = 0; i1 < a.rows(); ++i1) {
            out.block(i1 * b.rows(), j1 * b.cols(), b.rows(), b.cols()) = a(i1, j1) * b;
        }
    }
    return out;
}

double hermiticity_error(const ComplexMatrix& h) {
    if (h.rows() != h.cols()) {
        return std::numeric_limits<double>::infinity();
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
        for (Eigen::Index i = j; i < h.rows(); ++i) {
            worst = std::max(worst, std::abs(h(i, j) - std::conj(h(j, i))));
        }
    }
    return worst;
}

bool is_hermitian(const ComplexMatrix& h, double tol) { return hermiticity_error(h) <= tol; }

EigenDecomposition hermitian_eig(const ComplexMatrix& h) {
    if (h.rows() != h.cols()) {
        std::ostringstream os;
        os << "hermitian_eig: matrix is " << h.rows() << "x" << h.cols() << ", expected square";
        throw std::invalid_argument(os.str());
    }
    if (h.size() == 0) {
        throw std::invalid_argument("hermitian_eig: empty matrix");
    }
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    const double herm_err = hermiticity_error(h);
    if (!(herm_err <= 1e-10 * scale)) {
        std::ostringstream os;
        os << "hermitian_eig: input is not Hermitian (max asymmetry " << herm_err << ")";
        throw std::invalid_argument(os.str());
    }

    const ComplexMatrix sym = 0.5 * (h + h.adjoint());
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(sym);
    if (solver.info() != Eigen::Success) {
        std::ostringstream os;
        os << "hermitian_eig: eigensolver did not converge for " << h.rows() << "x" << h.cols()
           << " matrix (max |entry| " << h.cwiseAbs().maxCoeff() << ", Frobenius norm "
           << h.norm() << ")";
        throw EigenNoConvergence(os.str());
    }
    return {solver.eigenvalues(), solver.eigenvectors()};
}

Complex trace_product(const ComplexMatrix& a, const ComplexMatrix& b) {
    if (a.cols() != b.rows() || b.cols() != a.rows()) {
        std::ostringstream os;
        os << "trace_product: dimension mismatch " << a.rows() << "x" << a.cols() << " vs "
           << b.rows() << "x" << b.cols();
        throw std::invalid_argument(os.str());
    }
    // sum_ij a(i,j) b(j,i) == sum over entries of a .* b^T
    return a.cwiseProduct(b.transpose()).sum();
}

}  // namespace qtomo
