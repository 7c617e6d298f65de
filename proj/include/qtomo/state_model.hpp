#pragma once

// Physical state representations: density matrices, the Cholesky
// parametrization, the Pauli/projector operator families and the
// comparison metrics (fidelity, linear entropy, tangle).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qtomo/matrix_kernel.hpp"

namespace qtomo {

/// Thrown when a state fails a physicality requirement (e.g. fidelity on a
/// matrix with a clearly negative eigenvalue).
class NonPhysicalState : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 4^n, checked against overflow for n <= 31.
std::uint64_t pow4(int n);
/// 2^n.
std::uint64_t pow2(int n);

/// Base-4 digits of `index`, most significant first, exactly `n` of them.
std::vector<int> base4_digits(std::uint64_t index, int n);
/// Zero-padded base-4 string of `index`, e.g. (33, 4) -> "0201".
std::string base4_string(std::uint64_t index, int n);

/// 2^n x 2^n matrix describing an n-qubit state. Positivity is not enforced
/// by the type: linear reconstruction produces non-physical matrices.
struct DensityMatrix {
    int qubits = 0;
    ComplexMatrix matrix;

    Eigen::Index dim() const { return matrix.rows(); }

    /// Validates shape, Hermiticity (1e-10) and unit trace (1e-10).
    static DensityMatrix from_matrix(ComplexMatrix m);
};

/// Smallest eigenvalue of the (symmetrized) matrix.
double min_eigenvalue(const DensityMatrix& rho);

/// True when Hermitian, unit-trace and min eigenvalue >= -tol.
bool is_physical(const DensityMatrix& rho, double tol = 1e-9);

/// Real parameter vector of length 4^n for rho(t) = T(t)^dag T(t) / Tr{T^dag T}.
///
/// Layout of T (2^n x 2^n, lower triangular): t[0..d-1] are the real diagonal
/// entries; the strictly-lower entries follow row by row (row 1..d-1, columns
/// left of the diagonal), each consuming a (real, imaginary) pair.
struct CholeskyParams {
    int qubits = 0;
    RealVector t;

    CholeskyParams() = default;
    CholeskyParams(int n, RealVector values);
};

/// Position of a parameter inside T.
struct CholeskySlot {
    Eigen::Index row;
    Eigen::Index col;
    bool imaginary;
};

/// Maps parameter index -> slot in T for an n-qubit layout.
std::vector<CholeskySlot> cholesky_layout(int n);

/// The four single-qubit measurement projectors, indexed 0..3.
struct ProjectorBasis {
    std::array<ComplexMatrix, 4> projectors;

    /// Pi_0 = I/2, Pi_1 = |0><0|, Pi_2 = |D-><D-|, Pi_3 = |R><R| with
    /// |D-> = (|0> - |1>)/sqrt2 and |R> = (|0> - i|1>)/sqrt2.
    static ProjectorBasis stokes();

    /// Throws std::invalid_argument if a projector is not 2x2 Hermitian, if
    /// Pi_0 != I/2 or if Pi_1..Pi_3 are not idempotent (1e-12).
    void validate() const;
};

/// Pauli matrix sigma_k: 0 -> I, 1 -> X, 2 -> Y, 3 -> Z.
const ComplexMatrix& pauli(int k);

/// Gamma_mu = 2^{-n/2} sigma_{mu_1} x ... x sigma_{mu_n} (digits of mu in base 4,
/// most significant first). Orthonormal under Tr{Gamma_mu Gamma_nu}.
ComplexMatrix gamma_operator(std::uint64_t mu, int n, const MemoryBudget& budget = {});

/// Adds coeff * sigma_{mu_1} x ... x sigma_{mu_n} to `target` in O(2^n) work,
/// using the one-nonzero-per-row structure of Pauli strings.
void add_pauli_string(ComplexMatrix& target, std::uint64_t mu, int n, Complex coeff);

/// Pi_nu = Pi_{nu_1} x ... x Pi_{nu_n}.
ComplexMatrix projector(std::uint64_t nu, const ProjectorBasis& basis, int n,
                        const MemoryBudget& budget = {});

/// T(t) as a dense lower-triangular matrix.
ComplexMatrix cholesky_factor(const CholeskyParams& p);

/// Inverse of cholesky_factor on the parameter slots; entries above the
/// diagonal and imaginary parts of the diagonal are ignored.
RealVector read_cholesky_slots(const ComplexMatrix& m, int n);

DensityMatrix rho_from_cholesky(const CholeskyParams& p);

/// Parameters reproducing (rho + jitter I)/(1 + jitter 2^n). If the shifted
/// matrix does not factor, jitter escalates to 1e-6 and then 1e-3 before
/// failing with NonPhysicalState.
CholeskyParams cholesky_params_of(const DensityMatrix& rho, double jitter = 1e-9);

/// Uhlmann fidelity {Tr[(sqrt(a) b sqrt(a))^{1/2}]}^2, clamped to [0,1].
double fidelity(const DensityMatrix& a, const DensityMatrix& b);

/// 2^n/(2^n - 1) (1 - Tr{rho^2}); 0 for pure states, 1 for I/2^n.
double linear_entropy(const DensityMatrix& rho);

/// Two-qubit tangle (squared concurrence).
double tangle(const DensityMatrix& rho);

struct StateMetrics {
    double fidelity = 0.0;
    double linear_entropy = 0.0;
    std::optional<double> tangle;  // two-qubit states only
};

/// Fidelity of `estimate` against `truth`, plus the entropy/tangle of `estimate`.
StateMetrics compute_metrics(const DensityMatrix& estimate, const DensityMatrix& truth);

/// Text serialization: "n=<qubits>" then 2^n rows of comma-separated
/// "<re><+|-><im>j" values at 17 significant digits.
void write_density(std::ostream& os, const DensityMatrix& rho);
DensityMatrix read_density(std::istream& is);
void save_density(const std::string& path, const DensityMatrix& rho);
DensityMatrix load_density(const std::string& path);

}  // namespace qtomo
