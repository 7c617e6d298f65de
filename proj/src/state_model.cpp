#include "qtomo/state_model.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include <Eigen/Cholesky>

namespace qtomo {

namespace {

constexpr int kMaxQubits = 31;

void check_qubits(int n, const char* where) {
    if (n < 1 || n > kMaxQubits) {
        std::ostringstream os;
        os << where << ": qubit count " << n << " out of range [1, " << kMaxQubits << "]";
        throw std::invalid_argument(os.str());
    }
}

void check_index(std::uint64_t index, int n, const char* where) {
    if (index >= pow4(n)) {
        std::ostringstream os;
        os << where << ": index " << index << " out of range [0, " << pow4(n) - 1 << "]";
        throw std::out_of_range(os.str());
    }
}

int qubits_for_dim(Eigen::Index dim) {
    int n = 0;
    Eigen::Index d = 1;
    while (d < dim && n <= kMaxQubits) {
        d *= 2;
        ++n;
    }
    if (d != dim || n == 0) {
        std::ostringstream os;
        os << "dimension " << dim << " is not 2^n for n >= 1";
        throw std::invalid_argument(os.str());
    }
    return n;
}

// Spectral square root of a (nearly) positive Hermitian matrix; eigenvalues
// below zero are clamped.
ComplexMatrix psd_sqrt(const ComplexMatrix& m) {
    const EigenDecomposition eig = hermitian_eig(m);
    const RealVector roots = eig.eigenvalues.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors * roots.asDiagonal() * eig.eigenvectors.adjoint();
}

void require_physical(const DensityMatrix& rho, double tol, const char* where) {
    const double lo = min_eigenvalue(rho);
    if (lo < -tol) {
        std::ostringstream os;
        os << where << ": state has eigenvalue " << lo << " below -" << tol;
        throw NonPhysicalState(os.str());
    }
}

std::string format_complex(Complex z) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.17g%+.17gj", z.real(), z.imag());
    return buf;
}

Complex parse_complex(const std::string& field, std::size_t line_no) {
    std::string s;
    for (char c : field) {
        if (!std::isspace(static_cast<unsigned char>(c))) {
            s.push_back(c);
        }
    }
    auto fail = [&]() {
        std::ostringstream os;
        os << "density matrix line " << line_no << ": cannot parse complex value '" << field << "'";
        return std::invalid_argument(os.str());
    };
    if (s.size() < 2 || s.back() != 'j') {
        throw fail();
    }
    s.pop_back();
    // Split at the last sign that does not belong to an exponent.
    std::size_t split = std::string::npos;
    for (std::size_t i = s.size(); i-- > 1;) {
        if ((s[i] == '+' || s[i] == '-') && s[i - 1] != 'e' && s[i - 1] != 'E') {
            split = i;
            break;
        }
    }
    if (split == std::string::npos) {
        throw fail();
    }
    try {
        std::size_t used_re = 0;
        std::size_t used_im = 0;
        const std::string re_str = s.substr(0, split);
        const std::string im_str = s.substr(split);
        const double re = std::stod(re_str, &used_re);
        const double im = std::stod(im_str, &used_im);
        if (used_re != re_str.size() || used_im != im_str.size()) {
            throw fail();
        }
        return {re, im};
    } catch (const std::logic_error&) {
        throw fail();
    }
}

}  // namespace

std::uint64_t pow4(int n) {
    if (n < 0 || n > kMaxQubits) {
        throw std::invalid_argument("pow4: exponent out of range");
    }
    return std::uint64_t{1} << (2 * n);
}

std::uint64_t pow2(int n) {
    if (n < 0 || n > 2 * kMaxQubits) {
        throw std::invalid_argument("pow2: exponent out of range");
    }
    return std::uint64_t{1} << n;
}

std::vector<int> base4_digits(std::uint64_t index, int n) {
    std::vector<int> digits(static_cast<std::size_t>(n));
    for (int k = n - 1; k >= 0; --k) {
        digits[static_cast<std::size_t>(k)] = static_cast<int>(index & 3u);
        index >>= 2;
    }
    return digits;
}

std::string base4_string(std::uint64_t index, int n) {
    std::string s;
    for (int d : base4_digits(index, n)) {
        s.push_back(static_cast<char>('0' + d));
    }
    return s;
}

DensityMatrix DensityMatrix::from_matrix(ComplexMatrix m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("density matrix must be square");
    }
    const int n = qubits_for_dim(m.rows());
    const double herm = hermiticity_error(m);
    if (herm > 1e-10) {
        std::ostringstream os;
        os << "density matrix is not Hermitian (max asymmetry " << herm << ")";
        throw std::invalid_argument(os.str());
    }
    const Complex tr = m.trace();
    if (std::abs(tr - Complex(1.0, 0.0)) > 1e-10) {
        std::ostringstream os;
        os << "density matrix trace is " << tr.real() << (tr.imag() < 0 ? "" : "+") << tr.imag()
           << "i, expected 1";
        throw std::invalid_argument(os.str());
    }
    return DensityMatrix{n, std::move(m)};
}

double min_eigenvalue(const DensityMatrix& rho) {
    return hermitian_eig(rho.matrix).eigenvalues(0);
}

bool is_physical(const DensityMatrix& rho, double tol) {
    if (rho.matrix.rows() != rho.matrix.cols() ||
        rho.matrix.rows() != static_cast<Eigen::Index>(pow2(rho.qubits))) {
        return false;
    }
    if (hermiticity_error(rho.matrix) > 1e-10) {
        return false;
    }
    if (std::abs(rho.matrix.trace() - Complex(1.0, 0.0)) > 1e-10) {
        return false;
    }
    return min_eigenvalue(rho) >= -tol;
}

CholeskyParams::CholeskyParams(int n, RealVector values) : qubits(n), t(std::move(values)) {
    check_qubits(n, "CholeskyParams");
    if (static_cast<std::uint64_t>(t.size()) != pow4(n)) {
        std::ostringstream os;
        os << "CholeskyParams: expected " << pow4(n) << " parameters, got " << t.size();
        throw std::invalid_argument(os.str());
    }
}

std::vector<CholeskySlot> cholesky_layout(int n) {
    check_qubits(n, "cholesky_layout");
    const auto d = static_cast<Eigen::Index>(pow2(n));
    std::vector<CholeskySlot> slots;
    slots.reserve(static_cast<std::size_t>(d * d));
    for (Eigen::Index i = 0; i < d; ++i) {
        slots.push_back({i, i, false});
    }
    for (Eigen::Index r = 1; r < d; ++r) {
        for (Eigen::Index c = 0; c < r; ++c) {
            slots.push_back({r, c, false});
            slots.push_back({r, c, true});
        }
    }
    return slots;
}

ProjectorBasis ProjectorBasis::stokes() {
    const double h = 0.5;
    const Complex i(0.0, 1.0);
    ProjectorBasis b;
    b.projectors[0] = ComplexMatrix::Identity(2, 2) * h;
    b.projectors[1] = ComplexMatrix::Zero(2, 2);
    b.projectors[1](0, 0) = 1.0;
    // |D-> = (|0> - |1>)/sqrt2
    b.projectors[2].resize(2, 2);
    b.projectors[2] << h, -h, -h, h;
    // |R> = (|0> - i|1>)/sqrt2, |R><R| = 1/2 [[1, i], [-i, 1]]
    b.projectors[3].resize(2, 2);
    b.projectors[3] << h, h * i, -h * i, h;
    return b;
}

void ProjectorBasis::validate() const {
    for (int k = 0; k < 4; ++k) {
        const ComplexMatrix& p = projectors[static_cast<std::size_t>(k)];
        std::ostringstream os;
        os << "projector basis: Pi_" << k;
        if (p.rows() != 2 || p.cols() != 2) {
            throw std::invalid_argument(os.str() + " is not 2x2");
        }
        if (!is_hermitian(p, 1e-12)) {
            throw std::invalid_argument(os.str() + " is not Hermitian");
        }
        if (k == 0) {
            if ((p - 0.5 * ComplexMatrix::Identity(2, 2)).norm() > 1e-12) {
                throw std::invalid_argument(os.str() + " is not I/2");
            }
        } else if ((p * p - p).norm() > 1e-12) {
            throw std::invalid_argument(os.str() + " is not idempotent");
        }
    }
}

const ComplexMatrix& pauli(int k) {
    static const std::array<ComplexMatrix, 4> kPauli = [] {
        const Complex i(0.0, 1.0);
        std::array<ComplexMatrix, 4> s;
        for (auto& m : s) {
            m = ComplexMatrix::Zero(2, 2);
        }
        s[0] << 1, 0, 0, 1;
        s[1] << 0, 1, 1, 0;
        s[2] << 0, -i, i, 0;
        s[3] << 1, 0, 0, -1;
        return s;
    }();
    if (k < 0 || k > 3) {
        throw std::out_of_range("pauli: index must be in [0, 3]");
    }
    return kPauli[static_cast<std::size_t>(k)];
}

ComplexMatrix gamma_operator(std::uint64_t mu, int n, const MemoryBudget& budget) {
    check_qubits(n, "gamma_operator");
    check_index(mu, n, "gamma_operator");
    const std::uint64_t d = pow2(n);
    budget.check(MemoryBudget::complex_matrix_bytes(d, d), "gamma_operator");
    ComplexMatrix out = ComplexMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    add_pauli_string(out, mu, n, Complex(1.0 / std::sqrt(static_cast<double>(d)), 0.0));
    return out;
}

void add_pauli_string(ComplexMatrix& target, std::uint64_t mu, int n, Complex coeff) {
    const std::vector<int> digits = base4_digits(mu, n);
    std::uint64_t flip_mask = 0;
    for (int k = 0; k < n; ++k) {
        const int dgt = digits[static_cast<std::size_t>(k)];
        if (dgt == 1 || dgt == 2) {
            flip_mask |= std::uint64_t{1} << (n - 1 - k);
        }
    }
    const std::uint64_t d = pow2(n);
    const Complex i(0.0, 1.0);
    for (std::uint64_t row = 0; row < d; ++row) {
        Complex value = coeff;
        for (int k = 0; k < n; ++k) {
            const bool bit = (row >> (n - 1 - k)) & 1u;
            switch (digits[static_cast<std::size_t>(k)]) {
                case 2: value *= bit ? i : -i; break;
                case 3: if (bit) value = -value; break;
                default: break;
            }
        }
        target(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(row ^ flip_mask)) += value;
    }
}

ComplexMatrix projector(std::uint64_t nu, const ProjectorBasis& basis, int n,
                        const MemoryBudget& budget) {
    check_qubits(n, "projector");
    check_index(nu, n, "projector");
    const std::uint64_t d = pow2(n);
    budget.check(MemoryBudget::complex_matrix_bytes(d, d), "projector");
    const std::vector<int> digits = base4_digits(nu, n);
    ComplexMatrix out = basis.projectors[static_cast<std::size_t>(digits[0])];
    for (int k = 1; k < n; ++k) {
        out = kron(out, basis.projectors[static_cast<std::size_t>(digits[static_cast<std::size_t>(k)])],
                   budget);
    }
    return out;
}

ComplexMatrix cholesky_factor(const CholeskyParams& p) {
    check_qubits(p.qubits, "cholesky_factor");
    const auto d = static_cast<Eigen::Index>(pow2(p.qubits));
    if (static_cast<std::uint64_t>(p.t.size()) != pow4(p.qubits)) {
        throw std::invalid_argument("cholesky_factor: parameter vector has wrong length");
    }
    ComplexMatrix T = ComplexMatrix::Zero(d, d);
    const std::vector<CholeskySlot> slots = cholesky_layout(p.qubits);
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const CholeskySlot& s = slots[k];
        const double v = p.t(static_cast<Eigen::Index>(k));
        if (s.imaginary) {
            T(s.row, s.col) += Complex(0.0, v);
        } else {
            T(s.row, s.col) += Complex(v, 0.0);
        }
    }
    return T;
}

RealVector read_cholesky_slots(const ComplexMatrix& m, int n) {
    check_qubits(n, "read_cholesky_slots");
    const auto d = static_cast<Eigen::Index>(pow2(n));
    if (m.rows() != d || m.cols() != d) {
        std::ostringstream os;
        os << "read_cholesky_slots: expected " << d << "x" << d << " matrix, got " << m.rows()
           << "x" << m.cols();
        throw std::invalid_argument(os.str());
    }
    const std::vector<CholeskySlot> slots = cholesky_layout(n);
    RealVector out(static_cast<Eigen::Index>(slots.size()));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const Complex z = m(slots[k].row, slots[k].col);
        out(static_cast<Eigen::Index>(k)) = slots[k].imaginary ? z.imag() : z.real();
    }
    return out;
}

DensityMatrix rho_from_cholesky(const CholeskyParams& p) {
    const double norm2 = p.t.squaredNorm();
    if (!(norm2 > 0.0)) {
        throw std::invalid_argument("rho_from_cholesky: parameter vector is identically zero");
    }
    const ComplexMatrix T = cholesky_factor(p);
    ComplexMatrix rho = T.adjoint() * T / norm2;
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return DensityMatrix{p.qubits, std::move(rho)};
}

CholeskyParams cholesky_params_of(const DensityMatrix& rho, double jitter) {
    if (!(jitter > 0.0)) {
        throw std::invalid_argument("cholesky_params_of: jitter must be positive");
    }
    require_physical(rho, 1e-9, "cholesky_params_of");
    const Eigen::Index d = rho.dim();
    // Reversal J turns the usual L L^dag factorization into T^dag T with T
    // lower triangular: if J rho J = L L^dag then T = J L^dag J.
    const ComplexMatrix flipped = rho.matrix.colwise().reverse().rowwise().reverse();

    std::vector<double> schedule{jitter};
    for (double step : {1e-6, 1e-3}) {
        if (step > schedule.back()) {
            schedule.push_back(step);
        }
    }
    for (double eps : schedule) {
        const ComplexMatrix shifted =
            (flipped + eps * ComplexMatrix::Identity(d, d)) / (1.0 + eps * static_cast<double>(d));
        Eigen::LLT<ComplexMatrix> llt(shifted);
        if (llt.info() != Eigen::Success) {
            continue;
        }
        const ComplexMatrix L = llt.matrixL();
        const ComplexMatrix T = L.adjoint().colwise().reverse().rowwise().reverse();
        return CholeskyParams(rho.qubits, read_cholesky_slots(T, rho.qubits));
    }
    throw NonPhysicalState("cholesky_params_of: factorization failed after jitter escalation to 1e-3");
}

double fidelity(const DensityMatrix& a, const DensityMatrix& b) {
    if (a.dim() != b.dim()) {
        throw std::invalid_argument("fidelity: dimension mismatch");
    }
    require_physical(a, 1e-6, "fidelity");
    require_physical(b, 1e-6, "fidelity");
    const ComplexMatrix sa = psd_sqrt(a.matrix);
    ComplexMatrix inner = sa * b.matrix * sa;
    inner = 0.5 * (inner + inner.adjoint()).eval();
    const RealVector lambda = hermitian_eig(inner).eigenvalues;
    // eigenvalues at rounding level would be amplified by the square root
    const double floor = 1e-13 * std::max(lambda.maxCoeff(), 0.0);
    double root_sum = 0.0;
    for (Eigen::Index k = 0; k < lambda.size(); ++k) {
        if (lambda(k) > floor) root_sum += std::sqrt(lambda(k));
    }
    const double f = root_sum * root_sum;
    if (f < -1e-8 || f > 1.0 + 1e-8) {
        std::ostringstream os;
        os << "fidelity: value " << f << " outside [0, 1]";
        throw NonPhysicalState(os.str());
    }
    return std::clamp(f, 0.0, 1.0);
}

double linear_entropy(const DensityMatrix& rho) {
    const double d = static_cast<double>(rho.dim());
    const double purity = trace_product(rho.matrix, rho.matrix).real();
    return d / (d - 1.0) * (1.0 - purity);
}

double tangle(const DensityMatrix& rho) {
    if (rho.qubits != 2 || rho.dim() != 4) {
        std::ostringstream os;
        os << "tangle: defined for 2 qubits only, got " << rho.qubits;
        throw std::invalid_argument(os.str());
    }
    require_physical(rho, 1e-9, "tangle");
    const ComplexMatrix yy = kron(pauli(2), pauli(2));
    const ComplexMatrix flipped = yy * rho.matrix.conjugate() * yy;
    const ComplexMatrix sr = psd_sqrt(rho.matrix);
    ComplexMatrix r = sr * flipped * sr;
    r = 0.5 * (r + r.adjoint()).eval();
    RealVector ev = hermitian_eig(r).eigenvalues;
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
        if (ev(k) < 0.0) {
            if (ev(k) < -1e-10) {
                std::ostringstream os;
                os << "tangle: spin-flip product has eigenvalue " << ev(k);
                throw NonPhysicalState(os.str());
            }
            ev(k) = 0.0;
        }
    }
    // rounding-level eigenvalues would be amplified by the square root
    const double floor = 1e-13 * ev.maxCoeff();
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
        if (ev(k) <= floor) ev(k) = 0.0;
    }
    // ascending: the largest root is last
    const RealVector roots = ev.cwiseSqrt();
    const double c = roots(3) - roots(0) - roots(1) - roots(2);
    const double concurrence = std::max(c, 0.0);
    return std::min(concurrence * concurrence, 1.0);
}

StateMetrics compute_metrics(const DensityMatrix& estimate, const DensityMatrix& truth) {
    StateMetrics m;
    m.fidelity = fidelity(estimate, truth);
    m.linear_entropy = std::clamp(linear_entropy(estimate), 0.0, 1.0);
    if (estimate.qubits == 2) {
        m.tangle = tangle(estimate);
    }
    return m;
}

void write_density(std::ostream& os, const DensityMatrix& rho) {
    os << "n=" << rho.qubits << '\n';
    for (Eigen::Index i = 0; i < rho.dim(); ++i) {
        for (Eigen::Index j = 0; j < rho.dim(); ++j) {
            if (j > 0) {
                os << ',';
            }
            os << format_complex(rho.matrix(i, j));
        }
        os << '\n';
    }
}

DensityMatrix read_density(std::istream& is) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(is, line) || line.rfind("n=", 0) != 0) {
        throw std::invalid_argument("density matrix line 1: expected header 'n=<qubits>'");
    }
    int n = 0;
    try {
        std::size_t used = 0;
        n = std::stoi(line.substr(2), &used);
        if (used != line.size() - 2) {
            throw std::invalid_argument("trailing characters");
        }
    } catch (const std::logic_error&) {
        throw std::invalid_argument("density matrix line 1: malformed qubit count '" + line + "'");
    }
    check_qubits(n, "read_density");
    const auto d = static_cast<Eigen::Index>(pow2(n));
    ComplexMatrix m(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        ++line_no;
        if (!std::getline(is, line)) {
            std::ostringstream os;
            os << "density matrix: expected " << d << " rows, found " << i;
            throw std::invalid_argument(os.str());
        }
        std::stringstream row(line);
        std::vector<std::string> fields;
        for (std::string field; std::getline(row, field, ',');) {
            fields.push_back(field);
        }
        if (static_cast<Eigen::Index>(fields.size()) != d) {
            std::ostringstream os;
            os << "density matrix line " << line_no << ": expected " << d << " values, found "
               << fields.size();
            throw std::invalid_argument(os.str());
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            m(i, j) = parse_complex(fields[static_cast<std::size_t>(j)], line_no);
        }
    }
    return DensityMatrix::from_matrix(std::move(m));
}

void save_density(const std::string& path, const DensityMatrix& rho) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    write_density(out, rho);
}

DensityMatrix load_density(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return read_density(in);
}

}  // namespace qtomo
