#include "qtomo/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace qtomo {

namespace {

template <class T>
using TrackedVector = std::vector<T, TrackedAllocator<T>>;

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_number(const std::string& text, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::logic_error&) {
        std::ostringstream os;
        os << "counts line " << line_no << ": malformed " << what << " '" << text << "'";
        throw std::invalid_argument(os.str());
    }
}

// Recursive partial contraction; see projector_expectations.
std::vector<Complex> contract_block(const ComplexMatrix& m, const ProjectorBasis& basis,
                                    Eigen::Index r0, Eigen::Index c0, Eigen::Index size) {
    if (size == 1) {
        return {m(r0, c0)};
    }
    const Eigen::Index half = size / 2;
    std::array<std::vector<Complex>, 4> sub;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            sub[static_cast<std::size_t>(2 * i + j)] =
                contract_block(m, basis, r0 + i * half, c0 + j * half, half);
        }
    }
    const std::size_t inner = sub[0].size();
    std::vector<Complex> out(4 * inner, Complex(0.0, 0.0));
    for (std::size_t a = 0; a < 4; ++a) {
        const ComplexMatrix& p = basis.projectors[a];
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                // Tr{(P x Q) rho} = sum_ij P(j,i) Tr{Q rho_ij}
                const Complex w = p(j, i);
                if (w == Complex(0.0, 0.0)) {
                    continue;
                }
                const std::vector<Complex>& s = sub[static_cast<std::size_t>(2 * i + j)];
                for (std::size_t k = 0; k < inner; ++k) {
                    out[a * inner + k] += w * s[k];
                }
            }
        }
    }
    return out;
}

bool lexicographically_larger(const ComplexMatrix& vecs, Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index i = 0; i < vecs.rows(); ++i) {
        const double x = std::abs(vecs(i, a));
        const double y = std::abs(vecs(i, b));
        if (x > y + 1e-12) {
            return true;
        }
        if (y > x + 1e-12) {
            return false;
        }
    }
    return false;
}

}  // namespace

void MeasurementRecord::validate() const {
    if (qubits < 1 || qubits > 15) {
        std::ostringstream os;
        os << "measurement record: qubit count " << qubits << " out of range [1, 15]";
        throw std::invalid_argument(os.str());
    }
    if (!(shots > 0.0)) {
        throw std::invalid_argument("measurement record: shots must be positive");
    }
    if (counts.size() != pow4(qubits)) {
        std::ostringstream os;
        os << "measurement record: expected " << pow4(qubits) << " counts, got " << counts.size();
        throw std::invalid_argument(os.str());
    }
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (!(counts[k] >= 0.0) || !std::isfinite(counts[k])) {
            std::ostringstream os;
            os << "measurement record: count for projector " << base4_string(k, qubits)
               << " is " << counts[k] << ", expected a finite value >= 0";
            throw std::invalid_argument(os.str());
        }
    }
}

BetaMatrix beta_matrix(const ProjectorBasis& basis) {
    BetaMatrix out;
    for (int nu = 0; nu < 4; ++nu) {
        for (int mu = 0; mu < 4; ++mu) {
            const Complex tr = trace_product(basis.projectors[static_cast<std::size_t>(nu)], pauli(mu));
            if (std::abs(tr.imag()) > 1e-12) {
                throw std::invalid_argument("beta_matrix: Tr{Pi sigma} has a nonzero imaginary part");
            }
            out.beta(nu, mu) = tr.real();
        }
    }
    const double det = out.beta.determinant();
    if (std::abs(det) < 1e-10) {
        std::ostringstream os;
        os << "beta_matrix: singular (det " << det << "); the basis is informationally incomplete";
        throw std::invalid_argument(os.str());
    }
    out.beta_inverse = out.beta.inverse();
    return out;
}

double b_inverse_element(std::uint64_t nu, std::uint64_t mu, const BetaMatrix& beta, int n) {
    if (n < 1 || nu >= pow4(n) || mu >= pow4(n)) {
        std::ostringstream os;
        os << "b_inverse_element: indices (" << nu << ", " << mu << ") out of range for " << n
           << " qubits";
        throw std::out_of_range(os.str());
    }
    double value = 1.0;
    for (int k = 0; k < n; ++k) {
        value *= beta.beta_inverse(static_cast<int>(nu & 3u), static_cast<int>(mu & 3u));
        nu >>= 2;
        mu >>= 2;
    }
    return value;
}

ProjectorCache::ProjectorCache(ProjectorBasis basis, int n, int prefix_depth, MemoryBudget budget)
    : basis_(std::move(basis)), n_(n), depth_(prefix_depth < 0 ? std::min(n, 5) : prefix_depth),
      budget_(budget) {
    basis_.validate();
    if (n < 1) {
        throw std::invalid_argument("ProjectorCache: need at least one qubit");
    }
    depth_ = std::clamp(depth_, 1, n);
    const std::uint64_t count = pow4(depth_);
    const std::uint64_t dim = pow2(depth_);
    const std::size_t per = MemoryBudget::complex_matrix_bytes(dim, dim);
    budget_.check(static_cast<std::size_t>(count) * per, "projector prefix cache");
    prefixes_.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t p = 0; p < count; ++p) {
        prefixes_.push_back(qtomo::projector(p, basis_, depth_, budget_));
    }
}

std::size_t ProjectorCache::cached_bytes() const {
    std::size_t total = 0;
    for (const auto& m : prefixes_) {
        total += static_cast<std::size_t>(m.size()) * sizeof(Complex);
    }
    return total;
}

ComplexMatrix ProjectorCache::projector(std::uint64_t nu) const {
    if (nu >= pow4(n_)) {
        throw std::out_of_range("ProjectorCache::projector: index out of range");
    }
    const int rest = n_ - depth_;
    const std::uint64_t head = nu >> (2 * rest);
    if (rest == 0) {
        return prefixes_[static_cast<std::size_t>(head)];
    }
    const std::uint64_t dim = pow2(n_);
    budget_.check(MemoryBudget::complex_matrix_bytes(dim, dim), "projector");
    ComplexMatrix out = prefixes_[static_cast<std::size_t>(head)];
    const std::vector<int> digits = base4_digits(nu, n_);
    for (int k = depth_; k < n_; ++k) {
        out = kron(out, basis_.projectors[static_cast<std::size_t>(digits[static_cast<std::size_t>(k)])],
                   budget_);
    }
    return out;
}

std::vector<Complex> projector_expectations(const ComplexMatrix& m, const ProjectorBasis& basis) {
    if (m.rows() != m.cols() || m.rows() < 2 || (m.rows() & (m.rows() - 1)) != 0) {
        throw std::invalid_argument("projector_expectations: expected a 2^n x 2^n matrix");
    }
    return contract_block(m, basis, 0, 0, m.rows());
}

MeasurementRecord expected_counts(const DensityMatrix& rho, double shots,
                                  const ProjectorBasis& basis) {
    if (!(shots > 0.0)) {
        throw std::invalid_argument("expected_counts: shots must be positive");
    }
    basis.validate();
    const std::vector<Complex> probs = projector_expectations(rho.matrix, basis);
    MeasurementRecord rec;
    rec.qubits = rho.qubits;
    rec.shots = shots;
    rec.counts.resize(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
        // Tr{Pi rho} lies in [0, 1] for physical rho; clip round-off only.
        rec.counts[k] = shots * std::clamp(probs[k].real(), 0.0, 1.0);
    }
    return rec;
}

DensityMatrix linear_reconstruct(const MeasurementRecord& record, const ProjectorBasis& basis,
                                 const MemoryBudget& budget, AllocationStats* stats) {
    record.validate();
    basis.validate();
    const int n = record.qubits;
    const std::uint64_t count = pow4(n);
    const std::uint64_t dim = pow2(n);
    budget.check(MemoryBudget::complex_matrix_bytes(dim, dim), "linear_reconstruct output");

    const BetaMatrix beta = beta_matrix(basis);
    TrackedAllocator<double> dalloc(stats);
    TrackedAllocator<int> ialloc(stats);

    // Pauli-string coefficients c = shots^-1 B^-1 n. Row p of B^-1 is walked
    // with an odometer over the column digits so each element costs O(1)
    // amortized: prefix[k] holds the product of the first k digit factors.
    TrackedVector<double> coeff(count, 0.0, dalloc);
    TrackedVector<int> row_digits(static_cast<std::size_t>(n), 0, ialloc);
    TrackedVector<int> col_digits(static_cast<std::size_t>(n), 0, ialloc);
    TrackedVector<double> prefix(static_cast<std::size_t>(n) + 1, 1.0, dalloc);

    const auto& binv = beta.beta_inverse;
    for (std::uint64_t p = 0; p < count; ++p) {
        std::uint64_t rem = p;
        for (int k = n - 1; k >= 0; --k) {
            row_digits[static_cast<std::size_t>(k)] = static_cast<int>(rem & 3u);
            rem >>= 2;
        }
        std::fill(col_digits.begin(), col_digits.end(), 0);
        prefix[0] = 1.0;
        for (int k = 0; k < n; ++k) {
            prefix[static_cast<std::size_t>(k) + 1] =
                prefix[static_cast<std::size_t>(k)] * binv(row_digits[static_cast<std::size_t>(k)], 0);
        }
        double acc = 0.0;
        for (std::uint64_t q = 0;;) {
            acc += prefix[static_cast<std::size_t>(n)] * record.counts[q];
            if (++q == count) {
                break;
            }
            // advance the column odometer; `k` is the most significant changed digit
            int k = n - 1;
            while (col_digits[static_cast<std::size_t>(k)] == 3) {
                col_digits[static_cast<std::size_t>(k)] = 0;
                --k;
            }
            ++col_digits[static_cast<std::size_t>(k)];
            for (int j = k; j < n; ++j) {
                const auto uj = static_cast<std::size_t>(j);
                prefix[uj + 1] = prefix[uj] * binv(row_digits[uj], col_digits[uj]);
            }
        }
        coeff[p] = acc / record.shots;
    }

    ComplexMatrix rho = ComplexMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::uint64_t p = 0; p < count; ++p) {
        if (coeff[p] != 0.0) {
            add_pauli_string(rho, p, n, Complex(coeff[p], 0.0));
        }
    }
    // Noisy counts do not conserve Tr{rho}; normalize to unit trace.
    const double tr = rho.trace().real();
    if (!(tr > 0.0)) {
        throw NonPhysicalState("linear_reconstruct: reconstructed trace is not positive");
    }
    rho /= tr;
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return DensityMatrix{n, std::move(rho)};
}

DensityMatrix quick_and_dirty(const DensityMatrix& rho_linear) {
    const EigenDecomposition eig = hermitian_eig(rho_linear.matrix);
    const RealVector clipped = eig.eigenvalues.cwiseMax(0.0);
    const double total = clipped.sum();
    if (!(total > 0.0)) {
        throw NonPhysicalState("quick_and_dirty: no positive eigenvalue to renormalize");
    }
    ComplexMatrix rho = eig.eigenvectors * (clipped / total).asDiagonal() * eig.eigenvectors.adjoint();
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return DensityMatrix{rho_linear.qubits, std::move(rho)};
}

DensityMatrix forced_purity(const DensityMatrix& rho_linear, RepairDiagnostics* diag) {
    const EigenDecomposition eig = hermitian_eig(rho_linear.matrix);
    const Eigen::Index last = eig.eigenvalues.size() - 1;
    const double top = eig.eigenvalues(last);
    Eigen::Index chosen = last;
    int tied = 1;
    for (Eigen::Index k = last - 1; k >= 0 && top - eig.eigenvalues(k) <= 1e-12; --k) {
        ++tied;
        if (lexicographically_larger(eig.eigenvectors, k, chosen)) {
            chosen = k;
        }
    }
    if (tied > 1) {
        std::ostringstream os;
        os << "forced_purity: largest eigenvalue " << top << " is " << tied
           << "-fold degenerate; picked eigenvector " << chosen;
        if (diag) {
            diag->eigenvalue_tie = true;
            diag->warning = os.str();
        } else {
            std::cerr << "warning: " << os.str() << '\n';
        }
    }
    const ComplexMatrix v = eig.eigenvectors.col(chosen);
    ComplexMatrix rho = v * v.adjoint();
    rho /= rho.trace().real();
    return DensityMatrix{rho_linear.qubits, std::move(rho)};
}

void write_counts(std::ostream& os, const MeasurementRecord& record) {
    record.validate();
    os << "qubits=" << record.qubits << ",shots=" << format_number(record.shots) << '\n';
    for (std::size_t k = 0; k < record.counts.size(); ++k) {
        os << base4_string(k, record.qubits) << ',' << format_number(record.counts[k]) << '\n';
    }
}

MeasurementRecord read_counts(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) {
        throw std::invalid_argument("counts line 1: missing header 'qubits=<n>,shots=<N>'");
    }
    const std::size_t comma = line.find(',');
    if (line.rfind("qubits=", 0) != 0 || comma == std::string::npos ||
        line.compare(comma + 1, 6, "shots=") != 0) {
        throw std::invalid_argument("counts line 1: expected header 'qubits=<n>,shots=<N>', got '" +
                                    line + "'");
    }
    MeasurementRecord rec;
    const double qubits = parse_number(line.substr(7, comma - 7), 1, "qubit count");
    if (qubits != std::floor(qubits) || qubits < 1 || qubits > 15) {
        throw std::invalid_argument("counts line 1: qubit count must be an integer in [1, 15]");
    }
    rec.qubits = static_cast<int>(qubits);
    rec.shots = parse_number(line.substr(comma + 7), 1, "shot count");
    const std::uint64_t expected = pow4(rec.qubits);
    rec.counts.reserve(static_cast<std::size_t>(expected));

    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::uint64_t nu = rec.counts.size();
        if (nu >= expected) {
            std::ostringstream os;
            os << "counts line " << line_no << ": more than the expected " << expected
               << " projector lines (4^" << rec.qubits << ")";
            throw std::invalid_argument(os.str());
        }
        const std::size_t sep = line.find(',');
        if (sep == std::string::npos) {
            std::ostringstream os;
            os << "counts line " << line_no << ": expected '<nu>,<count>'";
            throw std::invalid_argument(os.str());
        }
        const std::string label = line.substr(0, sep);
        if (label != base4_string(nu, rec.qubits)) {
            std::ostringstream os;
            os << "counts line " << line_no << ": expected projector label "
               << base4_string(nu, rec.qubits) << ", got '" << label << "'";
            throw std::invalid_argument(os.str());
        }
        rec.counts.push_back(parse_number(line.substr(sep + 1), line_no, "count"));
    }
    if (rec.counts.size() != expected) {
        std::ostringstream os;
        os << "counts file: expected " << expected << " projector lines (4^" << rec.qubits
           << "), found " << rec.counts.size();
        throw std::invalid_argument(os.str());
    }
    rec.validate();
    return rec;
}

void save_counts(const std::string& path, const MeasurementRecord& record) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    write_counts(out, record);
}

MeasurementRecord load_counts(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return read_counts(in);
}

}  // namespace qtomo
