#include "qtomo/state_model.hpp"

#include <random>
#include <sstream>

#include "gtest/gtest.h"

#include "test_support.hpp"

using namespace qtomo;
using qtomo::testing::pure_state;
using qtomo::testing::random_state;

namespace {

const Complex I1(0.0, 1.0);

DensityMatrix diag_state(std::initializer_list<double> entries) {
    const auto d = static_cast<Eigen::Index>(entries.size());
    ComplexMatrix m = ComplexMatrix::Zero(d, d);
    Eigen::Index k = 0;
    for (double e : entries) {
        m(k, k) = e;
        ++k;
    }
    int n = 0;
    while ((Eigen::Index{1} << n) < d) ++n;
    return DensityMatrix{n, m};
}

CholeskyParams random_params(int n, std::mt19937_64& gen) {
    std::normal_distribution<double> g(0.0, 1.0);
    RealVector t(static_cast<Eigen::Index>(pow4(n)));
    for (Eigen::Index k = 0; k < t.size(); ++k) t(k) = g(gen);
    return CholeskyParams(n, t);
}

}  // namespace

TEST(state_model, base4_digits) {
    EXPECT_EQ(base4_string(33, 4), "0201");
    EXPECT_EQ(base4_digits(33, 4), (std::vector<int>{0, 2, 0, 1}));
    EXPECT_EQ(base4_string(0, 3), "000");
    EXPECT_EQ(pow4(3), 64u);
    EXPECT_EQ(pow2(5), 32u);
}

TEST(state_model, gamma_single_qubit_identity) {
    const ComplexMatrix g = gamma_operator(0, 1);
    EXPECT_LE((g - ComplexMatrix::Identity(2, 2) / std::sqrt(2.0)).norm(), 1e-15);
}

TEST(state_model, gamma_four_qubits_index_33) {
    // 33 = 0201 in base 4
    const ComplexMatrix expected =
        0.25 * kron(kron(kron(pauli(0), pauli(2)), pauli(0)), pauli(1));
    EXPECT_LE((gamma_operator(33, 4) - expected).norm(), 1e-15);
}

TEST(state_model, gamma_orthonormal_exhaustive) {
    for (int n = 1; n <= 3; ++n) {
        const std::uint64_t count = pow4(n);
        std::vector<ComplexMatrix> g;
        for (std::uint64_t mu = 0; mu < count; ++mu) g.push_back(gamma_operator(mu, n));
        for (std::uint64_t a = 0; a < count; ++a) {
            for (std::uint64_t b = 0; b < count; ++b) {
                const Complex tp = trace_product(g[a], g[b]);
                EXPECT_NEAR(std::abs(tp - Complex(a == b ? 1.0 : 0.0)), 0.0, 1e-12)
                    << "n=" << n << " a=" << a << " b=" << b;
            }
        }
    }
}

TEST(state_model, gamma_out_of_range) {
    EXPECT_THROW(gamma_operator(4, 1), std::out_of_range);
    EXPECT_THROW(projector(16, ProjectorBasis::stokes(), 2), std::out_of_range);
}

TEST(state_model, add_pauli_string_matches_kron) {
    for (int n = 1; n <= 3; ++n) {
        const auto d = static_cast<Eigen::Index>(pow2(n));
        for (std::uint64_t mu = 0; mu < pow4(n); ++mu) {
            ComplexMatrix acc = ComplexMatrix::Zero(d, d);
            add_pauli_string(acc, mu, n, Complex(0.5, -0.25));
            const ComplexMatrix expected =
                Complex(0.5, -0.25) * std::sqrt(static_cast<double>(d)) * gamma_operator(mu, n);
            EXPECT_LE((acc - expected).norm(), 1e-13);
        }
    }
}

TEST(state_model, stokes_projectors) {
    const ProjectorBasis b = ProjectorBasis::stokes();
    EXPECT_NO_THROW(b.validate());
    ComplexMatrix zero = ComplexMatrix::Zero(2, 2);
    zero(0, 0) = 1.0;
    EXPECT_LE((projector(1, b, 1) - zero).norm(), 1e-15);

    ComplexMatrix r(2, 2);
    r << 0.5, 0.5 * I1, -0.5 * I1, 0.5;
    EXPECT_LE((projector(3, b, 1) - r).norm(), 1e-15);

    ComplexMatrix zz = ComplexMatrix::Zero(4, 4);
    zz(0, 0) = 1.0;
    EXPECT_LE((projector(5, b, 2) - zz).norm(), 1e-15);
}

TEST(state_model, projector_basis_validation_rejects_bad_sets) {
    ProjectorBasis b = ProjectorBasis::stokes();
    b.projectors[0] = ComplexMatrix::Identity(2, 2);
    EXPECT_THROW(b.validate(), std::invalid_argument);
    b = ProjectorBasis::stokes();
    b.projectors[2] = 2.0 * b.projectors[2];
    EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(state_model, projector_respects_budget) {
    EXPECT_THROW(projector(0, ProjectorBasis::stokes(), 6, MemoryBudget{1000}),
                 MemoryBudgetExceeded);
}

TEST(state_model, rho_from_cholesky_examples) {
    ComplexMatrix m = rho_from_cholesky(CholeskyParams(1, Eigen::Vector4d(1, 0, 0, 0))).matrix;
    EXPECT_LE((m - diag_state({1.0, 0.0}).matrix).norm(), 1e-15);

    m = rho_from_cholesky(CholeskyParams(1, Eigen::Vector4d(1, 1, 0, 0))).matrix;
    EXPECT_LE((m - diag_state({0.5, 0.5}).matrix).norm(), 1e-15);

    // T = [[1,0],[1+i,1]]: T^dag T = [[3, 1-i],[1+i, 1]], trace = sum t^2 = 4
    ComplexMatrix expected(2, 2);
    expected << 3.0, Complex(1, -1), Complex(1, 1), 1.0;
    expected /= 4.0;
    m = rho_from_cholesky(CholeskyParams(1, Eigen::Vector4d(1, 1, 1, 1))).matrix;
    EXPECT_LE((m - expected).norm(), 1e-15);
}

TEST(state_model, rho_from_cholesky_trace_identity) {
    std::mt19937_64 gen(17);
    for (int n = 1; n <= 3; ++n) {
        const CholeskyParams p = random_params(n, gen);
        const ComplexMatrix t = cholesky_factor(p);
        EXPECT_NEAR((t.adjoint() * t).trace().real(), p.t.squaredNorm(), 1e-10);
        EXPECT_TRUE(t.isLowerTriangular());
    }
}

TEST(state_model, rho_from_cholesky_rejects_zero_and_bad_length) {
    EXPECT_THROW(rho_from_cholesky(CholeskyParams(1, RealVector::Zero(4))), std::invalid_argument);
    EXPECT_THROW(CholeskyParams(2, RealVector::Zero(4)), std::invalid_argument);
}

TEST(state_model, rho_from_cholesky_always_physical) {
    std::mt19937_64 gen(19);
    for (int n = 1; n <= 3; ++n) {
        for (int trial = 0; trial < 100; ++trial) {
            const DensityMatrix rho = rho_from_cholesky(random_params(n, gen));
            EXPECT_TRUE(is_physical(rho)) << "n=" << n;
            EXPECT_LE(hermiticity_error(rho.matrix), 1e-10);
            EXPECT_NEAR(rho.matrix.trace().real(), 1.0, 1e-10);
            const double s = linear_entropy(rho);
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, 1.0);
        }
    }
}

TEST(state_model, cholesky_layout_bijective) {
    for (int n = 1; n <= 3; ++n) {
        const auto layout = cholesky_layout(n);
        ASSERT_EQ(layout.size(), pow4(n));
        const auto d = static_cast<Eigen::Index>(pow2(n));
        for (Eigen::Index k = 0; k < d; ++k) {
            EXPECT_EQ(layout[k].row, k);
            EXPECT_EQ(layout[k].col, k);
            EXPECT_FALSE(layout[k].imaginary);
        }
        std::mt19937_64 gen(n);
        const CholeskyParams p = random_params(n, gen);
        EXPECT_LE((read_cholesky_slots(cholesky_factor(p), n) - p.t).norm(), 0.0);
    }
}

TEST(state_model, cholesky_params_of_pure_state) {
    const DensityMatrix rho = diag_state({1.0, 0.0});
    const double jitter = 1e-9;
    const CholeskyParams p = cholesky_params_of(rho, jitter);
    const ComplexMatrix target =
        (rho.matrix + jitter * ComplexMatrix::Identity(2, 2)) / (1.0 + 2.0 * jitter);
    EXPECT_LE((rho_from_cholesky(p).matrix - target).norm(), 1e-8);
    EXPECT_GT(std::abs(p.t(0)), 0.99 * p.t.cwiseAbs().maxCoeff());
    EXPECT_NEAR(std::abs(p.t(1)) / std::abs(p.t(0)), std::sqrt(jitter), 1e-6);
}

TEST(state_model, cholesky_params_of_maximally_mixed) {
    DensityMatrix rho{2, ComplexMatrix::Identity(4, 4) / 4.0};
    EXPECT_GE(fidelity(rho_from_cholesky(cholesky_params_of(rho)), rho), 1.0 - 1e-8);
}

TEST(state_model, cholesky_params_of_round_trip_random) {
    for (int trial = 0; trial < 20; ++trial) {
        const DensityMatrix rho = random_state(3, trial);
        const double jitter = 1e-9;
        const ComplexMatrix target =
            (rho.matrix + jitter * ComplexMatrix::Identity(8, 8)) / (1.0 + 8.0 * jitter);
        const CholeskyParams p = cholesky_params_of(rho, jitter);
        EXPECT_LE((rho_from_cholesky(p).matrix - target).norm(), 1e-8);
    }
}

TEST(state_model, cholesky_params_of_rejects_negative_matrix) {
    DensityMatrix bad{1, diag_state({1.5, -0.5}).matrix};
    EXPECT_THROW(cholesky_params_of(bad), NonPhysicalState);
}

TEST(state_model, fidelity_examples) {
    const DensityMatrix zero = diag_state({1.0, 0.0});
    const DensityMatrix one = diag_state({0.0, 1.0});
    const DensityMatrix mixed = diag_state({0.5, 0.5});
    EXPECT_NEAR(fidelity(zero, zero), 1.0, 1e-12);
    EXPECT_NEAR(fidelity(zero, one), 0.0, 1e-12);
    EXPECT_NEAR(fidelity(zero, mixed), 0.5, 1e-12);
    const DensityMatrix r = random_state(2, 5);
    EXPECT_NEAR(fidelity(r, r), 1.0, 1e-9);
}

TEST(state_model, fidelity_symmetric_and_bounded) {
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + trial % 3;
        const DensityMatrix a = random_state(n, 100 + trial);
        const DensityMatrix b = random_state(n, 200 + trial);
        const double fab = fidelity(a, b);
        EXPECT_NEAR(fab, fidelity(b, a), 1e-9);
        EXPECT_GE(fab, 0.0);
        EXPECT_LE(fab, 1.0);
    }
}

TEST(state_model, fidelity_pure_overlap_oracle) {
    // F(|a><a|, |b><b|) = |<a|b>|^2
    std::mt19937_64 gen(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXcd a = qtomo::testing::random_complex(4, 1, gen);
        const Eigen::VectorXcd b = qtomo::testing::random_complex(4, 1, gen);
        const double overlap = std::norm(a.normalized().dot(b.normalized()));
        EXPECT_NEAR(fidelity(pure_state(a), pure_state(b)), overlap, 1e-7);
    }
}

TEST(state_model, fidelity_rejects_non_positive) {
    const DensityMatrix bad = diag_state({1.2, -0.2});
    EXPECT_THROW(fidelity(bad, diag_state({0.5, 0.5})), NonPhysicalState);
}

TEST(state_model, linear_entropy_examples) {
    EXPECT_NEAR(linear_entropy(diag_state({1.0, 0.0, 0.0, 0.0})), 0.0, 1e-14);
    EXPECT_NEAR(linear_entropy(diag_state({0.25, 0.25, 0.25, 0.25})), 1.0, 1e-14);
    EXPECT_NEAR(linear_entropy(diag_state({0.75, 0.25})), 0.75, 1e-14);
}

TEST(state_model, linear_entropy_monotone_in_impurity) {
    double previous = -1.0;
    for (int k = 0; k <= 10; ++k) {
        const double p = 1.0 - 0.05 * k;  // 1 -> 0.5
        const double s = linear_entropy(diag_state({p, 1.0 - p}));
        EXPECT_GT(s, previous);
        previous = s;
    }
}

TEST(state_model, tangle_examples) {
    Eigen::VectorXcd bell = Eigen::VectorXcd::Zero(4);
    bell(0) = 1.0;
    bell(3) = 1.0;
    EXPECT_NEAR(tangle(pure_state(bell)), 1.0, 1e-9);

    Eigen::VectorXcd a(2), b(2);
    a << Complex(0.3, 0.1), Complex(-0.7, 0.2);
    b << Complex(0.5, -0.4), Complex(0.1, 0.9);
    Eigen::VectorXcd ab(4);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) ab(2 * i + j) = a(i) * b(j);
    EXPECT_NEAR(tangle(pure_state(ab)), 0.0, 1e-9);

    EXPECT_NEAR(tangle(diag_state({0.25, 0.25, 0.25, 0.25})), 0.0, 1e-12);
}

TEST(state_model, tangle_pure_state_concurrence_oracle) {
    // For a pure two-qubit ket, C = 2 |a00 a11 - a01 a10|.
    std::mt19937_64 gen(29);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXcd v = qtomo::testing::random_complex(4, 1, gen).normalized();
        const double c = 2.0 * std::abs(v(0) * v(3) - v(1) * v(2));
        EXPECT_NEAR(tangle(pure_state(v)), c * c, 1e-7);
    }
}

TEST(state_model, tangle_separable_mixtures_vanish) {
    std::mt19937_64 gen(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        ComplexMatrix m = ComplexMatrix::Zero(4, 4);
        double total = 0.0;
        for (int k = 0; k < 3; ++k) {
            const Eigen::VectorXcd a = qtomo::testing::random_complex(2, 1, gen).normalized();
            const Eigen::VectorXcd b = qtomo::testing::random_complex(2, 1, gen).normalized();
            const ComplexMatrix pa = a * a.adjoint();
            const ComplexMatrix pb = b * b.adjoint();
            const double w = u(gen);
            m += w * kron(pa, pb);
            total += w;
        }
        EXPECT_LE(tangle(DensityMatrix{2, m / total}), 1e-8);
    }
}

TEST(state_model, tangle_requires_two_qubits) {
    EXPECT_THROW(tangle(diag_state({0.5, 0.5})), std::invalid_argument);
}

TEST(state_model, compute_metrics_fields) {
    const DensityMatrix a = random_state(2, 41);
    const StateMetrics m = compute_metrics(a, a);
    EXPECT_NEAR(m.fidelity, 1.0, 1e-9);
    ASSERT_TRUE(m.tangle.has_value());
    EXPECT_FALSE(compute_metrics(random_state(3, 1), random_state(3, 1)).tangle.has_value());
}

TEST(state_model, from_matrix_validates) {
    EXPECT_NO_THROW(DensityMatrix::from_matrix(ComplexMatrix::Identity(2, 2) / 2.0));
    EXPECT_THROW(DensityMatrix::from_matrix(ComplexMatrix::Identity(2, 2)), std::invalid_argument);
    EXPECT_THROW(DensityMatrix::from_matrix(ComplexMatrix::Identity(3, 3) / 3.0),
                 std::invalid_argument);
}

TEST(state_model, density_serialization_round_trip) {
    const DensityMatrix rho = random_state(2, 77);
    std::stringstream ss;
    write_density(ss, rho);
    const std::string text = ss.str();
    EXPECT_EQ(text.rfind("n=2\n", 0), 0u);
    const DensityMatrix back = read_density(ss);
    EXPECT_EQ(back.qubits, 2);
    EXPECT_EQ(back.matrix, rho.matrix);  // 17 digits are exact for doubles
}

TEST(state_model, density_parse_errors) {
    std::istringstream missing_header("1+0j,0+0j\n0+0j,0+0j\n");
    EXPECT_THROW(read_density(missing_header), std::invalid_argument);
    std::istringstream short_row("n=1\n1+0j\n0+0j,0+0j\n");
    EXPECT_THROW(read_density(short_row), std::invalid_argument);
    std::istringstream short_file("n=1\n1+0j,0+0j\n");
    EXPECT_THROW(read_density(short_file), std::invalid_argument);
}
