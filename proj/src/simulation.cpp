#include "qtomo/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace qtomo {

namespace {

void check_unit_interval(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
        std::ostringstream os;
        os << name << " = " << v << " outside [0, 1]";
        throw std::invalid_argument(os.str());
    }
}

// corner-supported pure state a|0...0> + b|1...1>
DensityMatrix two_corner_pure(int n, double a, double b) {
    const auto d = static_cast<Eigen::Index>(pow2(n));
    ComplexMatrix m = ComplexMatrix::Zero(d, d);
    m(0, 0) = a * a;
    m(0, d - 1) = a * b;
    m(d - 1, 0) = a * b;
    m(d - 1, d - 1) += b * b;
    return DensityMatrix{n, std::move(m)};
}

}  // namespace

std::string to_string(StateFamily family) {
    switch (family) {
        case StateFamily::Ghz: return "ghz";
        case StateFamily::Werner: return "werner";
        case StateFamily::Mems: return "mems";
        case StateFamily::TangleBiased: return "tangle_biased";
        case StateFamily::Random: return "random";
        case StateFamily::File: return "file";
    }
    return "unknown";
}

StateFamily parse_state_family(const std::string& name) {
    for (StateFamily f : {StateFamily::Ghz, StateFamily::Werner, StateFamily::Mems,
                          StateFamily::TangleBiased, StateFamily::Random, StateFamily::File}) {
        if (to_string(f) == name) {
            return f;
        }
    }
    throw std::invalid_argument("unknown state family '" + name +
                                "' (expected ghz, werner, mems, tangle_biased, random or file)");
}

void StateFamilySpec::validate() const {
    if (qubits < 1 || qubits > 15) {
        throw std::invalid_argument("state family: qubit count must be in [1, 15]");
    }
    switch (family) {
        case StateFamily::Ghz:
        case StateFamily::Werner:
            check_unit_interval(epsilon, "epsilon");
            break;
        case StateFamily::Mems:
            if (qubits != 2) {
                throw std::invalid_argument("state family: mems is a two-qubit family");
            }
            check_unit_interval(epsilon, "epsilon");
            check_unit_interval(gamma, "gamma");
            break;
        case StateFamily::TangleBiased:
            check_unit_interval(epsilon, "epsilon");
            if (!(delta >= 0.0 && delta <= std::sqrt(0.5) + 1e-15)) {
                throw std::invalid_argument("state family: delta must lie in [0, 1/sqrt2]");
            }
            break;
        case StateFamily::Random:
            break;
        case StateFamily::File:
            if (path.empty()) {
                throw std::invalid_argument("state family: file family needs a density matrix path");
            }
            break;
    }
}

DensityMatrix random_density(int n, RngStream& rng) {
    const auto d = static_cast<Eigen::Index>(pow2(n));
    ComplexMatrix r(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const double re = rng.uniform(-1.0, 1.0);
            const double im = rng.uniform(-1.0, 1.0);
            r(i, j) = Complex(re, im);
        }
    }
    ComplexMatrix rho = r.adjoint() * r;
    rho /= rho.trace().real();
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return DensityMatrix{n, std::move(rho)};
}

DensityMatrix ghz_state(int n) {
    if (n < 1) {
        throw std::invalid_argument("ghz_state: need at least one qubit");
    }
    const double h = std::sqrt(0.5);
    return two_corner_pure(n, h, h);
}

DensityMatrix werner_state(int n, double epsilon) {
    check_unit_interval(epsilon, "werner_state: epsilon");
    DensityMatrix ghz = ghz_state(n);
    const auto d = ghz.dim();
    ghz.matrix = epsilon * ghz.matrix +
                 (1.0 - epsilon) / static_cast<double>(d) * ComplexMatrix::Identity(d, d);
    return ghz;
}

DensityMatrix mems_state(double gamma) {
    check_unit_interval(gamma, "mems_state: gamma");
    const double g = gamma >= 2.0 / 3.0 ? gamma / 2.0 : 1.0 / 3.0;
    ComplexMatrix m = ComplexMatrix::Zero(4, 4);
    m(0, 0) = g;
    m(0, 3) = gamma / 2.0;
    m(1, 1) = 1.0 - 2.0 * g;
    m(3, 0) = gamma / 2.0;
    m(3, 3) = g;
    return DensityMatrix{2, std::move(m)};
}

DensityMatrix tangle_biased_pure(double delta, int n) {
    if (!(delta >= 0.0 && delta <= std::sqrt(0.5) + 1e-15)) {
        std::ostringstream os;
        os << "tangle_biased_pure: delta = " << delta << " outside [0, 1/sqrt2]";
        throw std::invalid_argument(os.str());
    }
    if (n < 2) {
        throw std::invalid_argument("tangle_biased_pure: need at least two qubits");
    }
    const double d2 = std::min(delta * delta, 0.5);
    return two_corner_pure(n, std::sqrt(1.0 - d2), std::sqrt(d2));
}

double delta_for_tangle(double tau) {
    check_unit_interval(tau, "delta_for_tangle: tau");
    // tau = 4 d^2 (1 - d^2)  =>  d^2 = (1 - sqrt(1 - tau)) / 2
    return std::sqrt(0.5 * (1.0 - std::sqrt(1.0 - tau)));
}

DensityMatrix make_physical(const DensityMatrix& theory, double epsilon, RngStream& rng) {
    check_unit_interval(epsilon, "make_physical: epsilon");
    const DensityMatrix random = random_density(theory.qubits, rng);
    return DensityMatrix{theory.qubits, (1.0 - epsilon) * theory.matrix + epsilon * random.matrix};
}

DensityMatrix trial_mixture(const DensityMatrix& structured, double epsilon, RngStream& rng) {
    check_unit_interval(epsilon, "trial_mixture: epsilon");
    const double w = epsilon * epsilon;
    const DensityMatrix random = random_density(structured.qubits, rng);
    return DensityMatrix{structured.qubits, w * random.matrix + (1.0 - w) * structured.matrix};
}

std::uint64_t poisson_sample(double lambda, RngStream& rng) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("poisson_sample: lambda must be finite and >= 0");
    }
    if (lambda == 0.0) {
        return 0;
    }
    if (lambda < 10.0) {
        // probability integral transform on the cumulative distribution
        const double u = rng.uniform();
        double p = std::exp(-lambda);
        double cdf = p;
        std::uint64_t k = 0;
        while (u > cdf && k < 1000) {
            ++k;
            p *= lambda / static_cast<double>(k);
            cdf += p;
        }
        return k;
    }
    // Hormann (1993), transformed rejection with squeeze
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    while (true) {
        const double u = rng.uniform() - 0.5;
        const double v = rng.uniform();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= vr) {
            return static_cast<std::uint64_t>(k);
        }
        if (k < 0.0 || (us < 0.013 && v > us)) {
            continue;
        }
        if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
            -lambda + k * loglam - std::lgamma(k + 1.0)) {
            return static_cast<std::uint64_t>(k);
        }
    }
}

MeasurementRecord simulate_counts(const DensityMatrix& rho, double shots,
                                  const ProjectorBasis& basis, RngStream& rng, NoiseMode mode) {
    MeasurementRecord rec = expected_counts(rho, shots, basis);
    if (mode == NoiseMode::Poisson) {
        for (double& c : rec.counts) {
            c = static_cast<double>(poisson_sample(c, rng));
        }
    }
    return rec;
}

DensityMatrix build_state(const StateFamilySpec& spec, RngStream& rng) {
    spec.validate();
    switch (spec.family) {
        case StateFamily::Ghz: return make_physical(ghz_state(spec.qubits), spec.epsilon, rng);
        case StateFamily::Werner: return werner_state(spec.qubits, spec.epsilon);
        case StateFamily::Mems: return trial_mixture(mems_state(spec.gamma), spec.epsilon, rng);
        case StateFamily::TangleBiased:
            return trial_mixture(tangle_biased_pure(spec.delta, spec.qubits), spec.epsilon, rng);
        case StateFamily::Random: return random_density(spec.qubits, rng);
        case StateFamily::File: {
            DensityMatrix rho = load_density(spec.path);
            if (rho.qubits != spec.qubits) {
                std::ostringstream os;
                os << "state file " << spec.path << " holds " << rho.qubits << " qubits, expected "
                   << spec.qubits;
                throw std::invalid_argument(os.str());
            }
            return rho;
        }
    }
    throw std::logic_error("build_state: unhandled family");
}

std::string simulation_metadata_json(const StateFamilySpec& spec, double shots,
                                     const RngStream& rng, NoiseMode mode) {
    nlohmann::json j;
    j["generator_version"] = std::string(kGeneratorVersion);
    j["rng_algorithm"] = std::string(RngStream::kAlgorithm);
    j["seed"] = rng.seed();
    j["stream"] = rng.stream_id();
    j["family"] = to_string(spec.family);
    j["qubits"] = spec.qubits;
    j["epsilon"] = spec.epsilon;
    j["delta"] = spec.delta;
    j["gamma"] = spec.gamma;
    if (spec.family == StateFamily::File) {
        j["path"] = spec.path;
    }
    j["shots"] = shots;
    j["noise"] = mode == NoiseMode::Poisson ? "poisson" : "none";
    return j.dump(2);
}

}  // namespace qtomo
