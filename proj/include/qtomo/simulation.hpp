#pragma once

// Pseudo-experimental data: parametric state families, random density
// matrices, state-error mixing and Poisson-noised counts.

#include <cstdint>
#include <optional>
#include <string>

#include "qtomo/reconstruction.hpp"
#include "qtomo/rng.hpp"

namespace qtomo {

inline constexpr std::string_view kGeneratorVersion = "qtomo-sim-1";

enum class StateFamily { Ghz, Werner, Mems, TangleBiased, Random, File };

std::string to_string(StateFamily family);
StateFamily parse_state_family(const std::string& name);

/// Which parameters matter depends on the family:
///   ghz           -> make_physical(GHZ, epsilon)
///   werner        -> werner_state(n, epsilon)
///   mems          -> trial_mixture(mems_state(gamma), epsilon)
///   tangle_biased -> trial_mixture(tangle_biased_pure(delta, n), epsilon)
///   random        -> random_density(n)
///   file          -> load_density(path)
struct StateFamilySpec {
    StateFamily family = StateFamily::Ghz;
    int qubits = 2;
    double epsilon = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    std::string path;

    /// Throws std::invalid_argument when a relevant parameter is out of range.
    void validate() const;
};

/// R = U(-1,1) + i U(-1,1) entrywise; rho = R^dag R / Tr{R^dag R}.
DensityMatrix random_density(int n, RngStream& rng);

/// |GHZ><GHZ| with |GHZ> = (|0...0> + |1...1>)/sqrt2.
DensityMatrix ghz_state(int n);

/// epsilon |GHZ><GHZ| + (1 - epsilon) I / 2^n.
DensityMatrix werner_state(int n, double epsilon);

/// Two-qubit maximally entangled mixed state with g(gamma) = gamma/2 for
/// gamma >= 2/3 and 1/3 otherwise.
DensityMatrix mems_state(double gamma);

/// Pure state with amplitudes sqrt(1 - delta^2) on |0...0> and delta on
/// |1...1>, delta in [0, 1/sqrt2]. For n = 2 the tangle is 4 delta^2 (1 - delta^2).
DensityMatrix tangle_biased_pure(double delta, int n = 2);

/// delta giving the two-qubit tangle `tau` in tangle_biased_pure.
double delta_for_tangle(double tau);

/// (1 - epsilon) theory + epsilon random_density.
DensityMatrix make_physical(const DensityMatrix& theory, double epsilon, RngStream& rng);

/// epsilon^2 random_density + (1 - epsilon^2) structured.
DensityMatrix trial_mixture(const DensityMatrix& structured, double epsilon, RngStream& rng);

/// Poisson(lambda) draw: inversion for lambda < 10, Hormann's transformed
/// rejection (PTRS) above.
std::uint64_t poisson_sample(double lambda, RngStream& rng);

enum class NoiseMode { Poisson, None };

/// Counts with Poisson noise around expected_counts (or exactly the expected
/// counts for NoiseMode::None).
MeasurementRecord simulate_counts(const DensityMatrix& rho, double shots,
                                  const ProjectorBasis& basis, RngStream& rng,
                                  NoiseMode mode = NoiseMode::Poisson);

/// Builds the state described by `spec`; `rng` supplies any random component.
DensityMatrix build_state(const StateFamilySpec& spec, RngStream& rng);

/// JSON sidecar describing how a counts file was generated.
std::string simulation_metadata_json(const StateFamilySpec& spec, double shots,
                                     const RngStream& rng, NoiseMode mode);

}  // namespace qtomo
