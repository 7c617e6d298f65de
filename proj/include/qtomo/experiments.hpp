#pragma once

// Batch drivers behind the command-line tool: tomography on a counts file,
// count simulation, and the parameter sweeps (entropy-tangle plane, Werner
// line, forced-purity shot search, quick-and-dirty scan, runtime benchmark).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qtomo/likelihood.hpp"
#include "qtomo/simulation.hpp"

namespace qtomo {

inline constexpr std::string_view kCodeVersion = "qtomo-0.1.0";

/// An estimator stage failed; the message starts with the stage name.
class EstimatorFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Command { Tomo, Simulate, PlaneSweep, WernerLine, FpShotsSearch, QdPurityScan, Benchmark };

std::string to_string(Command command);
Command parse_command(const std::string& name);

enum class Estimator { Linear = 0, QuickDirty = 1, ForcedPurity = 2, Mle = 3 };
inline constexpr std::array<Estimator, 4> kAllEstimators{Estimator::Linear, Estimator::QuickDirty,
                                                         Estimator::ForcedPurity, Estimator::Mle};

std::string to_string(Estimator estimator);
/// Comma-separated subset of {linear, qd, fp, mle}; duplicates collapse.
std::vector<Estimator> parse_estimators(const std::string& list);

/// "2", "2,3,5" or "2-4".
std::vector<int> parse_qubit_list(const std::string& text);

struct ExperimentConfig {
    Command command = Command::Tomo;
    std::vector<int> qubits{2};
    StateFamilySpec family;
    double shots = 1e4;
    int grid = 20;    // points per swept axis
    int trials = 10;  // trials per grid point
    std::vector<Estimator> estimators{kAllEstimators.begin(), kAllEstimators.end()};
    std::uint64_t seed = 1;
    OptimizerConfig optimizer;
    std::string output_dir = "qtomo_out";
    NoiseMode noise = NoiseMode::Poisson;
    MemoryBudget budget;
    int threads = 0;  // 0: one per hardware thread
    std::string counts_path;
    std::string truth_path;
    double state_error = 0.05;  // weight of the random component mixed into pure targets
    int tangle_points = 11;     // tangles evenly spaced on [0, 1]
    double shots_cap = 1e7;
    double target_fidelity = 0.9;
    int verify_trials = 20;
    bool record_timings = true;  // false writes 0 for every time so CSVs are byte-stable

    bool wants(Estimator e) const;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;

    std::string to_json() const;
};

/// Config populated with the desk-scale defaults of `command`.
ExperimentConfig default_config(Command command);

/// Overrides fields of `cfg` from a JSON object; keys match the long flag
/// names with dashes or underscores. Unknown keys are an error.
void apply_json_config(ExperimentConfig& cfg, const std::string& json_text);

struct EstimatorOutcome {
    bool ran = false;
    double fidelity = std::numeric_limits<double>::quiet_NaN();  // NaN when not physical
    double time_ms = 0.0;
};

/// One simulated tomography trial.
struct TrialResult {
    std::string command;
    int qubits = 0;
    std::string family;
    double epsilon = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    double shots = 0.0;
    int trial = 0;
    double s_linear = 0.0;                                          // of the measured state
    double tangle = std::numeric_limits<double>::quiet_NaN();       // two qubits only
    std::array<EstimatorOutcome, 4> estimators;                     // indexed by Estimator
    int mle_iterations = 0;
    double mle_line_search_ms = 0.0;
    std::string mle_termination;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::string status = "ok";

    const EstimatorOutcome& outcome(Estimator e) const {
        return estimators[static_cast<std::size_t>(e)];
    }
};

/// Fixed wide layout, one row per trial.
void write_trial_csv(std::ostream& os, const std::vector<TrialResult>& rows);

struct SummaryRow {
    std::string command;
    int qubits = 0;
    std::string family;
    double epsilon = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    double shots = 0.0;
    int count = 0;
    std::array<double, 4> mean_fidelity{};
    std::array<double, 4> std_fidelity{};
    std::array<double, 4> mean_time_ms{};
    std::array<double, 4> std_time_ms{};
    double mean_iterations = 0.0;
    double mean_line_search_ms_per_iteration = 0.0;
};

/// Mean and sample standard deviation per grid point, in first-seen order.
/// NaN fidelities (failed or non-physical estimates) are skipped.
std::vector<SummaryRow> summarize(const std::vector<TrialResult>& rows);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

/// Runs the estimators of `cfg` on counts drawn from `measured` and scores
/// them against `measured`.
TrialResult run_trial(const DensityMatrix& measured, const ExperimentConfig& cfg, RngStream& rng);

struct TomoResult {
    std::map<Estimator, DensityMatrix> estimates;
    std::map<Estimator, double> fidelity;  // only with a truth state
    std::optional<OptimizationReport> mle_report;
    std::string report_json;
};

/// Tomography of cfg.counts_path (optionally scored against cfg.truth_path).
/// Estimates and report.json go to cfg.output_dir.
TomoResult run_tomo(const ExperimentConfig& cfg);

/// Writes counts.txt, counts.meta.json and truth.txt for cfg.family.
void run_simulate(const ExperimentConfig& cfg);

/// Two-qubit grid over (delta, epsilon) for the tangle-biased family and over
/// (gamma, epsilon) for MEMS, cfg.trials each.
std::vector<TrialResult> run_plane_sweep(const ExperimentConfig& cfg);

/// Werner states on cfg.grid epsilons in [0, 1] for each qubit count, each
/// mixed with cfg.state_error of a random state before measurement.
std::vector<TrialResult> run_werner_line(const ExperimentConfig& cfg);

struct ShotsSearchRow {
    int qubits = 0;
    double tangle = 0.0;
    double min_shots = 0.0;  // the cap when censored
    bool censored = false;
    double fidelity_at_min = 0.0;
    double verify_fidelity = 0.0;       // fresh trials at min_shots
    double verify_fidelity_half = 0.0;  // fresh trials at min_shots / 2
    int evaluations = 0;
};

/// Smallest shot count at which the mean forced-purity fidelity reaches
/// cfg.target_fidelity, by doubling from 16 and then bisecting to 1%.
std::vector<ShotsSearchRow> run_fp_shots_search(const ExperimentConfig& cfg);
void write_shots_csv(std::ostream& os, const std::vector<ShotsSearchRow>& rows);

/// Pure tangle-biased targets with cfg.state_error, quick-and-dirty and
/// forced-purity fidelities per qubit count.
std::vector<TrialResult> run_qd_purity_scan(const ExperimentConfig& cfg);

/// Runtime of each estimator on the tau = 1/2 pure state and on the Werner
/// state of equal two-qubit tangle.
std::vector<TrialResult> run_benchmark(const ExperimentConfig& cfg);

/// Dispatches cfg.command, writes CSVs and manifest.json into cfg.output_dir
/// and logs one line per output file to `log`.
void run_command(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace qtomo
