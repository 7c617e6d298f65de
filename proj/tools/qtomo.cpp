// qtomo: quantum state tomography runs from the command line.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or estimator
// error, 3 memory budget exceeded.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qtomo/experiments.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitMemory = 3;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("cannot open config file " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantum state tomography: linear inversion, quick-and-dirty and forced-purity "
                 "repairs, and maximum likelihood"};
    app.set_version_flag("--version", std::string(qtomo::kCodeVersion));

    std::string command;
    std::string qubits;
    std::string family;
    double epsilon = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    double shots = 0.0;
    int grid = 0;
    int trials = 0;
    std::string estimators;
    std::uint64_t seed = 0;
    std::string out;
    std::string config_path;
    bool zero_noise = false;
    std::size_t budget = 0;
    int threads = 0;
    std::string counts;
    std::string truth;
    std::string state_file;
    double state_error = 0.0;
    int tangle_points = 0;
    int verify_trials = 0;
    bool no_timings = false;

    app.add_option("--command", command,
                   "tomo | simulate | plane-sweep | werner-line | fp-shots-search | qd-purity-scan | benchmark");
    auto* o_qubits = app.add_option("--qubits", qubits, "qubit count, list or range, e.g. 2 or 2-4");
    auto* o_family = app.add_option("--family", family, "ghz | werner | mems | tangle_biased | random | file");
    auto* o_eps = app.add_option("--epsilon", epsilon, "state error / mixing parameter in [0, 1]");
    auto* o_delta = app.add_option("--delta", delta, "tangle bias in [0, 1/sqrt2]");
    auto* o_gamma = app.add_option("--gamma", gamma, "MEMS parameter in [0, 1]");
    auto* o_shots = app.add_option("--shots", shots, "repetitions per projector");
    auto* o_grid = app.add_option("--grid", grid, "points per swept axis");
    auto* o_trials = app.add_option("--trials", trials, "trials per grid point");
    auto* o_est = app.add_option("--estimators", estimators, "comma list of linear, qd, fp, mle");
    auto* o_seed = app.add_option("--seed", seed, "random seed");
    auto* o_out = app.add_option("--out", out, "output directory");
    app.add_option("--config", config_path, "JSON config file; its values override flags");
    auto* o_zero = app.add_flag("--zero-noise", zero_noise, "use expected counts without Poisson noise");
    auto* o_budget = app.add_option("--memory-budget-bytes", budget, "largest single allocation allowed");
    auto* o_threads = app.add_option("--threads", threads, "worker threads (0 = all cores)");
    auto* o_counts = app.add_option("--counts", counts, "counts file for tomo");
    auto* o_truth = app.add_option("--truth", truth, "true density matrix for scoring tomo");
    auto* o_state = app.add_option("--state-file", state_file, "density matrix for --family file");
    auto* o_err = app.add_option("--state-error", state_error, "random admixture in sweep targets");
    auto* o_tp = app.add_option("--tangle-points", tangle_points, "tangle values on [0, 1]");
    auto* o_vt = app.add_option("--verify-trials", verify_trials, "trials in the shot-search check");
    auto* o_nt = app.add_flag("--no-timings", no_timings, "write zero times for byte-stable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        std::string config_text;
        if (!config_path.empty()) {
            config_text = read_file(config_path);
        }
        if (command.empty() && !config_text.empty()) {
            const auto j = nlohmann::json::parse(config_text, nullptr, false);
            if (j.is_object() && j.contains("command") && j["command"].is_string()) {
                command = j["command"].get<std::string>();
            }
        }
        if (command.empty()) {
            throw std::invalid_argument("--command is required");
        }

        qtomo::ExperimentConfig cfg = qtomo::default_config(qtomo::parse_command(command));
        if (*o_qubits) cfg.qubits = qtomo::parse_qubit_list(qubits);
        if (*o_family) cfg.family.family = qtomo::parse_state_family(family);
        if (*o_eps) cfg.family.epsilon = epsilon;
        if (*o_delta) cfg.family.delta = delta;
        if (*o_gamma) cfg.family.gamma = gamma;
        if (*o_state) cfg.family.path = state_file;
        if (*o_shots) cfg.shots = shots;
        if (*o_grid) cfg.grid = grid;
        if (*o_trials) cfg.trials = trials;
        if (*o_est) cfg.estimators = qtomo::parse_estimators(estimators);
        if (*o_seed) cfg.seed = seed;
        if (*o_out) cfg.output_dir = out;
        if (*o_zero) cfg.noise = qtomo::NoiseMode::None;
        if (*o_budget) cfg.budget.bytes = budget;
        if (*o_threads) cfg.threads = threads;
        if (*o_counts) cfg.counts_path = counts;
        if (*o_truth) cfg.truth_path = truth;
        if (*o_err) cfg.state_error = state_error;
        if (*o_tp) cfg.tangle_points = tangle_points;
        if (*o_vt) cfg.verify_trials = verify_trials;
        if (*o_nt) cfg.record_timings = false;
        if (!config_text.empty()) {
            qtomo::apply_json_config(cfg, config_text);
        }
        cfg.validate();
        qtomo::run_command(cfg, std::cout);
    } catch (const qtomo::MemoryBudgetExceeded& e) {
        std::cerr << "qtomo: memory budget exceeded: " << e.what() << '\n';
        return kExitMemory;
    } catch (const std::invalid_argument& e) {
        std::cerr << "qtomo: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "qtomo: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
