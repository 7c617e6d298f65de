#include "qtomo/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

namespace qtomo {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

const ProjectorBasis& stokes_basis() {
    static const ProjectorBasis basis = ProjectorBasis::stokes();
    return basis;
}

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string format_number(double v) {
    if (std::isnan(v)) {
        return "";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') {
            c = ';';
        }
    }
    return s;
}

// Runs fn(i) for i in [0, count) on a small worker pool. Results must be
// written to per-index slots; the first exception is rethrown after joining.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    unsigned workers = threads > 0 ? static_cast<unsigned>(threads)
                                   : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (!failed.load()) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) {
                    return;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                    failed = true;
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

// `points` values on [0, hi]; a single point means "not swept" and uses `fixed`.
std::vector<double> axis(int points, double hi, double fixed) {
    if (points == 1) {
        return {fixed};
    }
    std::vector<double> v(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        v[static_cast<std::size_t>(i)] = hi * i / (points - 1);
    }
    return v;
}

std::vector<double> tangle_axis(int points) {
    if (points == 1) {
        return {0.5};
    }
    return axis(points, 1.0, 0.5);
}

// Stream ids: tag in the top byte, then a block and a trial index.
std::uint64_t stream_id(std::uint64_t tag, std::uint64_t block, std::uint64_t trial) {
    return (tag << 56) | (block << 24) | trial;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) {
        return v.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    }
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void require(bool ok, const std::string& message) {
    if (!ok) {
        throw std::invalid_argument("config: " + message);
    }
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    return out;
}

// Werner epsilon whose two-qubit tangle equals 1/2: C = (3 eps - 1)/2 = 1/sqrt2.
const double kWernerHalfTangleEpsilon = (1.0 + std::sqrt(2.0)) / 3.0;

}  // namespace

std::string to_string(Command command) {
    switch (command) {
        case Command::Tomo: return "tomo";
        case Command::Simulate: return "simulate";
        case Command::PlaneSweep: return "plane-sweep";
        case Command::WernerLine: return "werner-line";
        case Command::FpShotsSearch: return "fp-shots-search";
        case Command::QdPurityScan: return "qd-purity-scan";
        case Command::Benchmark: return "benchmark";
    }
    return "unknown";
}

Command parse_command(const std::string& name) {
    for (Command c : {Command::Tomo, Command::Simulate, Command::PlaneSweep, Command::WernerLine,
                      Command::FpShotsSearch, Command::QdPurityScan, Command::Benchmark}) {
        if (to_string(c) == name) {
            return c;
        }
    }
    throw std::invalid_argument(
        "unknown command '" + name +
        "' (expected tomo, simulate, plane-sweep, werner-line, fp-shots-search, qd-purity-scan or benchmark)");
}

std::string to_string(Estimator estimator) {
    switch (estimator) {
        case Estimator::Linear: return "linear";
        case Estimator::QuickDirty: return "qd";
        case Estimator::ForcedPurity: return "fp";
        case Estimator::Mle: return "mle";
    }
    return "unknown";
}

std::vector<Estimator> parse_estimators(const std::string& list) {
    std::vector<Estimator> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
        if (item.empty()) {
            continue;
        }
        bool found = false;
        for (Estimator e : kAllEstimators) {
            if (to_string(e) == item) {
                if (std::find(out.begin(), out.end(), e) == out.end()) {
                    out.push_back(e);
                }
                found = true;
            }
        }
        if (!found) {
            throw std::invalid_argument("unknown estimator '" + item + "' (expected linear, qd, fp or mle)");
        }
    }
    if (out.empty()) {
        throw std::invalid_argument("estimator list is empty");
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> parse_qubit_list(const std::string& text) {
    auto to_int = [&](const std::string& s) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) {
            throw std::invalid_argument("malformed qubit list '" + text + "'");
        }
        return v;
    };
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash != std::string::npos && dash > 0) {
            const int lo = to_int(item.substr(0, dash));
            const int hi = to_int(item.substr(dash + 1));
            if (hi < lo) {
                throw std::invalid_argument("qubit range '" + item + "' is empty");
            }
            for (int q = lo; q <= hi; ++q) out.push_back(q);
        } else {
            out.push_back(to_int(item));
        }
    }
    if (out.empty()) {
        throw std::invalid_argument("qubit list is empty");
    }
    return out;
}

bool ExperimentConfig::wants(Estimator e) const {
    return std::find(estimators.begin(), estimators.end(), e) != estimators.end();
}

void ExperimentConfig::validate() const {
    require(!qubits.empty(), "at least one qubit count is required");
    for (int q : qubits) {
        require(q >= 1 && q <= 15, "qubit counts must lie in [1, 15]");
    }
    require(shots > 0.0 && std::isfinite(shots), "shots must be positive");
    require(grid >= 1, "grid must be >= 1");
    require(trials >= 1, "trials must be >= 1");
    require(!estimators.empty(), "estimator set is empty");
    require(state_error >= 0.0 && state_error <= 1.0, "state error must lie in [0, 1]");
    require(tangle_points >= 1, "tangle points must be >= 1");
    require(shots_cap >= 16.0, "shots cap must be >= 16");
    require(target_fidelity > 0.0 && target_fidelity <= 1.0, "target fidelity must lie in (0, 1]");
    require(verify_trials >= 1, "verify trials must be >= 1");
    require(threads >= 0, "threads must be >= 0");
    optimizer.validate();
    switch (command) {
        case Command::Tomo:
            require(!counts_path.empty(), "tomo needs --counts <file>");
            break;
        case Command::Simulate: {
            StateFamilySpec spec = family;
            spec.qubits = qubits.front();
            spec.validate();
            break;
        }
        case Command::PlaneSweep:
            require(qubits.size() == 1 && qubits.front() == 2, "plane-sweep is a two-qubit study");
            break;
        case Command::WernerLine:
        case Command::QdPurityScan:
        case Command::Benchmark:
        case Command::FpShotsSearch:
            for (int q : qubits) require(q >= 2, "this study needs at least two qubits");
            break;
    }
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["command"] = to_string(command);
    j["qubits"] = qubits;
    j["family"] = to_string(family.family);
    j["epsilon"] = family.epsilon;
    j["delta"] = family.delta;
    j["gamma"] = family.gamma;
    if (!family.path.empty()) j["state_file"] = family.path;
    j["shots"] = shots;
    j["grid"] = grid;
    j["trials"] = trials;
    std::vector<std::string> est;
    for (Estimator e : estimators) est.push_back(to_string(e));
    j["estimators"] = est;
    j["seed"] = seed;
    j["out"] = output_dir;
    j["zero_noise"] = noise == NoiseMode::None;
    j["memory_budget_bytes"] = budget.bytes;
    j["threads"] = threads;
    if (!counts_path.empty()) j["counts"] = counts_path;
    if (!truth_path.empty()) j["truth"] = truth_path;
    j["state_error"] = state_error;
    j["tangle_points"] = tangle_points;
    j["shots_cap"] = shots_cap;
    j["target_fidelity"] = target_fidelity;
    j["verify_trials"] = verify_trials;
    j["record_timings"] = record_timings;
    json opt;
    opt["gradient_norm_tolerance"] = optimizer.gradient_norm_tolerance;
    opt["relative_decrease_tolerance"] = optimizer.relative_decrease_tolerance;
    if (optimizer.max_iterations) opt["max_iterations"] = *optimizer.max_iterations;
    opt["line_search_sufficient_decrease"] = optimizer.line_search_sufficient_decrease;
    opt["line_search_curvature"] = optimizer.line_search_curvature;
    opt["initial_step"] = optimizer.initial_step;
    j["optimizer"] = opt;
    return j.dump(2);
}

ExperimentConfig default_config(Command command) {
    ExperimentConfig cfg;
    cfg.command = command;
    switch (command) {
        case Command::Tomo:
        case Command::Simulate:
            break;
        case Command::PlaneSweep:
            cfg.grid = 20;
            cfg.trials = 10;
            break;
        case Command::WernerLine:
            cfg.qubits = {2, 3, 4};
            cfg.grid = 21;
            cfg.trials = 20;
            break;
        case Command::FpShotsSearch:
            cfg.qubits = {2, 3, 4, 5};
            cfg.trials = 10;
            cfg.estimators = {Estimator::ForcedPurity};
            break;
        case Command::QdPurityScan:
            cfg.qubits = {2, 3, 4, 5};
            cfg.trials = 10;
            cfg.shots = 1e6;
            cfg.estimators = {Estimator::QuickDirty, Estimator::ForcedPurity};
            break;
        case Command::Benchmark:
            cfg.qubits = {2, 3, 4};
            cfg.trials = 5;
            cfg.estimators = {Estimator::QuickDirty, Estimator::ForcedPurity, Estimator::Mle};
            break;
    }
    return cfg;
}

void apply_json_config(ExperimentConfig& cfg, const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) {
        throw std::invalid_argument("config file: top level must be a JSON object");
    }
    auto norm = [](std::string k) {
        std::replace(k.begin(), k.end(), '-', '_');
        return k;
    };
    try {
        for (const auto& [raw_key, v] : j.items()) {
            const std::string key = norm(raw_key);
            if (key == "command") cfg.command = parse_command(v.get<std::string>());
            else if (key == "qubits") cfg.qubits = v.is_array() ? v.get<std::vector<int>>()
                                                 : v.is_number_integer() ? std::vector<int>{v.get<int>()}
                                                 : parse_qubit_list(v.get<std::string>());
            else if (key == "family") cfg.family.family = parse_state_family(v.get<std::string>());
            else if (key == "epsilon") cfg.family.epsilon = v.get<double>();
            else if (key == "delta") cfg.family.delta = v.get<double>();
            else if (key == "gamma") cfg.family.gamma = v.get<double>();
            else if (key == "state_file") cfg.family.path = v.get<std::string>();
            else if (key == "shots") cfg.shots = v.get<double>();
            else if (key == "grid") cfg.grid = v.get<int>();
            else if (key == "trials") cfg.trials = v.get<int>();
            else if (key == "estimators") {
                if (v.is_array()) {
                    std::string joined;
                    for (const auto& e : v) joined += e.get<std::string>() + ",";
                    cfg.estimators = parse_estimators(joined);
                } else {
                    cfg.estimators = parse_estimators(v.get<std::string>());
                }
            }
            else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else if (key == "out" || key == "output_dir") cfg.output_dir = v.get<std::string>();
            else if (key == "zero_noise") cfg.noise = v.get<bool>() ? NoiseMode::None : NoiseMode::Poisson;
            else if (key == "memory_budget_bytes") cfg.budget.bytes = v.get<std::size_t>();
            else if (key == "threads") cfg.threads = v.get<int>();
            else if (key == "counts") cfg.counts_path = v.get<std::string>();
            else if (key == "truth") cfg.truth_path = v.get<std::string>();
            else if (key == "state_error") cfg.state_error = v.get<double>();
            else if (key == "tangle_points") cfg.tangle_points = v.get<int>();
            else if (key == "shots_cap") cfg.shots_cap = v.get<double>();
            else if (key == "target_fidelity") cfg.target_fidelity = v.get<double>();
            else if (key == "verify_trials") cfg.verify_trials = v.get<int>();
            else if (key == "record_timings") cfg.record_timings = v.get<bool>();
            else if (key == "optimizer") {
                for (const auto& [okey_raw, ov] : v.items()) {
                    const std::string okey = norm(okey_raw);
                    auto& o = cfg.optimizer;
                    if (okey == "gradient_norm_tolerance") o.gradient_norm_tolerance = ov.get<double>();
                    else if (okey == "relative_decrease_tolerance") o.relative_decrease_tolerance = ov.get<double>();
                    else if (okey == "max_iterations") o.max_iterations = ov.get<int>();
                    else if (okey == "line_search_sufficient_decrease") o.line_search_sufficient_decrease = ov.get<double>();
                    else if (okey == "line_search_curvature") o.line_search_curvature = ov.get<double>();
                    else if (okey == "initial_step") o.initial_step = ov.get<double>();
                    else throw std::invalid_argument("config file: unknown optimizer key '" + okey_raw + "'");
                }
            }
            else throw std::invalid_argument("config file: unknown key '" + raw_key + "'");
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config file: wrong value type: ") + e.what());
    }
}

void write_trial_csv(std::ostream& os, const std::vector<TrialResult>& rows) {
    os << "command,n,family,epsilon,delta,gamma,shots,trial,s_linear,tangle";
    for (Estimator e : kAllEstimators) {
        os << ",fidelity_" << to_string(e) << ",time_ms_" << to_string(e);
    }
    os << ",mle_iterations,mle_line_search_ms,mle_termination,seed,stream,status\n";
    for (const TrialResult& r : rows) {
        os << r.command << ',' << r.qubits << ',' << r.family << ',' << format_number(r.epsilon) << ','
           << format_number(r.delta) << ',' << format_number(r.gamma) << ',' << format_number(r.shots)
           << ',' << r.trial << ',' << format_number(r.s_linear) << ',' << format_number(r.tangle);
        for (Estimator e : kAllEstimators) {
            const EstimatorOutcome& o = r.outcome(e);
            os << ',' << (o.ran ? format_number(o.fidelity) : "") << ','
               << (o.ran ? format_number(o.time_ms) : "");
        }
        const bool mle = r.outcome(Estimator::Mle).ran;
        os << ',' << (mle ? std::to_string(r.mle_iterations) : "") << ','
           << (mle ? format_number(r.mle_line_search_ms) : "") << ',' << r.mle_termination << ','
           << r.seed << ',' << r.stream << ',' << sanitize(r.status) << '\n';
    }
}

std::vector<SummaryRow> summarize(const std::vector<TrialResult>& rows) {
    using Key = std::tuple<std::string, int, std::string, double, double, double, double>;
    std::map<Key, std::size_t> index;
    std::vector<std::vector<const TrialResult*>> groups;
    for (const TrialResult& r : rows) {
        const Key key{r.command, r.qubits, r.family, r.epsilon, r.delta, r.gamma, r.shots};
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, groups.size()).first;
            groups.emplace_back();
        }
        groups[it->second].push_back(&r);
    }
    std::vector<SummaryRow> out;
    for (const auto& g : groups) {
        SummaryRow s;
        const TrialResult& first = *g.front();
        s.command = first.command;
        s.qubits = first.qubits;
        s.family = first.family;
        s.epsilon = first.epsilon;
        s.delta = first.delta;
        s.gamma = first.gamma;
        s.shots = first.shots;
        s.count = static_cast<int>(g.size());
        for (Estimator e : kAllEstimators) {
            const auto k = static_cast<std::size_t>(e);
            std::vector<double> fid;
            std::vector<double> times;
            for (const TrialResult* r : g) {
                const EstimatorOutcome& o = r->outcome(e);
                if (!o.ran) continue;
                times.push_back(o.time_ms);
                if (!std::isnan(o.fidelity)) fid.push_back(o.fidelity);
            }
            s.mean_fidelity[k] = mean_of(fid);
            s.std_fidelity[k] = stddev_of(fid);
            s.mean_time_ms[k] = mean_of(times);
            s.std_time_ms[k] = stddev_of(times);
        }
        std::vector<double> iters;
        std::vector<double> per_iter;
        for (const TrialResult* r : g) {
            if (!r->outcome(Estimator::Mle).ran) continue;
            iters.push_back(r->mle_iterations);
            if (r->mle_iterations > 0) per_iter.push_back(r->mle_line_search_ms / r->mle_iterations);
        }
        s.mean_iterations = mean_of(iters);
        s.mean_line_search_ms_per_iteration = mean_of(per_iter);
        out.push_back(std::move(s));
    }
    return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    os << "command,n,family,epsilon,delta,gamma,shots,trials";
    for (Estimator e : kAllEstimators) {
        const std::string n = to_string(e);
        os << ",mean_fidelity_" << n << ",std_fidelity_" << n << ",mean_time_ms_" << n
           << ",std_time_ms_" << n;
    }
    os << ",mean_mle_iterations,mean_line_search_ms_per_iteration\n";
    for (const SummaryRow& s : rows) {
        os << s.command << ',' << s.qubits << ',' << s.family << ',' << format_number(s.epsilon) << ','
           << format_number(s.delta) << ',' << format_number(s.gamma) << ',' << format_number(s.shots)
           << ',' << s.count;
        for (std::size_t k = 0; k < 4; ++k) {
            os << ',' << format_number(s.mean_fidelity[k]) << ',' << format_number(s.std_fidelity[k])
               << ',' << format_number(s.mean_time_ms[k]) << ',' << format_number(s.std_time_ms[k]);
        }
        os << ',' << format_number(s.mean_iterations) << ','
           << format_number(s.mean_line_search_ms_per_iteration) << '\n';
    }
}

TrialResult run_trial(const DensityMatrix& measured, const ExperimentConfig& cfg, RngStream& rng) {
    const ProjectorBasis& basis = stokes_basis();
    TrialResult r;
    r.command = to_string(cfg.command);
    r.qubits = measured.qubits;
    r.shots = cfg.shots;
    r.seed = rng.seed();
    r.stream = rng.stream_id();
    r.s_linear = linear_entropy(measured);
    if (measured.qubits == 2) {
        r.tangle = tangle(measured);
    }

    const MeasurementRecord record = simulate_counts(measured, cfg.shots, basis, rng, cfg.noise);
    const bool need_qd = cfg.wants(Estimator::QuickDirty) || cfg.wants(Estimator::Mle);
    auto score = [&](const DensityMatrix& est) {
        return is_physical(est, 1e-9) ? fidelity(est, measured)
                                      : std::numeric_limits<double>::quiet_NaN();
    };

    std::string stage = "linear";
    try {
        auto t0 = Clock::now();
        const DensityMatrix lin = linear_reconstruct(record, basis, cfg.budget);
        const double lin_ms = elapsed_ms(t0);
        if (cfg.wants(Estimator::Linear)) {
            auto& o = r.estimators[static_cast<std::size_t>(Estimator::Linear)];
            o = {true, score(lin), lin_ms};
        }

        std::optional<DensityMatrix> qd;
        double qd_ms = 0.0;
        if (need_qd) {
            stage = "qd";
            t0 = Clock::now();
            qd = quick_and_dirty(lin);
            qd_ms = elapsed_ms(t0);
            if (cfg.wants(Estimator::QuickDirty)) {
                auto& o = r.estimators[static_cast<std::size_t>(Estimator::QuickDirty)];
                o = {true, fidelity(*qd, measured), lin_ms + qd_ms};
            }
        }
        if (cfg.wants(Estimator::ForcedPurity)) {
            stage = "fp";
            t0 = Clock::now();
            RepairDiagnostics diag;
            const DensityMatrix fp = forced_purity(lin, &diag);
            const double fp_ms = elapsed_ms(t0);
            auto& o = r.estimators[static_cast<std::size_t>(Estimator::ForcedPurity)];
            o = {true, fidelity(fp, measured), lin_ms + fp_ms};
        }
        if (cfg.wants(Estimator::Mle)) {
            stage = "mle";
            t0 = Clock::now();
            const LikelihoodContext ctx(record, basis, cfg.budget);
            const MleResult mle = mle_estimate_from(*qd, ctx, cfg.optimizer);
            const double mle_ms = elapsed_ms(t0);
            auto& o = r.estimators[static_cast<std::size_t>(Estimator::Mle)];
            o = {true, fidelity(mle.estimate, measured), lin_ms + qd_ms + mle_ms};
            r.mle_iterations = mle.report.iterations;
            r.mle_line_search_ms = mle.report.line_search_ms;
            r.mle_termination = to_string(mle.report.termination_reason);
        }
    } catch (const MemoryBudgetExceeded&) {
        throw;
    } catch (const std::exception& e) {
        r.status = "error:" + stage + ": " + e.what();
    }
    if (!cfg.record_timings) {
        for (auto& o : r.estimators) o.time_ms = 0.0;
        r.mle_line_search_ms = 0.0;
    }
    return r;
}

TomoResult run_tomo(const ExperimentConfig& cfg) {
    if (cfg.counts_path.empty()) {
        throw std::invalid_argument("config: tomo needs --counts <file>");
    }
    const MeasurementRecord record = load_counts(cfg.counts_path);
    std::optional<DensityMatrix> truth;
    if (!cfg.truth_path.empty()) {
        truth = load_density(cfg.truth_path);
        if (truth->qubits != record.qubits) {
            throw std::invalid_argument("truth state has " + std::to_string(truth->qubits) +
                                        " qubits but the counts describe " +
                                        std::to_string(record.qubits));
        }
    }
    const ProjectorBasis& basis = stokes_basis();
    const std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);

    TomoResult result;
    json report;
    report["counts_file"] = cfg.counts_path;
    report["qubits"] = record.qubits;
    report["shots"] = record.shots;
    json estimators = json::object();

    std::string stage = "linear";
    auto wrap = [&](auto&& fn) {
        try {
            return fn();
        } catch (const MemoryBudgetExceeded&) {
            throw;
        } catch (const std::exception& e) {
            throw EstimatorFailure(stage + ": " + e.what());
        }
    };
    auto record_estimate = [&](Estimator e, const DensityMatrix& rho, double ms) {
        json entry;
        entry["time_ms"] = ms;
        entry["min_eigenvalue"] = min_eigenvalue(rho);
        entry["physical"] = is_physical(rho);
        entry["file"] = "rho_" + to_string(e) + ".txt";
        if (is_physical(rho)) {
            entry["linear_entropy"] = linear_entropy(rho);
            if (rho.qubits == 2) entry["tangle"] = tangle(rho);
            if (truth) {
                const double f = fidelity(rho, *truth);
                entry["fidelity"] = f;
                result.fidelity[e] = f;
            }
        }
        save_density((out_dir / ("rho_" + to_string(e) + ".txt")).string(), rho);
        estimators[to_string(e)] = entry;
        result.estimates.emplace(e, rho);
    };

    auto t0 = Clock::now();
    const DensityMatrix lin = wrap([&] { return linear_reconstruct(record, basis, cfg.budget); });
    const double lin_ms = elapsed_ms(t0);
    if (cfg.wants(Estimator::Linear)) record_estimate(Estimator::Linear, lin, lin_ms);

    std::optional<DensityMatrix> qd;
    if (cfg.wants(Estimator::QuickDirty) || cfg.wants(Estimator::Mle)) {
        stage = "qd";
        t0 = Clock::now();
        qd = wrap([&] { return quick_and_dirty(lin); });
        if (cfg.wants(Estimator::QuickDirty)) record_estimate(Estimator::QuickDirty, *qd, lin_ms + elapsed_ms(t0));
    }
    if (cfg.wants(Estimator::ForcedPurity)) {
        stage = "fp";
        t0 = Clock::now();
        RepairDiagnostics diag;
        const DensityMatrix fp = wrap([&] { return forced_purity(lin, &diag); });
        record_estimate(Estimator::ForcedPurity, fp, lin_ms + elapsed_ms(t0));
        if (diag.eigenvalue_tie) estimators["fp"]["warning"] = diag.warning;
    }
    if (cfg.wants(Estimator::Mle)) {
        stage = "mle";
        t0 = Clock::now();
        const MleResult mle = wrap([&] {
            const LikelihoodContext ctx(record, basis, cfg.budget);
            return mle_estimate_from(*qd, ctx, cfg.optimizer);
        });
        record_estimate(Estimator::Mle, mle.estimate, elapsed_ms(t0));
        report["mle_report"] = json::parse(mle.report.to_json());
        result.mle_report = mle.report;
    }
    report["estimators"] = estimators;
    if (truth) report["truth_file"] = cfg.truth_path;
    result.report_json = report.dump(2);
    auto out = open_output(out_dir / "report.json");
    out << result.report_json << '\n';
    return result;
}

void run_simulate(const ExperimentConfig& cfg) {
    StateFamilySpec spec = cfg.family;
    spec.qubits = cfg.qubits.front();
    RngStream rng(cfg.seed, 0);
    const DensityMatrix rho = build_state(spec, rng);
    const MeasurementRecord rec = simulate_counts(rho, cfg.shots, stokes_basis(), rng, cfg.noise);
    const std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    save_counts((out_dir / "counts.txt").string(), rec);
    save_density((out_dir / "truth.txt").string(), rho);
    auto meta = open_output(out_dir / "counts.meta.json");
    meta << simulation_metadata_json(spec, cfg.shots, RngStream(cfg.seed, 0), cfg.noise) << '\n';
}

std::vector<TrialResult> run_plane_sweep(const ExperimentConfig& cfg) {
    struct Task {
        StateFamily family;
        double param;
        double epsilon;
        int trial;
    };
    const std::vector<double> eps = axis(cfg.grid, 1.0, cfg.family.epsilon);
    const std::vector<double> deltas = axis(cfg.grid, std::sqrt(0.5), cfg.family.delta);
    const std::vector<double> gammas = axis(cfg.grid, 1.0, cfg.family.gamma);
    std::vector<Task> tasks;
    for (StateFamily f : {StateFamily::TangleBiased, StateFamily::Mems}) {
        for (double p : f == StateFamily::TangleBiased ? deltas : gammas) {
            for (double e : eps) {
                for (int k = 0; k < cfg.trials; ++k) tasks.push_back({f, p, e, k});
            }
        }
    }
    std::vector<TrialResult> rows(tasks.size());
    parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
        const Task& t = tasks[i];
        RngStream rng(cfg.seed, stream_id(0, 0, i));
        const DensityMatrix structured =
            t.family == StateFamily::TangleBiased ? tangle_biased_pure(t.param) : mems_state(t.param);
        const DensityMatrix measured = trial_mixture(structured, t.epsilon, rng);
        TrialResult r = run_trial(measured, cfg, rng);
        r.family = to_string(t.family);
        r.epsilon = t.epsilon;
        (t.family == StateFamily::TangleBiased ? r.delta : r.gamma) = t.param;
        r.trial = t.trial;
        rows[i] = std::move(r);
    });
    return rows;
}

std::vector<TrialResult> run_werner_line(const ExperimentConfig& cfg) {
    struct Task {
        int qubits;
        double epsilon;
        int trial;
    };
    const std::vector<double> eps = axis(cfg.grid, 1.0, cfg.family.epsilon);
    std::vector<Task> tasks;
    for (int n : cfg.qubits)
        for (double e : eps)
            for (int k = 0; k < cfg.trials; ++k) tasks.push_back({n, e, k});
    std::vector<TrialResult> rows(tasks.size());
    parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
        const Task& t = tasks[i];
        RngStream rng(cfg.seed, stream_id(1, 0, i));
        const DensityMatrix measured = make_physical(werner_state(t.qubits, t.epsilon), cfg.state_error, rng);
        TrialResult r = run_trial(measured, cfg, rng);
        r.family = "werner";
        r.epsilon = t.epsilon;
        r.trial = t.trial;
        rows[i] = std::move(r);
    });
    return rows;
}

std::vector<ShotsSearchRow> run_fp_shots_search(const ExperimentConfig& cfg) {
    const ProjectorBasis& basis = stokes_basis();
    const std::vector<double> taus = tangle_axis(cfg.tangle_points);
    struct Block {
        int qubits;
        double tangle;
    };
    std::vector<Block> blocks;
    for (int n : cfg.qubits)
        for (double t : taus) blocks.push_back({n, t});

    std::vector<ShotsSearchRow> rows(blocks.size());
    parallel_for(blocks.size(), cfg.threads, [&](std::size_t b) {
        const Block& blk = blocks[b];
        const DensityMatrix target = tangle_biased_pure(delta_for_tangle(blk.tangle), blk.qubits);
        ShotsSearchRow row;
        row.qubits = blk.qubits;
        row.tangle = blk.tangle;
        // Mean FP fidelity at `shots`; the same streams are reused for every shot
        // count of the search so the comparison is between matched trials.
        auto mean_fidelity = [&](double shots, std::uint64_t tag, int trials) {
            double total = 0.0;
            for (int k = 0; k < trials; ++k) {
                RngStream rng(cfg.seed, stream_id(tag, b, static_cast<std::uint64_t>(k)));
                const DensityMatrix measured = make_physical(target, cfg.state_error, rng);
                const MeasurementRecord rec = simulate_counts(measured, shots, basis, rng, cfg.noise);
                RepairDiagnostics diag;
                try {
                    total += fidelity(forced_purity(linear_reconstruct(rec, basis, cfg.budget), &diag), measured);
                } catch (const MemoryBudgetExceeded&) {
                    throw;
                } catch (const std::exception&) {
                    // too few counts to reconstruct at all: scores zero
                }
            }
            return total / trials;
        };
        auto passes = [&](double shots, double& fid) {
            ++row.evaluations;
            fid = mean_fidelity(shots, 2, cfg.trials);
            return fid >= cfg.target_fidelity;
        };

        double hi = 16.0;
        double fid_hi = 0.0;
        while (!passes(hi, fid_hi)) {
            if (hi >= cfg.shots_cap) {
                row.censored = true;
                break;
            }
            hi = std::min(2.0 * hi, cfg.shots_cap);
        }
        if (!row.censored) {
            double lo = hi > 16.0 ? std::floor(hi / 2.0) : 1.0;
            while (hi - lo > std::max(1.0, 0.01 * hi)) {
                const double mid = std::floor(0.5 * (lo + hi));
                double fid_mid = 0.0;
                if (passes(mid, fid_mid)) {
                    hi = mid;
                    fid_hi = fid_mid;
                } else {
                    lo = mid;
                }
            }
            row.verify_fidelity = mean_fidelity(hi, 3, cfg.verify_trials);
            row.verify_fidelity_half = mean_fidelity(std::max(1.0, std::floor(hi / 2.0)), 4, cfg.verify_trials);
        }
        row.min_shots = hi;
        row.fidelity_at_min = fid_hi;
        rows[b] = row;
    });
    return rows;
}

void write_shots_csv(std::ostream& os, const std::vector<ShotsSearchRow>& rows) {
    os << "command,n,tangle,min_shots,censored,fidelity_at_min,verify_fidelity,verify_fidelity_half,"
          "evaluations\n";
    for (const ShotsSearchRow& r : rows) {
        os << "fp-shots-search," << r.qubits << ',' << format_number(r.tangle) << ','
           << format_number(r.min_shots) << ',' << (r.censored ? "true" : "false") << ','
           << format_number(r.fidelity_at_min) << ','
           << (r.censored ? "" : format_number(r.verify_fidelity)) << ','
           << (r.censored ? "" : format_number(r.verify_fidelity_half)) << ',' << r.evaluations << '\n';
    }
}

std::vector<TrialResult> run_qd_purity_scan(const ExperimentConfig& cfg) {
    struct Task {
        int qubits;
        double tangle;
        int trial;
    };
    const std::vector<double> taus = tangle_axis(cfg.tangle_points);
    std::vector<Task> tasks;
    for (int n : cfg.qubits)
        for (double t : taus)
            for (int k = 0; k < cfg.trials; ++k) tasks.push_back({n, t, k});
    std::vector<TrialResult> rows(tasks.size());
    parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
        const Task& t = tasks[i];
        RngStream rng(cfg.seed, stream_id(5, 0, i));
        const double delta = delta_for_tangle(t.tangle);
        const DensityMatrix measured =
            make_physical(tangle_biased_pure(delta, t.qubits), cfg.state_error, rng);
        TrialResult r = run_trial(measured, cfg, rng);
        r.family = "tangle_biased";
        r.delta = delta;
        r.epsilon = cfg.state_error;
        r.trial = t.trial;
        rows[i] = std::move(r);
    });
    return rows;
}

std::vector<TrialResult> run_benchmark(const ExperimentConfig& cfg) {
    std::vector<TrialResult> rows;
    std::uint64_t index = 0;
    // sequential on purpose: concurrent trials would distort the timings
    for (int n : cfg.qubits) {
        const double delta = delta_for_tangle(0.5);
        const DensityMatrix pure = tangle_biased_pure(delta, n);
        const DensityMatrix werner = werner_state(n, kWernerHalfTangleEpsilon);
        for (const bool is_pure : {true, false}) {
            for (int k = 0; k < cfg.trials; ++k) {
                RngStream rng(cfg.seed, stream_id(6, 0, index++));
                const DensityMatrix measured = make_physical(is_pure ? pure : werner, cfg.state_error, rng);
                TrialResult r = run_trial(measured, cfg, rng);
                r.family = is_pure ? "tangle_biased" : "werner";
                if (is_pure) {
                    r.delta = delta;
                } else {
                    r.epsilon = kWernerHalfTangleEpsilon;
                }
                r.trial = k;
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

void run_command(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> outputs;

    auto write_rows = [&](const std::string& stem, const std::vector<TrialResult>& rows) {
        auto csv = open_output(out_dir / (stem + ".csv"));
        write_trial_csv(csv, rows);
        auto summary = open_output(out_dir / (stem + "_summary.csv"));
        write_summary_csv(summary, summarize(rows));
        outputs.push_back(stem + ".csv");
        outputs.push_back(stem + "_summary.csv");
    };

    switch (cfg.command) {
        case Command::Tomo:
            run_tomo(cfg);
            for (Estimator e : cfg.estimators) outputs.push_back("rho_" + to_string(e) + ".txt");
            outputs.push_back("report.json");
            break;
        case Command::Simulate:
            run_simulate(cfg);
            outputs = {"counts.txt", "truth.txt", "counts.meta.json"};
            break;
        case Command::PlaneSweep: write_rows("plane_sweep", run_plane_sweep(cfg)); break;
        case Command::WernerLine: write_rows("werner_line", run_werner_line(cfg)); break;
        case Command::QdPurityScan: write_rows("qd_purity_scan", run_qd_purity_scan(cfg)); break;
        case Command::Benchmark: write_rows("benchmark", run_benchmark(cfg)); break;
        case Command::FpShotsSearch: {
            auto csv = open_output(out_dir / "fp_shots_search.csv");
            write_shots_csv(csv, run_fp_shots_search(cfg));
            outputs.push_back("fp_shots_search.csv");
            break;
        }
    }

    json manifest;
    manifest["code_version"] = std::string(kCodeVersion);
    manifest["generator_version"] = std::string(kGeneratorVersion);
    manifest["rng_algorithm"] = std::string(RngStream::kAlgorithm);
    manifest["seed"] = cfg.seed;
    manifest["config"] = json::parse(cfg.to_json());
    manifest["outputs"] = outputs;
    auto m = open_output(out_dir / "manifest.json");
    m << manifest.dump(2) << '\n';
    outputs.push_back("manifest.json");
    for (const auto& o : outputs) {
        log << (out_dir / o).string() << '\n';
    }
}

}  // namespace qtomo
