// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Pass criterion numbers as arguments
// to run a subset, e.g. `acceptance 1 6`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qtomo/experiments.hpp"

using namespace qtomo;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    std::function<Verdict()> run;
};

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

const ProjectorBasis kStokes = ProjectorBasis::stokes();

double mean(const std::vector<double>& v) {
    return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Average ranks, ties shared.
std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const std::vector<double> rx = ranks(x);
    const std::vector<double> ry = ranks(y);
    const double mx = mean(rx);
    const double my = mean(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// 1. Noiseless linear inversion recovers the state.
Verdict noiseless_round_trip() {
    double worst = 1.0;
    int checked = 0;
    for (int n = 1; n <= 4; ++n) {
        for (int k = 0; k < 50; ++k) {
            RngStream rng(101, static_cast<std::uint64_t>(1000 * n + k));
            const DensityMatrix rho = random_density(n, rng);
            const DensityMatrix back = linear_reconstruct(expected_counts(rho, 1e4, kStokes), kStokes);
            worst = std::min(worst, fidelity(back, rho));
            ++checked;
        }
    }
    return {worst >= 1.0 - 1e-9, fmt("%d states, n=1..4, worst fidelity 1 - %.2e", checked, 1.0 - worst)};
}

// 2. Analytic gradient against central differences.
Verdict gradient_correctness() {
    std::mt19937_64 gen(202);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1000.0);
    double worst_excess = 0.0;  // max |a - f| / tolerance
    int failures = 0;
    int components = 0;
    for (int n = 1; n <= 3; ++n) {
        for (int pair = 0; pair < 20; ++pair) {
            RealVector t(static_cast<Eigen::Index>(pow4(n)));
            for (Eigen::Index k = 0; k < t.size(); ++k) t(k) = g(gen);
            MeasurementRecord rec{n, 1000, std::vector<double>(pow4(n))};
            for (double& c : rec.counts) c = std::round(u(gen));
            const LikelihoodContext ctx(rec, kStokes);
            const RealVector analytic = likelihood_gradient(CholeskyParams(n, t), ctx);
            for (Eigen::Index k = 0; k < t.size(); ++k) {
                RealVector hi = t;
                RealVector lo = t;
                hi(k) += 1e-5;
                lo(k) -= 1e-5;
                const double fd = (likelihood(CholeskyParams(n, hi), ctx) -
                                   likelihood(CholeskyParams(n, lo), ctx)) / 2e-5;
                const double tol = std::max(1e-8, 1e-4 * std::max(std::abs(fd), std::abs(analytic(k))));
                const double excess = std::abs(analytic(k) - fd) / tol;
                worst_excess = std::max(worst_excess, excess);
                if (excess > 1.0) ++failures;
                ++components;
            }
        }
    }
    return {failures == 0, fmt("%d components over 60 pairs (n=1,2,3), %d outside tolerance, worst "
                               "deviation %.3f of tolerance", components, failures, worst_excess)};
}

// 3. Entropy-tangle plane: MLE fidelity band and MLE >= QD on mixed states.
Verdict plane_ordering() {
    ExperimentConfig cfg = default_config(Command::PlaneSweep);
    cfg.grid = 20;
    cfg.trials = 10;
    cfg.shots = 1e4;
    cfg.estimators = {Estimator::QuickDirty, Estimator::Mle};
    const std::vector<TrialResult> rows = run_plane_sweep(cfg);
    int in_band = 0;
    int above = 0;
    int below = 0;
    int errors = 0;
    std::vector<double> mle_mixed;
    std::vector<double> qd_mixed;
    std::vector<double> all_mle;
    for (const TrialResult& r : rows) {
        if (r.status != "ok") {
            ++errors;
            continue;
        }
        const double f = r.outcome(Estimator::Mle).fidelity;
        all_mle.push_back(f);
        if (f >= 0.90 && f <= 0.99) ++in_band;
        else if (f > 0.99) ++above;
        else ++below;
        if (r.s_linear > 0.7) {
            mle_mixed.push_back(f);
            qd_mixed.push_back(r.outcome(Estimator::QuickDirty).fidelity);
        }
    }
    std::sort(all_mle.begin(), all_mle.end());
    const double median = all_mle.empty() ? std::nan("") : all_mle[all_mle.size() / 2];
    const bool majority = 2 * in_band > static_cast<int>(rows.size());
    const bool ordering = !mle_mixed.empty() && mean(mle_mixed) >= mean(qd_mixed);
    return {majority && ordering && errors == 0,
            fmt("%zu trials: %d MLE fidelities in [0.90,0.99], %d above, %d below (median %.4f); "
                "S_linear>0.7 (%zu trials): mean MLE %.4f vs QD %.4f; %d errors",
                rows.size(), in_band, above, below, median, mle_mixed.size(), mean(mle_mixed),
                mean(qd_mixed), errors)};
}

// 4. Forced purity approaches MLE on pure entangled states.
Verdict werner_fp_vs_mle() {
    ExperimentConfig cfg = default_config(Command::WernerLine);
    cfg.qubits = {2, 3, 4};
    cfg.grid = 1;
    cfg.family.epsilon = 1.0;
    cfg.trials = 20;
    cfg.state_error = 0.05;
    cfg.estimators = {Estimator::ForcedPurity, Estimator::Mle};
    const std::vector<SummaryRow> summary = summarize(run_werner_line(cfg));
    bool ok = summary.size() == 3;
    std::ostringstream detail;
    for (const SummaryRow& s : summary) {
        const double fp = s.mean_fidelity[static_cast<std::size_t>(Estimator::ForcedPurity)];
        const double mle = s.mean_fidelity[static_cast<std::size_t>(Estimator::Mle)];
        ok = ok && std::abs(fp - mle) <= 0.05 && fp >= 0.9;
        detail << fmt("n=%d FP %.4f MLE %.4f; ", s.qubits, fp, mle);
    }
    return {ok, detail.str()};
}

// 5. Quick-and-dirty declines with qubit count while forced purity holds.
Verdict qd_decline() {
    ExperimentConfig cfg = default_config(Command::QdPurityScan);
    cfg.qubits = {2, 3, 4, 5};
    cfg.shots = 1e6;
    cfg.state_error = 0.05;
    cfg.tangle_points = 11;
    cfg.trials = 10;
    const std::vector<TrialResult> rows = run_qd_purity_scan(cfg);
    std::vector<double> n_values;
    std::vector<double> qd_values;
    std::vector<double> qd_mean;
    std::vector<double> fp_mean;
    std::ostringstream detail;
    for (int n : cfg.qubits) {
        std::vector<double> qd;
        std::vector<double> fp;
        for (const TrialResult& r : rows) {
            if (r.qubits != n) continue;
            qd.push_back(r.outcome(Estimator::QuickDirty).fidelity);
            fp.push_back(r.outcome(Estimator::ForcedPurity).fidelity);
            n_values.push_back(n);
            qd_values.push_back(qd.back());
        }
        qd_mean.push_back(mean(qd));
        fp_mean.push_back(mean(fp));
        detail << fmt("n=%d QD %.4f FP %.4f; ", n, qd_mean.back(), fp_mean.back());
    }
    bool decreasing = true;
    for (std::size_t k = 1; k < qd_mean.size(); ++k) decreasing = decreasing && qd_mean[k] < qd_mean[k - 1];
    const double rho = spearman(n_values, qd_values);
    // rank correlation z-score under the null of no trend
    const double z = rho * std::sqrt(static_cast<double>(n_values.size()) - 1.0);
    const bool fp_ok = std::all_of(fp_mean.begin(), fp_mean.end(), [](double f) { return f >= 0.9; });
    detail << fmt("Spearman rho %.3f (z %.1f)", rho, z);
    return {decreasing && z < -3.0 && fp_ok, detail.str()};
}

// 6. Auxiliary memory of linear inversion grows as 4^n.
Verdict memory_scaling() {
    std::vector<double> c;
    std::ostringstream detail;
    for (int n = 2; n <= 5; ++n) {
        RngStream rng(606, static_cast<std::uint64_t>(n));
        const MeasurementRecord rec = simulate_counts(random_density(n, rng), 1e4, kStokes, rng);
        AllocationStats stats;
        linear_reconstruct(rec, kStokes, {}, &stats);
        c.push_back(static_cast<double>(stats.peak) / static_cast<double>(pow4(n)));
        detail << fmt("n=%d peak %zu B (%.2f x 4^n); ", n, stats.peak, c.back());
    }
    const double ratio = *std::max_element(c.begin(), c.end()) / *std::min_element(c.begin(), c.end());
    detail << fmt("spread of c %.2f", ratio);
    return {ratio <= 4.0, detail.str()};
}

// 7. Runtime ordering of the estimators.
Verdict runtime_ordering() {
    ExperimentConfig cfg = default_config(Command::Benchmark);
    cfg.qubits = {2, 3, 4};
    cfg.trials = 5;
    const std::vector<TrialResult> rows = run_benchmark(cfg);
    std::vector<double> mle_ms;
    bool ok = true;
    std::ostringstream detail;
    for (int n : cfg.qubits) {
        std::vector<double> mle;
        std::vector<double> qd;
        std::vector<double> fp;
        for (const TrialResult& r : rows) {
            if (r.qubits != n) continue;
            mle.push_back(r.outcome(Estimator::Mle).time_ms);
            qd.push_back(r.outcome(Estimator::QuickDirty).time_ms);
            fp.push_back(r.outcome(Estimator::ForcedPurity).time_ms);
        }
        mle_ms.push_back(mean(mle));
        const double ratio = mean(mle) / mean(qd);
        ok = ok && ratio >= 50.0;
        detail << fmt("n=%d MLE %.2f ms QD %.3f ms FP %.3f ms (MLE/QD %.0f); ", n, mean(mle), mean(qd),
                      mean(fp), ratio);
    }
    for (std::size_t k = 1; k < mle_ms.size(); ++k) {
        const double growth = mle_ms[k] / mle_ms[k - 1];
        ok = ok && growth >= 8.0;
        detail << fmt("growth %d->%d %.1fx; ", cfg.qubits[k - 1], cfg.qubits[k], growth);
    }
    return {ok, detail.str()};
}

// 8. Property suites, re-checked end to end.
Verdict property_suites() {
    std::vector<std::string> failed;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) failed.push_back(what);
    };

    // Gamma orthonormality, n <= 3
    for (int n = 1; n <= 3; ++n) {
        std::vector<ComplexMatrix> g;
        for (std::uint64_t mu = 0; mu < pow4(n); ++mu) g.push_back(gamma_operator(mu, n));
        double worst = 0.0;
        for (std::size_t a = 0; a < g.size(); ++a)
            for (std::size_t b = 0; b < g.size(); ++b)
                worst = std::max(worst, std::abs(trace_product(g[a], g[b]) - Complex(a == b ? 1.0 : 0.0)));
        check(worst <= 1e-12, fmt("gamma orthonormality n=%d", n));
    }

    // physicality of every estimator output and metric bounds
    ExperimentConfig cfg = default_config(Command::Tomo);
    OptimizerConfig opt;
    for (int k = 0; k < 60; ++k) {
        const int n = 1 + k % 3;
        RngStream rng(808, static_cast<std::uint64_t>(k));
        const DensityMatrix truth = random_density(n, rng);
        const MeasurementRecord rec = simulate_counts(truth, 200, kStokes, rng);
        const DensityMatrix lin = linear_reconstruct(rec, kStokes);
        check(std::abs(lin.matrix.trace().real() - 1.0) <= 1e-9 && hermiticity_error(lin.matrix) <= 1e-10,
              "linear output Hermitian unit-trace");
        const DensityMatrix qd = quick_and_dirty(lin);
        const DensityMatrix fp = forced_purity(lin);
        const MleResult mle = mle_estimate(rec, kStokes, opt);
        for (const DensityMatrix* est : {&qd, &fp, &mle.estimate}) {
            check(is_physical(*est), "estimator output physical");
            const double f = fidelity(*est, truth);
            const double s = linear_entropy(*est);
            check(f >= 0.0 && f <= 1.0 && s >= -1e-9 && s <= 1.0 + 1e-9, "metric bounds");
            if (n == 2) {
                const double t = tangle(*est);
                check(t >= 0.0 && t <= 1.0, "tangle bounds");
            }
            check(std::abs(fidelity(*est, truth) - fidelity(truth, *est)) <= 1e-9, "fidelity symmetry");
        }
        check(std::abs((fp.matrix * fp.matrix).trace().real() - 1.0) <= 1e-10, "forced purity is pure");
        for (std::size_t i = 1; i < mle.report.objective_trace.size(); ++i)
            check(mle.report.objective_trace[i] <= mle.report.objective_trace[i - 1], "objective monotone");
    }

    // Poisson mean/variance band
    for (double lam : {100.0, 1e4}) {
        RngStream rng(809, static_cast<std::uint64_t>(lam));
        double sum = 0.0, sq = 0.0;
        const int draws = 100000;
        for (int k = 0; k < draws; ++k) {
            const double v = static_cast<double>(poisson_sample(lam, rng));
            sum += v;
            sq += v * v;
        }
        const double m = sum / draws;
        const double var = sq / draws - m * m;
        check(std::abs(m - lam) <= 3.0 * std::sqrt(lam / draws), fmt("Poisson mean lambda=%g", lam));
        check(m / var >= 0.95 && m / var <= 1.05, fmt("Poisson mean/variance lambda=%g", lam));
    }

    // deterministic reproducibility of seeded runs
    ExperimentConfig sweep = default_config(Command::PlaneSweep);
    sweep.grid = 2;
    sweep.trials = 2;
    sweep.record_timings = false;
    std::ostringstream a, b;
    write_trial_csv(a, run_plane_sweep(sweep));
    write_trial_csv(b, run_plane_sweep(sweep));
    check(a.str() == b.str(), "seeded sweep reproducible");

    // werner interpolation
    double prev = -1.0;
    for (int k = 0; k <= 20; ++k) {
        const double f = fidelity(werner_state(2, k / 20.0), ghz_state(2));
        check(f > prev, "werner fidelity monotone");
        prev = f;
    }

    std::ostringstream detail;
    if (failed.empty()) {
        detail << "gamma orthonormality, estimator physicality, metric bounds, Poisson band, "
                  "reproducibility, Werner monotonicity all hold";
    } else {
        std::sort(failed.begin(), failed.end());
        failed.erase(std::unique(failed.begin(), failed.end()), failed.end());
        detail << "failed:";
        for (const auto& f : failed) detail << ' ' << f << ';';
    }
    return {failed.empty(), detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "noiseless round-trip", noiseless_round_trip},
        {2, "gradient correctness", gradient_correctness},
        {3, "estimator ordering on the entropy-tangle plane", plane_ordering},
        {4, "forced purity vs MLE on the Werner line", werner_fp_vs_mle},
        {5, "quick-and-dirty decline with qubit count", qd_decline},
        {6, "linear inversion memory scaling", memory_scaling},
        {7, "runtime ordering", runtime_ordering},
        {8, "property suites", property_suites},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (v.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt("%.1f", secs)
                  << " s): " << v.detail << std::endl;
        if (!v.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
