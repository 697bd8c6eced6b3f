#pragma once

// Simulation harness: runs the controller against labeled score streams,
// records per-step metrics against analytic (or pool-empirical) truth, and
// reduces runs to summaries and cross-seed trends.
//
// Each seed owns its stream and controller; seeds are independent and run
// in parallel when the machine has more than one core. The per-seed summary
// is computed streamingly, so callers that only need summaries can skip row
// storage and keep memory flat over long horizons.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "controller.hpp"
#include "scores.hpp"
#include "solver.hpp"
#include "util.hpp"

namespace fprguard {

struct ExperimentConfig {
    StreamConfig stream;         // per-run: stream.seed is replaced by the run seed
    ControllerConfig controller; // per-run: controller.seed is derived from the run seed
    std::vector<std::uint64_t> seeds;
    std::vector<double> eta_levels{0.01, 0.015, 0.02, 0.025};
    bool record_rows = true;
};

struct MetricsRow {
    std::uint64_t t = 0;
    double lambda_hat = 0.0;
    double fpr_true = 0.0;
    double tpr_true = 0.0;
    double fpr_hat = 0.0;  // nan while the ledger has no evidence
    double psi = 0.0;      // inf while the width is not yet meaningful
    std::uint64_t n_ood = 0;
    std::uint64_t n_ood_imp = 0;
    std::uint64_t queried_cum = 0;
    bool feasible = false;
    bool change = false;
    bool restart = false;
};

struct RunSummary {
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> t_feasible;  // first step with a feasible solve
    // Per eta level: first step from which fpr_true(lambda_star) - fpr_true
    // stays within eta; not reached if a violation lands in the final 1%.
    std::vector<std::pair<double, std::optional<std::uint64_t>>> t_eta;
    double max_fpr_post_feasibility = std::numeric_limits<double>::quiet_NaN();
    double mean_queried_fraction = 0.0;
    std::optional<std::uint64_t> change_detect_t;  // first detection in the shifted regime
    std::optional<std::uint64_t> n_zero_t;         // evidence threshold diagnostic
};

struct RunResult {
    RunSummary summary;
    std::vector<MetricsRow> rows;  // empty when record_rows is off
};

struct TrendRow {
    std::uint64_t t = 0;
    double fpr_true_mean = 0.0, fpr_true_std = 0.0;
    double tpr_true_mean = 0.0, tpr_true_std = 0.0;
    double lambda_hat_mean = 0.0, lambda_hat_std = 0.0;
};

// ============================================================================
// Ground truth per phase
// ============================================================================

namespace detail {

struct PhaseRates {
    bool ood_gaussian = true;
    GaussianSpec ood;
    std::vector<double> ood_sorted;
    bool id_gaussian = true;
    GaussianSpec id;
    std::vector<double> id_sorted;
    double lambda_star = 0.0;
    double fpr_at_star = 0.0;
    std::uint64_t start_t = 1;

    double fpr(double lambda) const {
        return ood_gaussian ? analytic_fpr(ood, lambda) : rate_above(ood_sorted, lambda);
    }
    double tpr(double lambda) const {
        return id_gaussian ? analytic_tpr(id, lambda) : rate_above(id_sorted, lambda);
    }
};

inline std::vector<PhaseRates> build_rates(const StreamConfig& cfg, double alpha) {
    std::vector<PhaseRates> rates;
    rates.reserve(cfg.phases.size());
    for (const auto& ph : cfg.phases) {
        PhaseRates r;
        r.start_t = ph.start_t;
        if (const auto* g = std::get_if<GaussianSpec>(&ph.ood_source)) {
            r.ood = *g;
            r.lambda_star = optimal_threshold(*g, alpha);
        } else {
            r.ood_gaussian = false;
            r.ood_sorted = std::get<PoolSource>(ph.ood_source).scores;
            std::sort(r.ood_sorted.begin(), r.ood_sorted.end());
            r.lambda_star = empirical_threshold(r.ood_sorted, alpha);
        }
        if (const auto* g = std::get_if<GaussianSpec>(&ph.id_source)) {
            r.id = *g;
        } else {
            r.id_gaussian = false;
            r.id_sorted = std::get<PoolSource>(ph.id_source).scores;
            std::sort(r.id_sorted.begin(), r.id_sorted.end());
        }
        r.fpr_at_star = r.fpr(r.lambda_star);
        rates.push_back(std::move(r));
    }
    return rates;
}

class SampleOracle final : public LabelOracle {
public:
    int label = 0;

protected:
    int get_label(std::uint64_t, double) override { return label; }
};

inline double sample_std(double sum, double sum_sq, std::size_t n) {
    if (n < 2) return 0.0;
    const double dn = static_cast<double>(n);
    const double var = (sum_sq - sum * sum / dn) / (dn - 1.0);
    return var > 0.0 ? std::sqrt(var) : 0.0;
}

}  // namespace detail

// ============================================================================
// Experiment driver
// ============================================================================

inline RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
    StreamConfig scfg = cfg.stream;
    scfg.seed = seed;
    ControllerConfig ccfg = cfg.controller;
    ccfg.seed = mix_seed(seed ^ 0x6A09E667F3BCC909ULL);

    ScoreStream stream(scfg);
    Controller ctrl(ccfg);
    detail::SampleOracle oracle;
    const auto rates = detail::build_rates(scfg, ccfg.alpha);

    RunResult run;
    run.summary.seed = seed;
    if (cfg.record_rows) run.rows.reserve(scfg.horizon);

    std::vector<std::optional<std::uint64_t>> last_violation(cfg.eta_levels.size());
    const double evidence_needed = 173.0 * std::log(8.0 / ccfg.delta);
    const std::uint64_t detect_from = scfg.phases.size() > 1 ? scfg.phases[1].start_t : 1;

    std::size_t phase = 0;
    while (auto sample = stream.next()) {
        const std::uint64_t t = sample->t;
        while (phase + 1 < rates.size() && rates[phase + 1].start_t <= t) ++phase;
        const detail::PhaseRates& truth = rates[phase];

        oracle.label = sample->label;
        const StepOutcome out = ctrl.step(t, sample->score, oracle);

        const double fpr_true = truth.fpr(out.lambda_after);
        const double tpr_true = truth.tpr(out.lambda_after);

        RunSummary& s = run.summary;
        if (out.feasible && !s.t_feasible) s.t_feasible = t;
        if (s.t_feasible) {
            if (std::isnan(s.max_fpr_post_feasibility) || fpr_true > s.max_fpr_post_feasibility)
                s.max_fpr_post_feasibility = fpr_true;
        }
        for (std::size_t i = 0; i < cfg.eta_levels.size(); ++i)
            if (truth.fpr_at_star - fpr_true > cfg.eta_levels[i]) last_violation[i] = t;
        if (out.change_detected && !s.change_detect_t && t >= detect_from) s.change_detect_t = t;
        if (!s.n_zero_t) {
            const LedgerStats st = ctrl.ledger().stats();
            if (st.c * static_cast<double>(st.n_ood) >= evidence_needed) s.n_zero_t = t;
        }

        if (cfg.record_rows) {
            const LedgerStats st = ctrl.ledger().stats();
            const auto est = ctrl.ledger().fpr_estimate(out.lambda_after);
            MetricsRow row;
            row.t = t;
            row.lambda_hat = out.lambda_after;
            row.fpr_true = fpr_true;
            row.tpr_true = tpr_true;
            row.fpr_hat = est ? *est : std::numeric_limits<double>::quiet_NaN();
            row.psi = psi(ctrl.effective_policy(), st);
            row.n_ood = st.n_ood;
            row.n_ood_imp = st.n_ood_importance;
            row.queried_cum = oracle.query_count();
            row.feasible = out.feasible;
            row.change = out.change_detected;
            row.restart = out.restarted;
            run.rows.push_back(row);
        }
    }

    RunSummary& s = run.summary;
    s.mean_queried_fraction =
        static_cast<double>(oracle.query_count()) / static_cast<double>(scfg.horizon);
    const std::uint64_t cutoff = scfg.horizon - scfg.horizon / 100;  // final 1% excluded
    for (std::size_t i = 0; i < cfg.eta_levels.size(); ++i) {
        std::optional<std::uint64_t> reached;
        if (!last_violation[i])
            reached = 1;
        else if (*last_violation[i] <= cutoff)
            reached = *last_violation[i] + 1;
        s.t_eta.emplace_back(cfg.eta_levels[i], reached);
    }
    return run;
}

inline std::vector<RunResult> run_experiment(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) throw config_error("experiment: at least one seed is required");
    for (double eta : cfg.eta_levels)
        if (!(eta > 0.0 && eta < 1.0))
            throw config_error("experiment: eta levels must lie in (0,1)");
    validate_stream_config(cfg.stream);

    std::vector<RunResult> results(cfg.seeds.size());
    const std::size_t workers =
        std::min<std::size_t>(cfg.seeds.size(), std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
            results[i] = run_single(cfg, cfg.seeds[i]);
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < cfg.seeds.size(); i = next.fetch_add(1))
                results[i] = run_single(cfg, cfg.seeds[i]);
        });
    }
    for (auto& th : pool) th.join();
    return results;
}

// ============================================================================
// Fixed-percentile baseline
// ============================================================================

// Classic static calibration: the threshold is the 5th percentile of the
// initial in-distribution law, so 95% of in-distribution samples score above
// it. No adaptation, no feedback; flagged samples are the query load.
inline std::vector<MetricsRow> tpr95_baseline(const StreamConfig& cfg) {
    validate_stream_config(cfg);
    double lambda = 0.0;
    if (const auto* g = std::get_if<GaussianSpec>(&cfg.phases.front().id_source)) {
        lambda = g->mu + g->sigma * normal_quantile(0.05);
    } else {
        auto sorted = std::get<PoolSource>(cfg.phases.front().id_source).scores;
        std::sort(sorted.begin(), sorted.end());
        lambda = empirical_quantile(sorted, 0.05);
    }

    const auto rates = detail::build_rates(cfg, 0.05);
    ScoreStream stream(cfg);
    std::vector<MetricsRow> rows;
    rows.reserve(cfg.horizon);
    std::uint64_t queried = 0;
    std::size_t phase = 0;
    while (auto sample = stream.next()) {
        while (phase + 1 < rates.size() && rates[phase + 1].start_t <= sample->t) ++phase;
        if (sample->score <= lambda) ++queried;
        MetricsRow row;
        row.t = sample->t;
        row.lambda_hat = lambda;
        row.fpr_true = rates[phase].fpr(lambda);
        row.tpr_true = rates[phase].tpr(lambda);
        row.fpr_hat = std::numeric_limits<double>::quiet_NaN();
        row.psi = std::numeric_limits<double>::quiet_NaN();
        row.queried_cum = queried;
        row.feasible = true;
        rows.push_back(row);
    }
    return rows;
}

// ============================================================================
// Aggregation
// ============================================================================

inline std::vector<TrendRow> aggregate_trend(const std::vector<RunResult>& runs) {
    if (runs.empty()) throw config_error("aggregate: no runs");
    const std::size_t len = runs.front().rows.size();
    if (len == 0) throw config_error("aggregate: runs carry no rows");
    for (const auto& r : runs)
        if (r.rows.size() != len)
            throw config_error("aggregate: runs have mismatched horizons");

    std::vector<TrendRow> trend(len);
    for (std::size_t i = 0; i < len; ++i) {
        double f = 0, f2 = 0, tp = 0, tp2 = 0, l = 0, l2 = 0;
        for (const auto& r : runs) {
            const MetricsRow& row = r.rows[i];
            if (row.t != runs.front().rows[i].t)
                throw config_error("aggregate: runs have mismatched time axes");
            f += row.fpr_true;
            f2 += row.fpr_true * row.fpr_true;
            tp += row.tpr_true;
            tp2 += row.tpr_true * row.tpr_true;
            l += row.lambda_hat;
            l2 += row.lambda_hat * row.lambda_hat;
        }
        const auto n = runs.size();
        const double dn = static_cast<double>(n);
        trend[i] = TrendRow{runs.front().rows[i].t,
                            f / dn,  detail::sample_std(f, f2, n),
                            tp / dn, detail::sample_std(tp, tp2, n),
                            l / dn,  detail::sample_std(l, l2, n)};
    }
    return trend;
}

// Median with "not reached" sorting above every finite value; the median is
// only defined when more than half the runs reached detection.
inline std::optional<double> median_time(std::vector<std::optional<std::uint64_t>> times) {
    if (times.empty()) return std::nullopt;
    std::sort(times.begin(), times.end(), [](const auto& a, const auto& b) {
        if (a && b) return *a < *b;
        return a.has_value() && !b.has_value();
    });
    const auto& lo = times[(times.size() - 1) / 2];
    const auto& hi = times[times.size() / 2];
    if (!lo || !hi) return std::nullopt;
    return (static_cast<double>(*lo) + static_cast<double>(*hi)) / 2.0;
}

// ============================================================================
// Predicted bounds
// ============================================================================

// Expected worst-case step count until k out-of-distribution arrivals, at
// failure budget delta: 2k/gamma + log(1/delta)/gamma^2.
inline double arrival_time_bound(double k, double gamma, double delta) {
    if (!(gamma > 0.0 && gamma < 1.0) || !(delta > 0.0 && delta < 1.0) || !(k > 0.0))
        throw config_error("arrival_time_bound: need k > 0 and gamma, delta in (0,1)");
    return 2.0 * k / gamma + std::log(1.0 / delta) / (gamma * gamma);
}

struct PredictedBounds {
    double t_feasibility = 0.0;  // steps until a feasible threshold exists
    double t_eta = 0.0;          // steps until eta-optimality
    double n_feasibility = 0.0;  // labeled evidence needed for feasibility
    double n_eta = 0.0;          // labeled evidence needed for eta-optimality
};

inline PredictedBounds predicted_bounds(double gamma, double alpha, double eta, double delta,
                                        double p, std::size_t grid_count) {
    for (double v : {gamma, alpha, eta, delta, p})
        if (!(v > 0.0 && v < 1.0))
            throw config_error("predicted_bounds: rates and budgets must lie in (0,1)");
    if (grid_count < 10) throw config_error("predicted_bounds: grid_count must be at least 10");

    const double c0 = 1.0 / (p * p);
    const double a1 = 10.0 * (c0 + 1.0);                   // evidence scale
    const double a2 = static_cast<double>(grid_count);     // union bound over the grid
    const double a3 = 5.0 * (c0 + 1.0);                    // loglog argument scale
    const double tail = std::log(4.0 / delta) / (gamma * gamma);

    PredictedBounds b;
    b.n_feasibility = a1 / (alpha * alpha) * std::log(a2 / delta * std::log(a3 / alpha));
    b.n_eta = 40.0 * (c0 + 1.0) / (eta * eta) *
              std::log(a2 / delta * std::log(10.0 * (c0 + 1.0) / eta));
    b.t_feasibility =
        2.0 * a1 / (gamma * alpha * alpha) * std::log(4.0 * a2 / delta * std::log(a3 / alpha)) +
        tail;
    b.t_eta = 8.0 * a1 / (gamma * eta * eta) *
                  std::log(4.0 * a2 / delta * std::log(2.0 * a3 / eta)) +
              tail;
    return b;
}

}  // namespace fprguard
