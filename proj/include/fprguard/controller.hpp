#pragma once

// Streaming threshold controller.
//
// Per step, with operating threshold lambda from the previous step:
//   1. Scores at or below lambda are sent to the expert; scores above it are
//      sent with probability p (importance sampling, weight 1/p).
//   2. Expert answers land in the ledger: out-of-distribution scores in the
//      main ledger, in-distribution ones in a diagnostic ledger.
//   3. With detection enabled and armed, the change criterion is evaluated
//      at the threshold that was in force; on detection with restart
//      enabled, ledgers are cleared and the threshold snaps to lambda_max.
//   4. Otherwise the grid solve runs on the updated ledger.
//   5. The emitted decision is the expert label when one was requested,
//      else the sign of (score - lambda) with the fresh threshold.
//
// Threshold updates keep the smallest solver output seen since the last
// restart ("certified descent"). A width-backed certificate established at
// any past step keeps its coverage under a stationary stream, so moving
// back up only because newer evidence is noisier would discard certified
// ground; it would also make the change criterion compare the ledger
// against a threshold that already chased the drift it is meant to expose.
// The None policy carries no certificates and tracks the raw solve output,
// hovering at the estimate boundary; that contrast is intentional.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>

#include "confidence.hpp"
#include "ledger.hpp"
#include "solver.hpp"
#include "util.hpp"

namespace fprguard {

struct ControllerConfig {
    double alpha = 0.05;  // false positive rate budget
    double delta = 0.2;   // certificate failure budget
    double p = 0.2;       // importance-sampling rate for scores above threshold
    ThresholdGrid grid = ThresholdGrid::with_points(-30.0, 29.5, 1001);
    ConfidencePolicy policy = ConfidencePolicy::lil_heuristic(0.2);
    WindowPolicy window;
    DenominatorMode denominator = DenominatorMode::Realized;
    bool change_detection = false;
    bool restart_on_change = false;
    std::uint64_t seed = 1;
};

// Answers ground-truth label requests; query() counts every request.
class LabelOracle {
public:
    virtual ~LabelOracle() = default;

    int query(std::uint64_t t, double score) {
        ++queries_;
        return get_label(t, score);
    }

    std::uint64_t query_count() const { return queries_; }

protected:
    virtual int get_label(std::uint64_t t, double score) = 0;

private:
    std::uint64_t queries_ = 0;
};

class CallbackOracle final : public LabelOracle {
public:
    explicit CallbackOracle(std::function<int(std::uint64_t, double)> fn) : fn_(std::move(fn)) {}

protected:
    int get_label(std::uint64_t t, double score) override { return fn_(t, score); }

private:
    std::function<int(std::uint64_t, double)> fn_;
};

struct StepOutcome {
    std::uint64_t t = 0;
    double score = 0.0;
    bool queried = false;
    bool via_importance = false;  // labeled through the sampling coin
    int label = 0;                // expert answer when queried, else 0
    int decision = 0;             // +1 in-distribution, -1 out-of-distribution
    double lambda_gate = 0.0;     // threshold that gated this sample
    double lambda_after = 0.0;    // operating threshold after this step
    bool feasible = false;        // this step's solve found a feasible point
    bool change_detected = false;
    bool restarted = false;
};

// Raw change criterion: the estimate's lower confidence edge at the
// operating threshold exceeds the budget. No evidence or an infinite
// width can never witness a change.
inline bool change_criterion(std::optional<double> estimate, double width, double alpha) {
    if (!estimate.has_value() || !std::isfinite(width)) return false;
    return *estimate - width > alpha;
}

class Controller {
public:
    explicit Controller(ControllerConfig cfg)
        : cfg_(std::move(cfg)),
          ledger_(checked(cfg_).p, cfg_.window, cfg_.denominator),
          id_ledger_(cfg_.p, cfg_.window, cfg_.denominator),
          rng_(cfg_.seed),
          lambda_(cfg_.grid.lambda_max()) {
        policy_ = cfg_.policy;
        // The theory width is invoked at half the failure budget (the other
        // half covers the feasibility argument); the calibrated widths take
        // the configured budget as-is. The policy's own delta field is
        // derived from cfg.delta here, it is not read from cfg.policy.
        policy_.delta = policy_.kind == PolicyKind::LilTheory ? cfg_.delta / 2.0 : cfg_.delta;
        if (policy_.kind == PolicyKind::LilTheory) policy_.grid_count = cfg_.grid.segments();
        keep_min_ = policy_.kind != PolicyKind::None;
    }

    // One stream sample. If the oracle throws, no ledger or threshold state
    // has been touched and the caller may retry the same sample.
    StepOutcome step(std::uint64_t t, double score, LabelOracle& oracle) {
        StepOutcome out;
        out.t = t;
        out.score = score;
        out.lambda_gate = lambda_;

        if (score <= lambda_) {
            out.queried = true;
        } else if (unit_(rng_) < cfg_.p) {
            out.queried = true;
            out.via_importance = true;
        }

        if (out.queried) {
            out.label = oracle.query(t, score);
            if (out.label == -1)
                ledger_.record_ood(t, score, out.via_importance);
            else
                id_ledger_.record_ood(t, score, out.via_importance);
        }

        if (cfg_.change_detection && change_armed_ && detect_change()) {
            out.change_detected = true;
            if (cfg_.restart_on_change) {
                restart();
                out.restarted = true;
            }
        }

        if (!out.restarted) {
            const SolveResult res = solve(ledger_, policy_, cfg_.grid, cfg_.alpha);
            out.feasible = res.feasible;
            if (res.feasible) {
                if (!first_feasible_since_restart_) first_feasible_since_restart_ = t;
                change_armed_ = true;
                lambda_ = keep_min_ ? std::min(lambda_, res.lambda) : res.lambda;
            } else if (!keep_min_) {
                lambda_ = cfg_.grid.lambda_max();
            }
            // keep_min_ retains the standing threshold on an infeasible
            // solve; before first feasibility that is lambda_max anyway
        }

        out.lambda_after = lambda_;
        out.decision = out.queried ? out.label : (score > lambda_ ? 1 : -1);
        ++steps_;
        return out;
    }

    // Change criterion at the current operating threshold over current
    // evidence. The controller itself only acts on it while armed (a
    // feasible solve has happened since the last restart).
    bool detect_change() const {
        return change_criterion(ledger_.fpr_estimate(lambda_), psi(policy_, ledger_.stats()),
                                cfg_.alpha);
    }

    // Forget all evidence and route everything to the expert again.
    // The sampling rng and the step count are not reset.
    void restart() {
        ledger_.reset();
        id_ledger_.reset();
        lambda_ = cfg_.grid.lambda_max();
        change_armed_ = false;
        first_feasible_since_restart_.reset();
    }

    double threshold() const { return lambda_; }
    bool change_armed() const { return change_armed_; }
    std::optional<std::uint64_t> first_feasible_since_restart() const {
        return first_feasible_since_restart_;
    }
    std::uint64_t steps() const { return steps_; }
    const FeedbackLedger& ledger() const { return ledger_; }
    const FeedbackLedger& id_ledger() const { return id_ledger_; }
    const ControllerConfig& config() const { return cfg_; }
    const ConfidencePolicy& effective_policy() const { return policy_; }

private:
    static const ControllerConfig& checked(const ControllerConfig& cfg) {
        if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
            throw config_error("controller: alpha must lie in (0,1)");
        if (!(cfg.delta > 0.0 && cfg.delta < 1.0))
            throw config_error("controller: delta must lie in (0,1)");
        if (!(cfg.p > 0.0 && cfg.p < 1.0))
            throw config_error("controller: p must lie in (0,1)");
        if (cfg.grid.segments() < 10)
            throw config_error("controller: the threshold grid needs at least 10 segments");
        if (cfg.restart_on_change && !cfg.change_detection)
            throw config_error("controller: restart_on_change requires change_detection");
        if (cfg.change_detection && cfg.policy.kind == PolicyKind::None)
            throw config_error("controller: change detection requires an uncertainty-aware policy");
        return cfg;
    }

    ControllerConfig cfg_;
    ConfidencePolicy policy_;  // effective: delta derived from cfg.delta
    FeedbackLedger ledger_;
    FeedbackLedger id_ledger_;  // diagnostic record of in-distribution feedback
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    double lambda_;
    bool keep_min_ = true;
    bool change_armed_ = false;
    std::optional<std::uint64_t> first_feasible_since_restart_;
    std::uint64_t steps_ = 0;
};

}  // namespace fprguard
