#pragma once

// Anytime confidence widths for the ledger's rate estimate, plus the
// coin-toss search used to pick the heuristic width constants.
//
// Width families:
//   LilTheory     sqrt((3c/N) * (2*loglog(3cN/2) + log(2L/delta))),
//                 valid simultaneously over time and over an L-point grid.
//   LilHeuristic  C1 * sqrt((c/N) * (loglog(C2*c*N) + log(C3/delta))),
//                 same shape with empirically calibrated constants.
//   Hoeffding     sqrt(c * log(2/delta) / (2N)), fixed-time baseline.
//   None          0, no uncertainty margin at all.
//
// All loglog arguments use natural logs. Widths are +infinity while the
// evidence count is zero or the loglog argument is not safely above e,
// which callers treat as "nothing is certifiable yet".

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ledger.hpp"
#include "util.hpp"

namespace fprguard {

enum class PolicyKind { LilTheory, LilHeuristic, Hoeffding, None };

struct ConfidencePolicy {
    PolicyKind kind = PolicyKind::LilHeuristic;
    double delta = 0.2;       // coverage failure budget, in (0,1)
    double c1 = 0.5;          // LilHeuristic scale
    double c2 = 0.75;         // LilHeuristic loglog argument scale
    double c3 = 1.0;          // LilHeuristic delta numerator
    std::size_t grid_count = 1000;  // L, LilTheory union bound size

    static ConfidencePolicy lil_theory(double delta, std::size_t grid_count) {
        check_delta(delta);
        if (grid_count < 10)
            throw std::invalid_argument("ConfidencePolicy: grid_count must be at least 10");
        ConfidencePolicy p;
        p.kind = PolicyKind::LilTheory;
        p.delta = delta;
        p.grid_count = grid_count;
        return p;
    }

    static ConfidencePolicy lil_heuristic(double delta, double c1 = 0.5, double c2 = 0.75,
                                          double c3 = 1.0) {
        check_delta(delta);
        if (!(c1 > 0.0 && c2 > 0.0 && c3 > 0.0))
            throw std::invalid_argument("ConfidencePolicy: heuristic constants must be positive");
        ConfidencePolicy p;
        p.kind = PolicyKind::LilHeuristic;
        p.delta = delta;
        p.c1 = c1;
        p.c2 = c2;
        p.c3 = c3;
        return p;
    }

    static ConfidencePolicy hoeffding(double delta) {
        check_delta(delta);
        ConfidencePolicy p;
        p.kind = PolicyKind::Hoeffding;
        p.delta = delta;
        return p;
    }

    static ConfidencePolicy none() {
        ConfidencePolicy p;
        p.kind = PolicyKind::None;
        return p;
    }

private:
    static void check_delta(double delta) {
        if (!(delta > 0.0 && delta < 1.0))
            throw std::invalid_argument("ConfidencePolicy: delta must lie in (0,1)");
    }
};

inline double psi(const ConfidencePolicy& pol, const LedgerStats& st) {
    static constexpr double inf = std::numeric_limits<double>::infinity();
    static constexpr double e = 2.718281828459045235;

    if (pol.kind == PolicyKind::None) return 0.0;
    const auto n = static_cast<double>(st.n_ood);
    if (n == 0.0) return inf;
    const double c = st.c;

    switch (pol.kind) {
        case PolicyKind::Hoeffding:
            return std::sqrt(c * std::log(2.0 / pol.delta) / (2.0 * n));
        case PolicyKind::LilTheory: {
            const double arg = 1.5 * c * n;
            if (arg <= e) return inf;
            const double bracket = 2.0 * std::log(std::log(arg)) +
                                   std::log(2.0 * static_cast<double>(pol.grid_count) / pol.delta);
            return std::sqrt(3.0 * c / n * bracket);
        }
        case PolicyKind::LilHeuristic: {
            const double arg = pol.c2 * c * n;
            if (arg <= e) return inf;
            const double bracket = std::log(std::log(arg)) + std::log(pol.c3 / pol.delta);
            return pol.c1 * std::sqrt(c / n * bracket);
        }
        default:
            return 0.0;
    }
}

// First step u (1-based) at which c_u * N_u reaches the evidence level
// 173 * log(8/delta) that makes the theory width meaningful.
inline std::optional<std::size_t> n_zero(
    double delta, const std::vector<std::pair<double, std::size_t>>& c_and_n) {
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("n_zero: delta must lie in (0,1)");
    const double needed = 173.0 * std::log(8.0 / delta);
    for (std::size_t u = 0; u < c_and_n.size(); ++u) {
        const auto& [c, n] = c_and_n[u];
        if (c * static_cast<double>(n) >= needed) return u + 1;
    }
    return std::nullopt;
}

// ============================================================================
// Heuristic constant search
// ============================================================================

struct ConstantSearchCell {
    double c1 = 0.0;
    double c2 = 0.0;
    double delta = 0.0;
    double failure_fraction = 0.0;
};

struct ConstantSearchConfig {
    std::vector<double> c1_grid;
    std::vector<double> c2_grid;
    std::vector<double> deltas;
    std::size_t trials = 100;
    std::size_t horizon = 10000;
    double coin_mean = 0.5;
    std::uint64_t seed = 1;
};

// For every (C1, C2, delta) cell, tosses `trials` independent coins for
// `horizon` steps and reports the fraction of trials in which the running
// interval [mean_hat - width, mean_hat + width] ever missed the true mean.
// Trial seeds are derived from (seed, cell, trial), so the table is
// reproducible cell by cell.
inline std::vector<ConstantSearchCell> constant_search(const ConstantSearchConfig& cfg) {
    if (cfg.c1_grid.empty() || cfg.c2_grid.empty() || cfg.deltas.empty())
        throw config_error("constant_search: empty parameter grid");
    if (cfg.trials == 0 || cfg.horizon == 0)
        throw config_error("constant_search: trials and horizon must be positive");
    if (!(cfg.coin_mean > 0.0 && cfg.coin_mean < 1.0))
        throw config_error("constant_search: coin mean must lie in (0,1)");
    for (double c1 : cfg.c1_grid)
        if (!(c1 > 0.0)) throw config_error("constant_search: C1 values must be positive");
    for (double c2 : cfg.c2_grid)
        if (!(c2 > 0.0)) throw config_error("constant_search: C2 values must be positive");
    for (double d : cfg.deltas)
        if (!(d > 0.0 && d < 1.0)) throw config_error("constant_search: deltas must lie in (0,1)");

    std::vector<ConstantSearchCell> table;
    table.reserve(cfg.c1_grid.size() * cfg.c2_grid.size() * cfg.deltas.size());

    std::vector<double> width(cfg.horizon + 1);
    std::uint64_t cell_index = 0;
    for (double c1 : cfg.c1_grid) {
        for (double c2 : cfg.c2_grid) {
            for (double delta : cfg.deltas) {
                const ConfidencePolicy pol = ConfidencePolicy::lil_heuristic(delta, c1, c2, 1.0);
                // Width depends on t only; precompute once per cell.
                for (std::size_t t = 1; t <= cfg.horizon; ++t) {
                    LedgerStats st;
                    st.n_ood = t;
                    st.c = 1.0;
                    width[t] = psi(pol, st);
                }

                std::size_t failures = 0;
                for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
                    std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed + cell_index) + trial));
                    std::uniform_real_distribution<double> unit(0.0, 1.0);
                    double heads = 0.0;
                    for (std::size_t t = 1; t <= cfg.horizon; ++t) {
                        heads += unit(rng) < cfg.coin_mean ? 1.0 : 0.0;
                        const double mean_hat = heads / static_cast<double>(t);
                        if (std::fabs(mean_hat - cfg.coin_mean) > width[t]) {
                            ++failures;
                            break;
                        }
                    }
                }
                table.push_back(ConstantSearchCell{
                    c1, c2, delta,
                    static_cast<double>(failures) / static_cast<double>(cfg.trials)});
                ++cell_index;
            }
        }
    }
    return table;
}

}  // namespace fprguard
