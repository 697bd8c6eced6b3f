#pragma once

// Threshold selection over a fixed grid.
//
// A grid point lambda_k is feasible when estimate(lambda_k) + width <= alpha.
// Because the estimate is non-increasing in lambda and the width does not
// depend on lambda, feasibility is monotone across the grid, so the smallest
// feasible point can be found by binary search with at most
// ceil(log2(L+1)) + 1 estimate probes. solve_linear scans every point and
// exists as an independently-written oracle for the binary search; the two
// must agree exactly and both are kept on purpose.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "confidence.hpp"
#include "ledger.hpp"

namespace fprguard {

class ThresholdGrid {
public:
    // Grid points lambda_min + k * nu for k in 0..L with L = round(span/nu).
    ThresholdGrid(double lambda_min, double lambda_max, double nu) {
        validate_range(lambda_min, lambda_max);
        if (!(nu > 0.0) || !std::isfinite(nu))
            throw std::invalid_argument("ThresholdGrid: nu must be positive and finite");
        min_ = lambda_min;
        max_ = lambda_max;
        segments_ = static_cast<std::size_t>(std::llround((lambda_max - lambda_min) / nu));
        if (segments_ == 0 && lambda_min < lambda_max)
            throw std::invalid_argument("ThresholdGrid: nu is too coarse for the range");
    }

    static ThresholdGrid with_points(double lambda_min, double lambda_max, std::size_t points) {
        if (points == 0) throw std::invalid_argument("ThresholdGrid: need at least one point");
        validate_range(lambda_min, lambda_max);
        if (points == 1 && lambda_min < lambda_max)
            throw std::invalid_argument("ThresholdGrid: one point requires lambda_min == lambda_max");
        if (points > 1 && lambda_min == lambda_max)
            throw std::invalid_argument("ThresholdGrid: several points require a nonempty range");
        ThresholdGrid g;
        g.min_ = lambda_min;
        g.max_ = lambda_max;
        g.segments_ = points - 1;
        return g;
    }

    double lambda_min() const { return min_; }
    double lambda_max() const { return max_; }
    std::size_t segments() const { return segments_; }            // L
    std::size_t point_count() const { return segments_ + 1; }     // L + 1
    double nu() const {
        return segments_ == 0 ? 0.0 : (max_ - min_) / static_cast<double>(segments_);
    }

    // Exact at both endpoints, monotone in k.
    double point(std::size_t k) const {
        if (segments_ == 0) return min_;
        return min_ + (max_ - min_) * (static_cast<double>(k) / static_cast<double>(segments_));
    }

private:
    ThresholdGrid() = default;

    static void validate_range(double lambda_min, double lambda_max) {
        if (!std::isfinite(lambda_min) || !std::isfinite(lambda_max) || lambda_min > lambda_max)
            throw std::invalid_argument("ThresholdGrid: need lambda_min <= lambda_max, finite");
    }

    double min_ = 0.0;
    double max_ = 0.0;
    std::size_t segments_ = 0;
};

struct SolveResult {
    bool feasible = false;
    double lambda = 0.0;  // chosen point, or lambda_max when infeasible
};

// Smallest index in [0, count) satisfying a monotone predicate (false...true),
// or nullopt. The predicate is probed at most ceil(log2(count)) + 1 times.
template <class Pred>
std::optional<std::size_t> leftmost_true(std::size_t count, Pred&& pred) {
    if (count == 0) return std::nullopt;
    if (!pred(count - 1)) return std::nullopt;
    std::size_t lo = 0, hi = count - 1;  // hi is always a known-true index
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (pred(mid))
            hi = mid;
        else
            lo = mid + 1;
    }
    return hi;
}

namespace detail {

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("solve: alpha must lie in (0,1)");
}

}  // namespace detail

inline SolveResult solve(const FeedbackLedger& ledger, const ConfidencePolicy& policy,
                         const ThresholdGrid& grid, double alpha) {
    detail::check_alpha(alpha);
    const double width = psi(policy, ledger.stats());
    if (ledger.empty() || !std::isfinite(width)) return {false, grid.lambda_max()};

    const auto idx = leftmost_true(grid.point_count(), [&](std::size_t k) {
        const auto est = ledger.fpr_estimate(grid.point(k));
        return est && *est + width <= alpha;
    });
    if (!idx) return {false, grid.lambda_max()};
    return {true, grid.point(*idx)};
}

inline SolveResult solve_linear(const FeedbackLedger& ledger, const ConfidencePolicy& policy,
                                const ThresholdGrid& grid, double alpha) {
    detail::check_alpha(alpha);
    const double width = psi(policy, ledger.stats());
    if (ledger.empty() || !std::isfinite(width)) return {false, grid.lambda_max()};

    for (std::size_t k = 0; k < grid.point_count(); ++k) {
        const auto est = ledger.fpr_estimate(grid.point(k));
        if (est && *est + width <= alpha) return {true, grid.point(k)};
    }
    return {false, grid.lambda_max()};
}

}  // namespace fprguard
