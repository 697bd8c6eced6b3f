#pragma once

// Ledger of expert-labeled out-of-distribution scores.
//
// Every record carries an inverse-propensity weight: 1 for scores the expert
// labeled because they fell at or below the operating threshold, 1/p for
// scores that were routed to the expert by the importance-sampling coin.
// The weighted fraction of records above a probe threshold estimates the
// false positive rate at that threshold.
//
// fpr_estimate is probed many times per step by the threshold solver, so the
// ledger maintains a bucketed Fenwick index over scores instead of scanning
// records per probe. Queries are exact: buckets strictly above the probe are
// summed through the Fenwick tree and only the probe's own bucket is scanned.
// With the weights used in practice (1 and 1/p for round p) all index
// arithmetic is integer-valued in doubles, so indexed sums match a direct
// scan of records() bit for bit.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "util.hpp"

namespace fprguard {

struct FeedbackRecord {
    std::uint64_t t = 0;
    double score = 0.0;
    double weight = 1.0;  // via_importance ? 1/p : 1
    bool via_importance = false;
};

struct LedgerStats {
    std::size_t n_ood = 0;             // records currently held
    std::size_t n_ood_importance = 0;  // of which importance-sampled
    double beta = 0.0;                 // n_ood_importance / n_ood, 0 when empty
    double c = 1.0;                    // 1 - beta + beta/p^2, in [1, 1/p^2]
};

// Bounded memory: keep only the most recent `size` records. No value means
// the ledger keeps everything.
struct WindowPolicy {
    std::optional<std::size_t> size;
};

// What fpr_estimate divides by. Realized uses the count of held records.
// LatentCount uses the summed weights, i.e. a Horvitz-Thompson estimate of
// how many out-of-distribution samples arrived, labeled or not.
enum class DenominatorMode { Realized, LatentCount };

namespace detail {

// Exact weighted count of stored scores strictly above a query point,
// under inserts and erases. Buckets cover [lo, hi); scores outside fall
// into underflow/overflow buckets and trigger a re-span when they pile up.
class WeightedScoreIndex {
public:
    WeightedScoreIndex() { reset_span(-1.0, 1.0); }

    std::uint32_t insert(double score, double weight) {
        std::uint32_t id;
        if (!free_.empty()) {
            id = free_.back();
            free_.pop_back();
            entries_[id] = Entry{score, weight, 0, 0};
        } else {
            id = static_cast<std::uint32_t>(entries_.size());
            entries_.push_back(Entry{score, weight, 0, 0});
        }
        place(id);
        ++live_;
        maybe_respan();
        return id;
    }

    void erase(std::uint32_t id) {
        Entry& e = entries_[id];
        auto& vec = buckets_[e.bucket];
        const std::uint32_t moved = vec.back();
        vec[e.pos] = moved;
        entries_[moved].pos = e.pos;
        vec.pop_back();
        fenwick_add(e.bucket, -e.weight);
        free_.push_back(id);
        --live_;
    }

    double weight_above(double lambda) const {
        if (live_ == 0) return 0.0;
        const std::size_t b = bucket_of(lambda);
        double sum = fenwick_suffix(b + 1);
        for (std::uint32_t id : buckets_[b])
            if (entries_[id].score > lambda) sum += entries_[id].weight;
        return sum;
    }

    void clear() {
        entries_.clear();
        free_.clear();
        live_ = 0;
        reset_span(-1.0, 1.0);
    }

    std::size_t size() const { return live_; }

private:
    struct Entry {
        double score;
        double weight;
        std::uint32_t bucket;
        std::uint32_t pos;
    };

    static constexpr std::size_t kCoreBuckets = 2048;
    static constexpr std::size_t kSpillLimit = 64;

    // bucket 0 = underflow, 1..K = core, K+1 = overflow
    std::size_t bucket_of(double x) const {
        if (!(x >= lo_)) return 0;
        if (x >= hi_) return kCoreBuckets + 1;
        const auto b = static_cast<std::size_t>((x - lo_) * inv_width_);
        return 1 + (b >= kCoreBuckets ? kCoreBuckets - 1 : b);
    }

    void place(std::uint32_t id) {
        Entry& e = entries_[id];
        const std::size_t b = bucket_of(e.score);
        e.bucket = static_cast<std::uint32_t>(b);
        e.pos = static_cast<std::uint32_t>(buckets_[b].size());
        buckets_[b].push_back(id);
        fenwick_add(b, e.weight);
    }

    void reset_span(double lo, double hi) {
        lo_ = lo;
        hi_ = hi;
        inv_width_ = static_cast<double>(kCoreBuckets) / (hi_ - lo_);
        buckets_.assign(kCoreBuckets + 2, {});
        tree_.assign(kCoreBuckets + 3, 0.0);
    }

    // Re-span when scores spill outside [lo, hi); keeps boundary scans short
    // as the score law drifts.
    void maybe_respan() {
        if (buckets_[0].size() <= kSpillLimit && buckets_[kCoreBuckets + 1].size() <= kSpillLimit)
            return;
        double mn = std::numeric_limits<double>::infinity();
        double mx = -mn;
        std::vector<std::uint32_t> ids;
        ids.reserve(live_);
        for (const auto& vec : buckets_)
            for (std::uint32_t id : vec) {
                ids.push_back(id);
                mn = std::min(mn, entries_[id].score);
                mx = std::max(mx, entries_[id].score);
            }
        const double span = mx > mn ? mx - mn : 1.0;
        reset_span(mn - 0.25 * span, mx + 0.25 * span + 1e-9);
        for (std::uint32_t id : ids) place(id);
    }

    void fenwick_add(std::size_t bucket, double w) {
        for (std::size_t i = bucket + 1; i < tree_.size(); i += i & (~i + 1)) tree_[i] += w;
    }

    double fenwick_prefix(std::size_t count) const {  // sum of buckets [0, count)
        double s = 0.0;
        for (std::size_t i = count; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

    double fenwick_suffix(std::size_t from_bucket) const {
        return fenwick_prefix(kCoreBuckets + 2) - fenwick_prefix(from_bucket);
    }

    std::vector<Entry> entries_;
    std::vector<std::uint32_t> free_;
    std::vector<std::vector<std::uint32_t>> buckets_;
    std::vector<double> tree_;
    std::size_t live_ = 0;
    double lo_ = -1.0, hi_ = 1.0, inv_width_ = 1.0;
};

}  // namespace detail

class FeedbackLedger {
public:
    explicit FeedbackLedger(double p, WindowPolicy window = {},
                            DenominatorMode mode = DenominatorMode::Realized)
        : p_(p), window_(window), mode_(mode) {
        if (!(p > 0.0 && p < 1.0))
            throw std::invalid_argument("FeedbackLedger: p must lie in (0,1)");
        if (window_.size && *window_.size == 0)
            throw std::invalid_argument("FeedbackLedger: window size must be positive");
        inv_p_ = 1.0 / p_;
    }

    void record_ood(std::uint64_t t, double score, bool via_importance) {
        if (!std::isfinite(score))
            throw std::invalid_argument("FeedbackLedger: score must be finite");
        if (!records_.empty() && t <= records_.back().t)
            throw std::invalid_argument("FeedbackLedger: record times must be strictly increasing");
        const double w = via_importance ? inv_p_ : 1.0;
        records_.push_back(FeedbackRecord{t, score, w, via_importance});
        ids_.push_back(index_.insert(score, w));
        if (via_importance) ++n_importance_;
        if (window_.size) {
            while (records_.size() > *window_.size) {
                if (records_.front().via_importance) --n_importance_;
                index_.erase(ids_.front());
                records_.pop_front();
                ids_.pop_front();
            }
        }
    }

    // Weighted fraction of evidence above lambda; nullopt when no evidence.
    std::optional<double> fpr_estimate(double lambda) const {
        if (std::isnan(lambda))
            throw std::invalid_argument("FeedbackLedger: lambda must not be NaN");
        if (records_.empty()) return std::nullopt;
        return index_.weight_above(lambda) / denominator();
    }

    LedgerStats stats() const {
        LedgerStats s;
        s.n_ood = records_.size();
        s.n_ood_importance = n_importance_;
        if (s.n_ood > 0)
            s.beta = static_cast<double>(n_importance_) / static_cast<double>(s.n_ood);
        s.c = 1.0 - s.beta + s.beta * inv_p_ * inv_p_;
        return s;
    }

    void reset() {
        records_.clear();
        ids_.clear();
        index_.clear();
        n_importance_ = 0;
    }

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::deque<FeedbackRecord>& records() const { return records_; }

    double p() const { return p_; }
    const WindowPolicy& window() const { return window_; }
    DenominatorMode mode() const { return mode_; }

private:
    double denominator() const {
        if (mode_ == DenominatorMode::Realized)
            return static_cast<double>(records_.size());
        const auto direct = static_cast<double>(records_.size() - n_importance_);
        return direct + static_cast<double>(n_importance_) * inv_p_;
    }

    double p_;
    double inv_p_;
    WindowPolicy window_;
    DenominatorMode mode_;
    std::deque<FeedbackRecord> records_;
    std::deque<std::uint32_t> ids_;
    detail::WeightedScoreIndex index_;
    std::size_t n_importance_ = 0;
};

}  // namespace fprguard
