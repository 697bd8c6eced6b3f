#pragma once

// Score sources for the simulation harness and CLI.
//
// A stream interleaves in-distribution (label +1) and out-of-distribution
// (label -1) detector scores. Each phase draws either from a Gaussian
// specification or from a fixed pool of recorded scores, so distribution
// shift is expressed as a phase schedule. Draws are deterministic given
// the config seed: every sample consumes one uniform for the label and a
// fixed number of engine calls for the score, which keeps parallel
// configurations comparable sample-by-sample.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "normal.hpp"
#include "util.hpp"

namespace fprguard {

inline constexpr int kLabelId = +1;
inline constexpr int kLabelOod = -1;

struct GaussianSpec {
    double mu = 0.0;
    double sigma = 1.0;
};

// Scores drawn uniformly at random (with replacement) from a recorded set.
struct PoolSource {
    std::vector<double> scores;
};

using PhaseSource = std::variant<GaussianSpec, PoolSource>;

struct StreamPhase {
    PhaseSource id_source;
    PhaseSource ood_source;
    double gamma = 0.2;        // P(sample is out-of-distribution), in (0,1]
    std::uint64_t start_t = 1; // first step this phase is active
};

struct StreamConfig {
    std::vector<StreamPhase> phases;
    std::uint64_t horizon = 0;
    std::uint64_t seed = 1;
};

struct LabeledScore {
    std::uint64_t t = 0;
    double score = 0.0;
    int label = kLabelId;
};

// ============================================================================
// Analytic and empirical rates
// ============================================================================

// P(score > lambda) under a Gaussian law.
inline double gaussian_rate_above(GaussianSpec d, double lambda) {
    return normal_sf((lambda - d.mu) / d.sigma);
}

// False positive rate of the rule "score > lambda => in-distribution"
// against an out-of-distribution score law.
inline double analytic_fpr(GaussianSpec ood, double lambda) {
    return gaussian_rate_above(ood, lambda);
}

// True positive rate of the same rule against the in-distribution law.
inline double analytic_tpr(GaussianSpec id, double lambda) {
    return gaussian_rate_above(id, lambda);
}

// Smallest threshold whose false positive rate does not exceed alpha;
// analytic_fpr(ood, optimal_threshold(ood, alpha)) == alpha.
inline double optimal_threshold(GaussianSpec ood, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("optimal_threshold: alpha must lie in (0,1)");
    return ood.mu + ood.sigma * normal_quantile(1.0 - alpha);
}

// Fraction of a sorted sample strictly above lambda.
inline double rate_above(const std::vector<double>& sorted_scores, double lambda) {
    const auto it = std::upper_bound(sorted_scores.begin(), sorted_scores.end(), lambda);
    return static_cast<double>(sorted_scores.end() - it) /
           static_cast<double>(sorted_scores.size());
}

// Smallest sample value whose rate_above does not exceed alpha.
inline double empirical_threshold(const std::vector<double>& sorted_scores, double alpha) {
    const auto n = static_cast<std::ptrdiff_t>(sorted_scores.size());
    auto m = static_cast<std::ptrdiff_t>(std::floor(alpha * static_cast<double>(n)));
    if (m > n - 1) m = n - 1;
    return sorted_scores[static_cast<std::size_t>(n - 1 - m)];
}

inline double empirical_quantile(const std::vector<double>& sorted_scores, double q) {
    const auto n = sorted_scores.size();
    auto idx = static_cast<std::size_t>(q * static_cast<double>(n));
    if (idx >= n) idx = n - 1;
    return sorted_scores[idx];
}

// ============================================================================
// Score pool files
// ============================================================================

struct ScorePool {
    std::vector<double> id_scores;
    std::vector<double> ood_scores;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

}  // namespace detail

// Reads "score,label" rows (label +1 in-distribution, -1 out-of-distribution).
// An optional "score,label" header and CRLF line endings are accepted.
inline ScorePool load_score_pool(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open score file: " + path);

    ScorePool pool;
    std::string line;
    std::size_t line_no = 0;
    bool saw_data = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = detail::trim(line);
        if (stripped.empty()) continue;

        const auto comma = stripped.find(',');
        const std::string where = path + ":" + std::to_string(line_no);
        if (comma == std::string::npos)
            throw config_error("score file parse error at " + where + ": expected 'score,label'");
        const std::string score_str = detail::trim(stripped.substr(0, comma));
        const std::string label_str = detail::trim(stripped.substr(comma + 1));

        if (line_no == 1 && score_str == "score" && label_str == "label") continue;

        double score = 0.0;
        if (!detail::parse_double(score_str, score) || !std::isfinite(score))
            throw config_error("score file parse error at " + where + ": bad score '" +
                               score_str + "'");
        if (label_str == "1" || label_str == "+1") {
            pool.id_scores.push_back(score);
        } else if (label_str == "-1") {
            pool.ood_scores.push_back(score);
        } else {
            throw config_error("score file parse error at " + where + ": label must be 1 or -1, got '" +
                               label_str + "'");
        }
        saw_data = true;
    }
    if (!saw_data) throw config_error("score file has no data rows: " + path);
    return pool;
}

// ============================================================================
// Stream generator
// ============================================================================

namespace detail {

inline void validate_source(const PhaseSource& src, const char* side) {
    if (const auto* g = std::get_if<GaussianSpec>(&src)) {
        if (!(g->sigma > 0.0) || !std::isfinite(g->sigma) || !std::isfinite(g->mu))
            throw config_error(std::string(side) + " source: sigma must be positive and finite");
    } else {
        const auto& p = std::get<PoolSource>(src);
        if (p.scores.empty())
            throw config_error(std::string(side) + " source: score pool is empty");
        for (double s : p.scores)
            if (!std::isfinite(s))
                throw config_error(std::string(side) + " source: non-finite pool score");
    }
}

}  // namespace detail

inline void validate_stream_config(const StreamConfig& cfg) {
    if (cfg.phases.empty()) throw config_error("stream: at least one phase is required");
    if (cfg.phases.front().start_t != 1) throw config_error("stream: first phase must start at t=1");
    for (std::size_t i = 0; i < cfg.phases.size(); ++i) {
        const auto& ph = cfg.phases[i];
        if (i > 0 && ph.start_t <= cfg.phases[i - 1].start_t)
            throw config_error("stream: phase start times must be strictly increasing");
        if (!(ph.gamma > 0.0 && ph.gamma <= 1.0))
            throw config_error("stream: gamma must lie in (0,1]");
        detail::validate_source(ph.id_source, "in-distribution");
        detail::validate_source(ph.ood_source, "out-of-distribution");
    }
    if (cfg.horizon < cfg.phases.back().start_t)
        throw config_error("stream: horizon ends before the last phase starts");
}

inline const StreamPhase& active_phase(const StreamConfig& cfg, std::uint64_t t) {
    std::size_t i = cfg.phases.size();
    while (i > 1 && cfg.phases[i - 1].start_t > t) --i;
    return cfg.phases[i - 1];
}

class ScoreStream {
public:
    explicit ScoreStream(StreamConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
        validate_stream_config(cfg_);
    }

    // Next labeled sample, or nullopt once the horizon is exhausted.
    std::optional<LabeledScore> next() {
        if (t_ > cfg_.horizon) return std::nullopt;
        while (phase_ + 1 < cfg_.phases.size() && cfg_.phases[phase_ + 1].start_t <= t_) ++phase_;
        const StreamPhase& ph = cfg_.phases[phase_];

        const double u = unit_(rng_);
        const int label = u < ph.gamma ? kLabelOod : kLabelId;
        const double score = draw(label == kLabelOod ? ph.ood_source : ph.id_source);
        return LabeledScore{t_++, score, label};
    }

    const StreamConfig& config() const { return cfg_; }

private:
    double draw(const PhaseSource& src) {
        if (const auto* g = std::get_if<GaussianSpec>(&src)) {
            // Box-Muller, cosine branch: exactly two engine draws per score.
            const double u1 = 1.0 - unit_(rng_);  // (0,1], keeps log finite
            const double u2 = unit_(rng_);
            static constexpr double two_pi = 6.283185307179586476925287;
            const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
            return g->mu + g->sigma * z;
        }
        const auto& pool = std::get<PoolSource>(src).scores;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        return pool[pick(rng_)];
    }

    StreamConfig cfg_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::uint64_t t_ = 1;
    std::size_t phase_ = 0;
};

}  // namespace fprguard
