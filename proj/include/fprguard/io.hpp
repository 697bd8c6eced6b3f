#pragma once

// CSV serialization for experiment outputs: per-step metrics, per-seed
// summaries, cross-seed trends, and width-constant search tables. Readers
// exist for the row-level format so results can be reloaded and re-reduced.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "confidence.hpp"
#include "harness.hpp"
#include "util.hpp"

namespace fprguard {

inline constexpr const char* kMetricsHeader =
    "t,lambda_hat,fpr_true,tpr_true,fpr_hat,psi,n_ood,n_ood_imp,queried_cum,feasible,change,"
    "restart";

inline void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << kMetricsHeader << '\n';
    for (const auto& r : rows) {
        out << r.t << ',' << format_real(r.lambda_hat) << ',' << format_real(r.fpr_true) << ','
            << format_real(r.tpr_true) << ',' << format_real(r.fpr_hat) << ','
            << format_real(r.psi) << ',' << r.n_ood << ',' << r.n_ood_imp << ',' << r.queried_cum
            << ',' << int(r.feasible) << ',' << int(r.change) << ',' << int(r.restart) << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline double parse_real(const std::string& s, const std::string& where) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw config_error(where + ": malformed real '" + s + "'");
    return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& where) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw config_error(where + ": malformed count '" + s + "'");
    return v;
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw config_error(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader) throw config_error(path + ": unexpected header '" + line + "'");

    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const auto cells = detail::split_csv(line);
        if (cells.size() != 12) throw config_error(where + ": expected 12 columns");
        MetricsRow r;
        r.t = detail::parse_count(cells[0], where);
        r.lambda_hat = detail::parse_real(cells[1], where);
        r.fpr_true = detail::parse_real(cells[2], where);
        r.tpr_true = detail::parse_real(cells[3], where);
        r.fpr_hat = detail::parse_real(cells[4], where);
        r.psi = detail::parse_real(cells[5], where);
        r.n_ood = detail::parse_count(cells[6], where);
        r.n_ood_imp = detail::parse_count(cells[7], where);
        r.queried_cum = detail::parse_count(cells[8], where);
        r.feasible = detail::parse_count(cells[9], where) != 0;
        r.change = detail::parse_count(cells[10], where) != 0;
        r.restart = detail::parse_count(cells[11], where) != 0;
        rows.push_back(r);
    }
    return rows;
}

// Per-seed summaries. Times that were never reached are written as -1 so the
// table stays rectangular and numeric.
inline void write_summary(const std::string& path, const std::vector<RunSummary>& summaries) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << "seed,t_feasible";
    if (!summaries.empty())
        for (const auto& [eta, _] : summaries.front().t_eta) out << ",t_eta_" << format_real(eta);
    out << ",max_fpr_post_feasibility,mean_queried_fraction,change_detect_t,n_zero_t\n";
    auto cell = [&](const std::optional<std::uint64_t>& v) {
        if (v)
            out << *v;
        else
            out << -1;
    };
    for (const auto& s : summaries) {
        out << s.seed << ',';
        cell(s.t_feasible);
        for (const auto& [_, t] : s.t_eta) {
            out << ',';
            cell(t);
        }
        out << ',' << format_real(s.max_fpr_post_feasibility) << ','
            << format_real(s.mean_queried_fraction) << ',';
        cell(s.change_detect_t);
        out << ',';
        cell(s.n_zero_t);
        out << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

inline constexpr const char* kTrendHeader =
    "t,fpr_true_mean,fpr_true_std,tpr_true_mean,tpr_true_std,lambda_hat_mean,lambda_hat_std";

inline void write_trend(const std::string& path, const std::vector<TrendRow>& trend) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << kTrendHeader << '\n';
    for (const auto& r : trend) {
        out << r.t << ',' << format_real(r.fpr_true_mean) << ',' << format_real(r.fpr_true_std)
            << ',' << format_real(r.tpr_true_mean) << ',' << format_real(r.tpr_true_std) << ','
            << format_real(r.lambda_hat_mean) << ',' << format_real(r.lambda_hat_std) << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

inline void write_constant_table(const std::string& path,
                                 const std::vector<ConstantSearchCell>& cells) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << "c1,c2,delta,failure_fraction\n";
    for (const auto& c : cells) {
        out << format_real(c.c1) << ',' << format_real(c.c2) << ',' << format_real(c.delta) << ','
            << format_real(c.failure_fraction) << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

}  // namespace fprguard
