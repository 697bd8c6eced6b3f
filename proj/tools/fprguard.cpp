// ============================================================================
// fprguard command-line tool
//
// Subcommands:
//   simulate          seeded streaming-threshold experiments -> CSV metrics
//   constants-search  fair-coin coverage sweep for the heuristic width
//   predict-bounds    closed-form feasibility / optimality bound calculator
//
// Exit codes: 0 on success, 2 on a configuration error (including bad
// command-line arguments), 3 on an I/O failure.
// ============================================================================

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "fprguard/controller.hpp"
#include "fprguard/harness.hpp"
#include "fprguard/io.hpp"
#include "fprguard/scores.hpp"
#include "fprguard/util.hpp"

namespace {

using namespace fprguard;

// ----------------------------------------------------------------------------
// simulate
// ----------------------------------------------------------------------------

struct SimulateOptions {
    std::string config_path;  // expanded before parsing; see expand_simulate_config
    double alpha = 0.05;
    double delta = 0.2;
    double p = 0.2;
    double gamma = 0.2;
    std::uint64_t horizon = 100000;
    std::uint64_t window = 0;  // 0 = unwindowed ledger
    std::string ucb = "lil-heuristic";
    std::uint64_t seeds = 10;  // runs seeds 1..N
    double grid_min = -30.0;
    double grid_max = 29.5;
    std::uint64_t grid_points = 1001;
    std::uint64_t change_at = 0;  // 0 = stationary stream
    bool detect = false;
    bool restart = false;
    std::string scores_id;
    std::string scores_ood;
    std::string out_dir;

    // Score distributions for synthetic phases. The second OOD pair only
    // matters when --change-at is set.
    double id_mu = 5.5;
    double id_sigma = 4.0;
    double ood_mu = -6.0;
    double ood_sigma = 4.0;
    double ood_mu2 = -5.0;
    double ood_sigma2 = 4.0;
};

/// Expands `simulate --config <path>` into ordinary flags before parsing.
/// The file is flat text, one `key = value` per line with `#` comments, and
/// keys mirror the long flag names (e.g. `alpha = 0.05`, `grid-points = 501`).
/// Flags given on the command line win over file values.
void expand_simulate_config(std::vector<std::string>& args) {
    if (args.empty() || args.front() != "simulate") return;

    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size())
            path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            path = args[i].substr(9);
    }
    if (path.empty()) return;

    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);

    const auto given = [&args](const std::string& flag) {
        for (std::size_t i = 1; i < args.size(); ++i)
            if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
        return false;
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string stripped = detail::trim(line);
        if (stripped.empty()) continue;

        const std::string where = path + ":" + std::to_string(line_no);
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw config_error("config file parse error at " + where + ": expected key = value");
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty())
            throw config_error("config file parse error at " + where + ": expected key = value");
        if (key == "config")
            throw config_error("config file parse error at " + where +
                               ": config files cannot include 'config'");

        const std::string flag = "--" + key;
        if (given(flag)) continue;
        args.push_back(flag + "=" + value);
    }
}

/// Maps the --ucb name to a policy. The controller re-derives the certificate
/// budget and grid count from its own configuration, so the factory arguments
/// here are placeholders.
ConfidencePolicy policy_for(const std::string& name) {
    if (name == "lil") return ConfidencePolicy::lil_theory(0.2, 1000);
    if (name == "lil-heuristic") return ConfidencePolicy::lil_heuristic(0.2);
    if (name == "hoeffding") return ConfidencePolicy::hoeffding(0.2);
    if (name == "none") return ConfidencePolicy::none();
    throw config_error("simulate: unknown --ucb policy '" + name + "'");
}

PhaseSource id_source_for(const SimulateOptions& opt) {
    if (opt.scores_id.empty()) return GaussianSpec{opt.id_mu, opt.id_sigma};
    ScorePool pool = load_score_pool(opt.scores_id);
    if (pool.id_scores.empty())
        throw config_error("simulate: " + opt.scores_id + " has no rows labeled +1");
    return PoolSource{std::move(pool.id_scores)};
}

PhaseSource ood_source_for(const SimulateOptions& opt) {
    if (opt.scores_ood.empty()) return GaussianSpec{opt.ood_mu, opt.ood_sigma};
    ScorePool pool = load_score_pool(opt.scores_ood);
    if (pool.ood_scores.empty())
        throw config_error("simulate: " + opt.scores_ood + " has no rows labeled -1");
    return PoolSource{std::move(pool.ood_scores)};
}

StreamConfig make_stream(const SimulateOptions& opt) {
    StreamConfig stream;
    stream.horizon = opt.horizon;

    StreamPhase first;
    first.start_t = 1;
    first.gamma = opt.gamma;
    first.id_source = id_source_for(opt);
    first.ood_source = ood_source_for(opt);
    stream.phases.push_back(first);

    if (opt.change_at > 0) {
        if (!opt.scores_ood.empty())
            throw config_error(
                "simulate: --change-at only supports synthetic OOD scores; "
                "a mid-stream pool swap has no flag");
        StreamPhase shifted = first;
        shifted.start_t = opt.change_at;
        shifted.ood_source = GaussianSpec{opt.ood_mu2, opt.ood_sigma2};
        stream.phases.push_back(shifted);
    }
    return stream;
}

ControllerConfig make_controller(const SimulateOptions& opt) {
    ControllerConfig ctrl;
    ctrl.alpha = opt.alpha;
    ctrl.delta = opt.delta;
    ctrl.p = opt.p;
    ctrl.grid = ThresholdGrid::with_points(opt.grid_min, opt.grid_max,
                                           static_cast<std::size_t>(opt.grid_points));
    ctrl.policy = policy_for(opt.ucb);
    if (opt.window > 0) ctrl.window.size = static_cast<std::size_t>(opt.window);
    ctrl.change_detection = opt.detect || opt.restart;
    ctrl.restart_on_change = opt.restart;
    return ctrl;
}

std::string timing(const std::optional<std::uint64_t>& t) {
    return t ? "t=" + std::to_string(*t) : "not reached";
}

int run_simulate(const SimulateOptions& opt) {
    ExperimentConfig cfg;
    cfg.stream = make_stream(opt);
    cfg.controller = make_controller(opt);
    cfg.seeds.resize(static_cast<std::size_t>(opt.seeds));
    std::iota(cfg.seeds.begin(), cfg.seeds.end(), std::uint64_t{1});
    cfg.record_rows = true;

    const std::vector<RunResult> results = run_experiment(cfg);

    std::error_code ec;
    std::filesystem::create_directories(opt.out_dir, ec);
    if (ec) throw io_error("cannot create output directory: " + opt.out_dir);

    std::vector<RunSummary> summaries;
    summaries.reserve(results.size());
    for (const RunResult& run : results) {
        const std::string path =
            opt.out_dir + "/metrics_seed" + std::to_string(run.summary.seed) + ".csv";
        write_metrics(path, run.rows);
        summaries.push_back(run.summary);
    }
    write_summary(opt.out_dir + "/summary.csv", summaries);
    write_trend(opt.out_dir + "/trend.csv", aggregate_trend(results));

    for (const RunSummary& s : summaries) {
        std::cout << "seed " << s.seed << ": feasible " << timing(s.t_feasible)
                  << ", max post-feasibility FPR " << format_real(s.max_fpr_post_feasibility)
                  << ", queried fraction " << format_real(s.mean_queried_fraction);
        if (cfg.controller.change_detection)
            std::cout << ", change detected " << timing(s.change_detect_t);
        std::cout << '\n';
    }
    std::cout << "wrote " << results.size() << " metrics files plus summary.csv and trend.csv"
              << " to " << opt.out_dir << '\n';
    return 0;
}

// ----------------------------------------------------------------------------
// constants-search
// ----------------------------------------------------------------------------

struct SearchOptions {
    std::vector<double> c1_grid{0.5};
    std::vector<double> c2_grid{0.75};
    std::vector<double> deltas{0.2};
    std::uint64_t trials = 100;
    std::uint64_t horizon = 10000;
    std::uint64_t seed = 1;
    std::string out;
};

int run_search(const SearchOptions& opt) {
    ConstantSearchConfig cfg;
    cfg.c1_grid = opt.c1_grid;
    cfg.c2_grid = opt.c2_grid;
    cfg.deltas = opt.deltas;
    cfg.trials = static_cast<std::size_t>(opt.trials);
    cfg.horizon = static_cast<std::size_t>(opt.horizon);
    cfg.seed = opt.seed;

    const std::vector<ConstantSearchCell> table = constant_search(cfg);
    write_constant_table(opt.out, table);

    for (const ConstantSearchCell& cell : table) {
        std::cout << "c1=" << format_real(cell.c1) << " c2=" << format_real(cell.c2)
                  << " delta=" << format_real(cell.delta) << " -> failure fraction "
                  << format_real(cell.failure_fraction) << '\n';
    }
    std::cout << "wrote " << table.size() << " rows to " << opt.out << '\n';
    return 0;
}

// ----------------------------------------------------------------------------
// predict-bounds
// ----------------------------------------------------------------------------

struct BoundsOptions {
    double gamma = 0.2;
    double alpha = 0.05;
    double eta = 0.02;
    double delta = 0.2;
    double p = 0.2;
    std::uint64_t grid_points = 1001;
};

int run_bounds(const BoundsOptions& opt) {
    if (opt.grid_points < 2) throw config_error("predict-bounds: need at least 2 grid points");
    const std::size_t segments = static_cast<std::size_t>(opt.grid_points) - 1;
    const PredictedBounds b =
        predicted_bounds(opt.gamma, opt.alpha, opt.eta, opt.delta, opt.p, segments);

    std::cout << "T_feasibility <= " << format_real(b.t_feasibility) << " steps\n"
              << "T_eta         <= " << format_real(b.t_eta) << " steps\n"
              << "N_feasibility <= " << format_real(b.n_feasibility) << " expert labels\n"
              << "N_eta         <= " << format_real(b.n_eta) << " expert labels\n";
    return 0;
}

}  // namespace

// ----------------------------------------------------------------------------
// argument wiring
// ----------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"Streaming threshold control with a bounded false positive rate"};
    app.require_subcommand(1);

    SimulateOptions sim_opt;
    CLI::App* sim = app.add_subcommand("simulate", "Run seeded experiments and write CSV metrics");
    sim->add_option("--config", sim_opt.config_path,
                    "Flat 'key = value' file mirroring the flags below; command line wins");
    sim->add_option("--alpha", sim_opt.alpha, "False positive rate budget");
    sim->add_option("--delta", sim_opt.delta, "Certificate failure budget");
    sim->add_option("--p", sim_opt.p, "Importance-sampling rate above the threshold");
    sim->add_option("--gamma", sim_opt.gamma, "OOD arrival rate of the synthetic stream");
    sim->add_option("--horizon", sim_opt.horizon, "Stream length in steps");
    sim->add_option("--window", sim_opt.window, "Sliding-window record count (0 = unwindowed)");
    sim->add_option("--ucb", sim_opt.ucb, "Width policy: lil, lil-heuristic, hoeffding, none")
        ->check(CLI::IsMember({"lil", "lil-heuristic", "hoeffding", "none"}));
    sim->add_option("--seeds", sim_opt.seeds, "Number of runs; uses seeds 1..N")
        ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{100000}));
    sim->add_option("--grid-min", sim_opt.grid_min, "Lowest candidate threshold");
    sim->add_option("--grid-max", sim_opt.grid_max, "Highest candidate threshold");
    sim->add_option("--grid-points", sim_opt.grid_points, "Number of grid points");
    sim->add_option("--change-at", sim_opt.change_at,
                    "Step at which the OOD distribution shifts (0 = stationary)");
    sim->add_flag("--detect", sim_opt.detect, "Enable change detection");
    sim->add_flag("--restart", sim_opt.restart, "Restart the controller on detected change");
    sim->add_option("--scores-id", sim_opt.scores_id, "Score file supplying the ID pool");
    sim->add_option("--scores-ood", sim_opt.scores_ood, "Score file supplying the OOD pool");
    sim->add_option("--out", sim_opt.out_dir, "Output directory")->required();
    sim->add_option("--id-mu", sim_opt.id_mu, "Synthetic ID score mean");
    sim->add_option("--id-sigma", sim_opt.id_sigma, "Synthetic ID score std");
    sim->add_option("--ood-mu", sim_opt.ood_mu, "Synthetic OOD score mean");
    sim->add_option("--ood-sigma", sim_opt.ood_sigma, "Synthetic OOD score std");
    sim->add_option("--ood-mu2", sim_opt.ood_mu2, "OOD score mean after the shift");
    sim->add_option("--ood-sigma2", sim_opt.ood_sigma2, "OOD score std after the shift");

    SearchOptions search_opt;
    CLI::App* search =
        app.add_subcommand("constants-search", "Coverage sweep for the heuristic width constants");
    search->add_option("--c1-grid", search_opt.c1_grid, "Leading constants to try")
        ->delimiter(',');
    search->add_option("--c2-grid", search_opt.c2_grid, "Inner loglog constants to try")
        ->delimiter(',');
    search->add_option("--deltas", search_opt.deltas, "Failure budgets to try")->delimiter(',');
    search->add_option("--trials", search_opt.trials, "Coin sequences per cell");
    search->add_option("--horizon", search_opt.horizon, "Tosses per sequence");
    search->add_option("--seed", search_opt.seed, "Master seed");
    search->add_option("--out", search_opt.out, "Output CSV path")->required();

    BoundsOptions bounds_opt;
    CLI::App* bounds =
        app.add_subcommand("predict-bounds", "Evaluate the closed-form time and label bounds");
    bounds->add_option("--gamma", bounds_opt.gamma, "OOD arrival rate");
    bounds->add_option("--alpha", bounds_opt.alpha, "False positive rate budget");
    bounds->add_option("--eta", bounds_opt.eta, "Optimality slack");
    bounds->add_option("--delta", bounds_opt.delta, "Certificate failure budget");
    bounds->add_option("--p", bounds_opt.p, "Importance-sampling rate");
    bounds->add_option("--grid-points", bounds_opt.grid_points, "Number of grid points");

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        expand_simulate_config(args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }

    try {
        if (sim->parsed()) return run_simulate(sim_opt);
        if (search->parsed()) return run_search(search_opt);
        if (bounds->parsed()) return run_bounds(bounds_opt);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
