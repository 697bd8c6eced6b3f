// Confidence widths: closed-form values, sentinels, monotonicity, the
// evidence-threshold rule, and the coin-flip calibration search.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <fprguard/confidence.hpp>

using namespace fprguard;
using Catch::Matchers::WithinAbs;

namespace {
LedgerStats stats_of(std::uint64_t n, double c) { return LedgerStats{n, 0, 0.0, c}; }
}  // namespace

TEST_CASE("policy factories validate their parameters", "[confidence]") {
    REQUIRE_THROWS_AS(ConfidencePolicy::lil_theory(0.0, 100), std::invalid_argument);
    REQUIRE_THROWS_AS(ConfidencePolicy::lil_theory(1.0, 100), std::invalid_argument);
    REQUIRE_THROWS_AS(ConfidencePolicy::lil_theory(0.2, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(ConfidencePolicy::lil_heuristic(0.2, 0.0, 0.75, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(ConfidencePolicy::lil_heuristic(0.2, 0.5, -1.0, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(ConfidencePolicy::hoeffding(0.0), std::invalid_argument);
    REQUIRE_NOTHROW(ConfidencePolicy::lil_theory(0.2, 10));
    REQUIRE_NOTHROW(ConfidencePolicy::none());
}

TEST_CASE("widths match hand-computed values", "[confidence]") {
    // Reference values computed independently from the closed forms.
    REQUIRE_THAT(psi(ConfidencePolicy::lil_theory(0.2, 1000), stats_of(1000, 1.0)),
                 WithinAbs(0.198919892, 1e-8));
    REQUIRE_THAT(psi(ConfidencePolicy::lil_theory(0.2, 10), stats_of(2, 1.0)),
                 WithinAbs(2.681398658, 1e-8));
    REQUIRE_THAT(psi(ConfidencePolicy::lil_heuristic(0.2), stats_of(1000, 1.0)),
                 WithinAbs(0.029578473, 1e-8));
    REQUIRE_THAT(psi(ConfidencePolicy::lil_heuristic(0.2), stats_of(500, 13.0)),
                 WithinAbs(0.156094717, 1e-8));
    REQUIRE_THAT(psi(ConfidencePolicy::lil_heuristic(0.2), stats_of(4, 1.0)),
                 WithinAbs(0.326294129, 1e-8));
    REQUIRE_THAT(psi(ConfidencePolicy::hoeffding(0.2), stats_of(1000, 1.0)),
                 WithinAbs(0.033930702, 1e-8));
    REQUIRE_THAT(psi(ConfidencePolicy::hoeffding(0.1), stats_of(200, 4.0)),
                 WithinAbs(0.173081838, 1e-8));
}

TEST_CASE("widths degrade to infinity without usable evidence", "[confidence]") {
    const auto inf = std::numeric_limits<double>::infinity();
    REQUIRE(psi(ConfidencePolicy::lil_theory(0.2, 10), stats_of(0, 1.0)) == inf);
    REQUIRE(psi(ConfidencePolicy::lil_theory(0.2, 10), stats_of(1, 1.0)) == inf);
    REQUIRE(psi(ConfidencePolicy::lil_heuristic(0.2), stats_of(0, 1.0)) == inf);
    REQUIRE(psi(ConfidencePolicy::lil_heuristic(0.2), stats_of(3, 1.0)) == inf);
    REQUIRE(psi(ConfidencePolicy::hoeffding(0.2), stats_of(0, 1.0)) == inf);
    // The degenerate policy reports zero width even with no evidence.
    REQUIRE(psi(ConfidencePolicy::none(), stats_of(0, 1.0)) == 0.0);
    REQUIRE(psi(ConfidencePolicy::none(), stats_of(1000, 25.0)) == 0.0);
}

TEST_CASE("widths shrink with evidence and grow with variance and confidence",
          "[confidence]") {
    for (const auto& pol : {ConfidencePolicy::lil_theory(0.2, 100),
                            ConfidencePolicy::lil_heuristic(0.2),
                            ConfidencePolicy::hoeffding(0.2)}) {
        double prev = psi(pol, stats_of(8, 1.0));
        for (std::uint64_t n = 16; n <= 1u << 20; n *= 2) {
            const double w = psi(pol, stats_of(n, 1.0));
            REQUIRE(w < prev);
            prev = w;
        }
        REQUIRE(psi(pol, stats_of(1000, 2.0)) > psi(pol, stats_of(1000, 1.0)));
        REQUIRE(psi(pol, stats_of(1000, 25.0)) > psi(pol, stats_of(1000, 2.0)));
    }
    REQUIRE(psi(ConfidencePolicy::lil_heuristic(0.05), stats_of(1000, 1.0)) >
            psi(ConfidencePolicy::lil_heuristic(0.2), stats_of(1000, 1.0)));
    REQUIRE(psi(ConfidencePolicy::hoeffding(0.05), stats_of(1000, 1.0)) >
            psi(ConfidencePolicy::hoeffding(0.2), stats_of(1000, 1.0)));
}

TEST_CASE("feasibility boundary for the default width sits at 332 direct records",
          "[confidence]") {
    const auto pol = ConfidencePolicy::lil_heuristic(0.2);
    REQUIRE(psi(pol, stats_of(331, 1.0)) > 0.05);
    REQUIRE(psi(pol, stats_of(332, 1.0)) <= 0.05);
    REQUIRE_THAT(psi(pol, stats_of(332, 1.0)), WithinAbs(0.049980073, 1e-8));
}

TEST_CASE("proven width dominates the calibrated width", "[confidence]") {
    const auto theory = ConfidencePolicy::lil_theory(0.2, 10);
    const auto heur = ConfidencePolicy::lil_heuristic(0.2);
    for (double c : {1.0, 2.0, 5.0, 10.0, 25.0}) {
        for (std::uint64_t n = 10; n <= 1000000; n *= 10) {
            const auto st = stats_of(n, c);
            REQUIRE(psi(theory, st) >= psi(heur, st));
        }
    }
}

TEST_CASE("evidence threshold finds the first well-sampled step", "[confidence]") {
    // Rule: effective evidence c*N must reach 173*log(8/delta) (= 638.18 at
    // delta = 0.2). Indices are 1-based.
    REQUIRE_FALSE(n_zero(0.2, {{1.0, 638}}).has_value());
    REQUIRE(n_zero(0.2, {{1.0, 639}}).value() == 1);
    REQUIRE_FALSE(n_zero(0.2, {{25.0, 25}}).has_value());
    REQUIRE(n_zero(0.2, {{25.0, 26}}).value() == 1);
    REQUIRE(n_zero(0.2, {{1.0, 100}, {1.0, 640}, {1.0, 1000}}).value() == 2);
    REQUIRE_FALSE(n_zero(0.2, {}).has_value());
    REQUIRE_THROWS_AS(n_zero(0.0, {{1.0, 10}}), std::invalid_argument);
    REQUIRE_THROWS_AS(n_zero(1.0, {{1.0, 10}}), std::invalid_argument);
}

TEST_CASE("calibration search is deterministic and ordered by width", "[confidence]") {
    ConstantSearchConfig cfg;
    cfg.c1_grid = {0.1, 0.5, 10.0};
    cfg.c2_grid = {0.75};
    cfg.deltas = {0.2};
    cfg.trials = 60;
    cfg.horizon = 2000;
    cfg.seed = 5;

    const auto a = constant_search(cfg);
    const auto b = constant_search(cfg);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].c1 == cfg.c1_grid[i]);
        REQUIRE(a[i].c2 == 0.75);
        REQUIRE(a[i].delta == 0.2);
        REQUIRE(a[i].failure_fraction == b[i].failure_fraction);
        REQUIRE(a[i].failure_fraction >= 0.0);
        REQUIRE(a[i].failure_fraction <= 1.0);
    }
    // A generous width never trips; tightening the width fails more often.
    REQUIRE(a[2].failure_fraction == 0.0);
    REQUIRE(a[0].failure_fraction > a[1].failure_fraction);
}

TEST_CASE("calibration search rejects malformed configs", "[confidence]") {
    ConstantSearchConfig cfg;
    cfg.c1_grid = {0.5};
    cfg.c2_grid = {0.75};
    cfg.deltas = {0.2};

    auto broken = cfg;
    broken.c1_grid.clear();
    REQUIRE_THROWS_AS(constant_search(broken), config_error);
    broken = cfg;
    broken.trials = 0;
    REQUIRE_THROWS_AS(constant_search(broken), config_error);
    broken = cfg;
    broken.horizon = 0;
    REQUIRE_THROWS_AS(constant_search(broken), config_error);
    broken = cfg;
    broken.coin_mean = 1.0;
    REQUIRE_THROWS_AS(constant_search(broken), config_error);
    broken = cfg;
    broken.deltas = {2.0};
    REQUIRE_THROWS_AS(constant_search(broken), config_error);
    broken = cfg;
    broken.c2_grid = {0.0};
    REQUIRE_THROWS_AS(constant_search(broken), config_error);
}
