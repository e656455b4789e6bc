#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "covert/error.hpp"
#include "covert/harness.hpp"
#include "support.hpp"

using namespace covert;
namespace fs = std::filesystem;

TEST_CASE("batch spec validation") {
    BatchSpec s;
    s.grid = {2500};
    s.episodes = 0;
    CHECK_THROWS_AS(s.validate(), DomainError);
    s.episodes = 100;
    s.grid.clear();
    CHECK_THROWS_AS(s.validate(), DomainError);
    s.grid = {2500.5};
    CHECK_THROWS_AS(s.validate(), DomainError);
}

TEST_CASE("batch output does not depend on the worker count") {
    const Model m = covert::testing::table12(0.01);
    BatchSpec s;
    s.grid = {2500, 10000};
    s.episodes = 300;
    s.master_seed = 42;
    s.threads = 1;
    const auto one = run_batch(m, s);
    s.threads = 4;
    const auto four = run_batch(m, s);
    for (std::size_t c = 0; c < 2; ++c) {
        REQUIRE(one.episodes[c].size() == four.episodes[c].size());
        for (std::size_t e = 0; e < one.episodes[c].size(); ++e) {
            CHECK(one.episodes[c][e].stop_time == four.episodes[c][e].stop_time);
            CHECK(one.episodes[c][e].decision == four.episodes[c][e].decision);
            CHECK(one.episodes[c][e].kl_bound == four.episodes[c][e].kl_bound);
        }
        CHECK(to_json(one.cells[c]).dump() == to_json(four.cells[c]).dump());
    }
}

TEST_CASE("parallel_for rethrows worker failures") {
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                        if (i == 7) throw DomainError("boom");
                    }),
                    DomainError);
}

TEST_CASE("Wilson interval coverage") {
    std::mt19937_64 g(1);
    const double p = 0.12;
    const std::size_t n = 400;
    int covered = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::binomial_distribution<std::size_t> b(n, p);
        const auto ci = wilson_interval(b(g), n);
        covered += ci.low <= p && p <= ci.high;
    }
    CHECK(covered >= 930);
    CHECK(covered <= 970);
    const auto zero = wilson_interval(0, 100);
    CHECK(zero.low == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(zero.high > 0.0);
}

TEST_CASE("quantiles") {
    CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({7}, 0.9) == 7.0);
}

TEST_CASE("scaling fit recovers an exact slope") {
    std::vector<double> xs = {10, 20, 30, 40}, ys;
    for (double x : xs) ys.push_back(2 * x);
    const auto f = fit_sqrt_scaling(xs, ys);
    CHECK(std::abs(f.slope - 2.0) < 1e-9);
    CHECK(f.r2 == doctest::Approx(1.0));
    CHECK(f.method == "ols-t");
    CHECK_THROWS_AS(fit_sqrt_scaling({1, 2}, {1, 2}), InsufficientCells);
    CHECK_THROWS_AS(fit_sqrt_scaling({1, 3, 2}, {1, 2, 3}), DomainError);
}

TEST_CASE("scaling fit interval coverage under noise") {
    std::mt19937_64 g(77);
    std::normal_distribution<double> noise(0.0, 0.3);
    const std::vector<double> xs = {1, 2, 3, 4, 5, 6};
    int ols = 0, wls = 0;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> ys;
        for (double x : xs) ys.push_back(0.5 + 1.5 * x + noise(g));
        const auto a = fit_sqrt_scaling(xs, ys);
        ols += a.ci.low <= 1.5 && 1.5 <= a.ci.high;
        const auto b = fit_sqrt_scaling(xs, ys, std::vector<double>(xs.size(), 0.09));
        wls += b.ci.low <= 1.5 && 1.5 <= b.ci.high;
    }
    CHECK(ols >= 89);
    CHECK(wls >= 89);
}

TEST_CASE("zero-error cells use the rule of three") {
    CellSummary a, b, c;
    a.parameter = 100;
    a.stopped = 1000;
    a.errors = 100;
    a.error_rate = 0.1;
    b.parameter = 400;
    b.stopped = 1000;
    b.errors = 10;
    b.error_rate = 0.01;
    c.parameter = 900;
    c.stopped = 1000;
    c.errors = 0;
    const auto f = fit_cells({a, b, c}, BatchMode::Ht);
    CHECK(f.xs[2] == doctest::Approx(30.0));
    CHECK(f.ys[2] == doctest::Approx(-std::log(3.0 / 1000)));
    CHECK(f.surrogate[2]);
    CHECK_FALSE(f.surrogate[0]);
}

TEST_CASE("episodes CSV round trip") {
    const fs::path dir = fs::temp_directory_path() / "covert_csv_test";
    fs::remove_all(dir);
    std::vector<EpisodeRecord> recs(3);
    recs[0] = {0, 0, 0, 120, false, 3, 0.25, 1.0};
    recs[1] = {1, 1, std::nullopt, 400, true, 9, 0.5, 0.0};
    recs[2] = {2, 2, 1, 77, false, 1, 1e-7, 0.2};
    write_episodes_csv(dir / "episodes.csv", recs, {"a", "b", "c"});
    std::ifstream f(dir / "episodes.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "episode_id,truth,decision,stop_time,timeout_flag,effective_pulls,kl_bound_contrib");
    const auto rows = read_episodes_csv(dir / "episodes.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].timed_out);
    CHECK(rows[1].decision.empty());
    CHECK(rows[2].decision == "b");
    CHECK(rows[2].kl_bound == doctest::Approx(1e-7));
    fs::remove_all(dir);
    CHECK_THROWS_AS(read_episodes_csv(dir / "missing.csv"), IoError);
}
