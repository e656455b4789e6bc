#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "covert/bai.hpp"
#include "covert/episode.hpp"
#include "covert/model.hpp"
#include "covert/seqtest.hpp"

namespace covert {

enum class BatchMode { Ht, Bai };

/// One Monte Carlo batch: a grid of n values (HT) or delta values (BAI),
/// the same number of episodes in every cell.
struct BatchSpec {
    BatchMode mode = BatchMode::Ht;
    std::vector<double> grid;
    double eta = 0.5;
    std::size_t episodes = 1000;
    std::uint64_t master_seed = 0;
    unsigned threads = 1;

    // HT
    double zeta = 0.01;
    /// Hypothesis index; unset cycles through all hypotheses (episode e uses e mod |Theta|).
    std::optional<std::size_t> truth;
    std::uint64_t horizon_multiple = 4;

    // BAI
    BaiPolicyConfig bai;

    void validate() const;
};

/// The per-episode fields written to episodes.csv.
struct EpisodeRecord {
    std::size_t episode_id = 0;
    std::size_t truth = 0;
    std::optional<std::size_t> decision;
    std::uint64_t stop_time = 0;
    bool timed_out = false;
    std::uint64_t effective_pulls = 0;
    double kl_bound = 0.0;
    double stop_margin = 0.0;
};

struct Interval {
    double low = 0.0;
    double high = 0.0;
};

struct CellSummary {
    std::size_t cell = 0;
    double parameter = 0.0;
    std::size_t episodes = 0;
    std::size_t stopped = 0;
    std::size_t errors = 0;
    std::size_t timeouts = 0;
    /// Errors among stopped episodes.
    double error_rate = 0.0;
    Interval error_ci;
    double timeout_rate = 0.0;
    /// Largest per-truth error rate (HT with all truths).
    double max_truth_error_rate = 0.0;
    double mean_stop_time = 0.0;
    double stop_p10 = 0.0, stop_p50 = 0.0, stop_p90 = 0.0, stop_p95 = 0.0;
    double mean_effective_pulls = 0.0;
    double mean_kl_bound = 0.0;
    double max_kl_bound = 0.0;
    /// Smallest stopping-rule slack over stopped episodes.
    double min_stop_margin = 0.0;
    /// BAI: stop-time quantile estimate at the configured kappa.
    std::optional<double> tau_sup;
    std::uint64_t alpha_clamps = 0;
    /// HT: max over theta of n alpha^2 chi2 / 2.
    std::optional<double> covertness_leading_term;
    /// Policy parameters of the cell (alpha per hypothesis, or predicted stop time).
    nlohmann::json policy;
};

struct BatchResult {
    std::vector<CellSummary> cells;
    std::vector<std::vector<EpisodeRecord>> episodes;
};

/// Runs every cell. Episode e of cell c draws from RngStream::derive(master_seed, c, e),
/// so the output does not depend on the worker count.
BatchResult run_batch(const Model& model, const BatchSpec& spec);

/// Runs fn(i) for i in [0, count) over `threads` workers.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Wilson score interval for successes out of n at the given z.
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054);

/// Linear-interpolation quantile of a sample (q in [0, 1]).
double quantile(std::vector<double> sample, double q);

struct ScalingFit {
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<bool> surrogate;
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    Interval ci;
    /// "wls-z" when per-point variances were supplied, "ols-t" otherwise.
    std::string method;
};

/// Affine least-squares fit ys ~ intercept + slope * xs with a 95% slope interval.
/// With variances, weighted least squares with a normal interval; without, OLS with a t interval.
ScalingFit fit_sqrt_scaling(std::vector<double> xs, std::vector<double> ys,
                            std::optional<std::vector<double>> variances = std::nullopt);

/// Builds the fit from batch cells: x = sqrt(n) (HT) or |log delta| (BAI), y = -log(error rate),
/// zero-error cells replaced by the rule-of-three rate 3/N and flagged.
ScalingFit fit_cells(const std::vector<CellSummary>& cells, BatchMode mode);

nlohmann::json to_json(const CellSummary& cell);
nlohmann::json to_json(const ScalingFit& fit);

/// Labels used for truth/decision columns.
std::vector<std::string> outcome_labels(const Model& model);

void write_episodes_csv(const std::filesystem::path& path, const std::vector<EpisodeRecord>& episodes,
                        const std::vector<std::string>& labels);
void write_scaling_csv(const std::filesystem::path& path, const ScalingFit& fit);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

struct EpisodeCsvRow {
    std::size_t episode_id = 0;
    std::string truth;
    std::string decision;
    std::uint64_t stop_time = 0;
    bool timed_out = false;
    std::uint64_t effective_pulls = 0;
    double kl_bound = 0.0;
};

std::vector<EpisodeCsvRow> read_episodes_csv(const std::filesystem::path& path);

}  // namespace covert
