#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "covert/episode.hpp"
#include "covert/exponent.hpp"
#include "covert/model.hpp"
#include "covert/prob.hpp"
#include "covert/rng.hpp"

namespace covert {

/// Running per-arm tallies of a Gaussian bandit, null arm at index 0.
class EmpiricalBandit {
public:
    explicit EmpiricalBandit(std::size_t num_arms);

    std::size_t num_arms() const { return counts_.size(); }
    std::size_t num_effective() const { return counts_.size() - 1; }
    std::uint64_t count(std::size_t x) const { return counts_[x]; }
    double sum(std::size_t x) const { return sums_[x]; }
    std::uint64_t effective_pulls() const { return effective_; }
    /// sum / count, or 0 for an unpulled arm.
    double mean(std::size_t x) const;
    /// Means of arms 1..K.
    std::vector<double> effective_means() const;
    bool all_pulled() const;
    /// Empirical best arm in 1..K (lowest index on ties).
    std::size_t best_arm() const;

    void record(std::size_t x, double reward);
    void record_idle(std::uint64_t count);

    /// Direct construction for tests and tools.
    static EmpiricalBandit from_tallies(std::vector<std::uint64_t> counts, std::vector<double> means);

private:
    std::vector<std::uint64_t> counts_;
    std::vector<double> sums_;
    std::uint64_t effective_ = 0;
};

struct BaiPolicyConfig {
    double delta = 0.05;
    double eta = 1.0;
    /// Unset selects 1e-3 / K.
    std::optional<double> zeta_floor;
    double kappa = 0.05;
    std::uint64_t recompute_period = 1;
    /// Unset selects the default cap (see default_bai_horizon).
    std::optional<std::uint64_t> horizon_cap;
    /// Challenger count used in the threshold and f; unset selects K.
    std::optional<std::size_t> k_override;
    SolverOptions solver;

    double floor_for(std::size_t k) const { return zeta_floor.value_or(1e-3 / static_cast<double>(k)); }
    std::size_t k_for(std::size_t k) const { return k_override.value_or(k); }
    /// Throws DomainError when a field is out of range for K effective arms.
    void validate(std::size_t k) const;
};

/// exp(K - a) (a / K)^K.
double f_threshold(double a, std::size_t k);
/// Solves f(a) = delta for a >= K by bisection (to 1e-10).
double f_inverse(double delta, std::size_t k);

/// min over challengers of T_b T_x (mu_b - mu_x)^2 / (2 (T_b + T_x)); 0 until every non-null arm is pulled.
double glr_statistic(const EmpiricalBandit& emp);

/// K log(T^2 + T) + f^-1(delta) with T the number of effective pulls.
double stopping_threshold(const EmpiricalBandit& emp, const BaiPolicyConfig& config);

/// Closed-form alpha of the covert BAI control: 2 eta / chi2(pbar) * alt_inf(pbar) / |log delta|.
double bai_alpha_formula(std::span<const double> pbar, std::span<const double> alice_effective,
                         std::span<const double> willie_effective, double eta, double delta);

using BaiSolver = std::function<FractionalResult(std::span<const double> alice_effective,
                                                 std::span<const double> willie_effective, double floor,
                                                 std::span<const double> start)>;

struct RefreshResult {
    ActionDist control;
    bool clamped = false;
    /// True when the warm-up rule replaced a zero alpha.
    bool warmup = false;
};

/// Computes the control for the current empirical bandit.
RefreshResult refresh_control(const EmpiricalBandit& emp, const BaiPolicyConfig& config,
                              std::span<const double> willie_effective, const BaiSolver& solver = {},
                              std::span<const double> start = {});

/// Expected stop time of the policy when the empirical bandit equals the truth:
/// solves T = Gamma(T) / alt_inf for the effective pulls T, then divides by alpha.
double predicted_stop_time(const GaussianBanditModel& truth, const BaiPolicyConfig& config);

/// max(ceil(200 log(delta)^2), ceil(1e4 * predicted_stop_time)).
std::uint64_t default_bai_horizon(const GaussianBanditModel& truth, const BaiPolicyConfig& config);

EpisodeResult run_episode(const GaussianBanditModel& truth, const BaiPolicyConfig& config, RngStream& rng,
                          const EpisodeOptions& options = {});

/// inf{a : #{tau_i > a} < kappa N}, taken over the sample.
double tau_sup_estimate(std::span<const double> stop_times, double kappa);

}  // namespace covert
