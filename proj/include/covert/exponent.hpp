#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "covert/model.hpp"
#include "covert/prob.hpp"

namespace covert {

/// Evaluates a concave numerator or convex denominator at p and writes a
/// super/subgradient into grad (same length as p).
using SimplexFunction = std::function<double(std::span<const double> p, std::span<double> grad)>;

/// maximize numerator(p) / denominator(p) over the (floored) simplex.
/// numerator: concave, >= 0. denominator: convex, > 0.
struct FractionalProgram {
    std::size_t dim = 0;
    SimplexFunction numerator;
    SimplexFunction denominator;
};

struct SolverOptions {
    int max_outer = 200;
    int inner_steps = 5000;
    /// Length of the first inner step on the simplex; later steps shrink as 1/sqrt(t).
    double step_scale = 0.25;
    /// Dinkelbach stops when max_p [f(p) - lambda g(p)] falls below this.
    double tolerance = 1e-10;
    /// Every coordinate of the solution is kept >= floor.
    double floor = 0.0;
};

struct SolverTraceEntry {
    int iteration = 0;
    double lambda = 0.0;
    double gap = 0.0;
    std::string note;
};

struct FractionalResult {
    std::vector<double> argmax;
    double ratio = 0.0;
    int outer_iterations = 0;
    std::vector<SolverTraceEntry> trace;
};

/// Dinkelbach iteration with a projected-subgradient inner maximization.
/// Throws SolverDiverged after options.max_outer outer iterations.
FractionalResult maximize_ratio(const FractionalProgram& program, const SolverOptions& options,
                                std::span<const double> start = {});

struct GridResult {
    std::vector<double> argmax;
    double value = 0.0;
};

/// Brute force over the simplex grid of the given step (resolution). Split
/// across `threads` workers; the result does not depend on the worker count
/// (ties go to the lowest grid index).
GridResult grid_maximize(std::size_t dim, double resolution, double floor,
                         const std::function<double(std::span<const double>)>& objective, unsigned threads = 1);

/// Default oracle resolution: 1e-3 for K <= 3, 1e-2 for K = 4, 5e-2 beyond.
double default_grid_resolution(std::size_t k);

enum class NonCovertVariant { AsWritten, MinOutside };

struct ExponentSolution {
    /// Exponent value; includes the sqrt(2 eta) factor for covert modes.
    double value = 0.0;
    /// value / sqrt(2 eta) for covert modes, value otherwise.
    double objective = 0.0;
    EffectiveActionDist argmax_pbar = EffectiveActionDist::uniform(1);
    std::optional<std::size_t> binding_hypothesis;
    std::optional<std::size_t> binding_challenger;
    double eta = 0.0;
    std::vector<SolverTraceEntry> solver_trace;
    /// HT modes: the inner optimum for every hypothesis (value, argmax).
    std::vector<FractionalResult> per_hypothesis;
};

/// min over theta' != theta of sum_x pbar(x) D(nu_theta^x || nu_theta'^x), divided by
/// sqrt(chi2(sum_x pbar(x) q_theta^x || q_theta^0)). pbar indexes actions 1..K.
double covert_ht_objective(const HypothesisModel& model, std::size_t theta, std::span<const double> pbar);

double noncovert_ht_objective(const HypothesisModel& model, std::size_t theta, std::span<const double> pbar,
                              NonCovertVariant variant);

/// Optimizes the covert HT objective for one hypothesis.
FractionalResult covert_ht_for_hypothesis(const HypothesisModel& model, std::size_t theta,
                                          const SolverOptions& options = {});

ExponentSolution covert_ht_exponent(const HypothesisModel& model, double eta, const SolverOptions& options = {});

ExponentSolution noncovert_ht_exponent(const HypothesisModel& model, NonCovertVariant variant,
                                       const SolverOptions& options = {});

/// Closed-form inf over alternative unit-Gaussian bandits of sum_x pbar(x) D(nu_x || nu'_x):
/// 1/2 min over challengers x of pbar(b) pbar(x) (mu_b - mu_x)^2 / (pbar(b) + pbar(x)).
/// pbar and means index the non-null arms 1..K.
double alt_inf_gaussian(std::span<const double> pbar, std::span<const double> effective_means);

/// alt_inf_gaussian / sqrt(exp((sum pbar mu_q)^2) - 1).
double covert_bai_objective(const GaussianBanditModel& bandit, std::span<const double> pbar);

/// Covert BAI program over the floored simplex with Alice means replaced by `alice_effective_means`
/// (used by the policy to solve for an empirical bandit). Warm-starts from `start` if given.
FractionalResult covert_bai_program(std::span<const double> alice_effective_means,
                                    std::span<const double> willie_effective_means, const SolverOptions& options,
                                    std::span<const double> start = {});

ExponentSolution covert_bai_exponent(const GaussianBanditModel& bandit, double eta, double zeta_floor = 0.0,
                                     const SolverOptions& options = {});

ExponentSolution noncovert_bai_exponent(const GaussianBanditModel& bandit, double zeta_floor = 0.0,
                                        const SolverOptions& options = {});

/// Grid-oracle counterparts. The value follows the same convention as the
/// Dinkelbach solution (sqrt(2 eta) included for covert modes).
ExponentSolution grid_covert_ht(const HypothesisModel& model, double eta, double resolution, unsigned threads = 1);
ExponentSolution grid_noncovert_ht(const HypothesisModel& model, NonCovertVariant variant, double resolution,
                                   unsigned threads = 1);
ExponentSolution grid_covert_bai(const GaussianBanditModel& bandit, double eta, double zeta_floor, double resolution,
                                 unsigned threads = 1);
ExponentSolution grid_noncovert_bai(const GaussianBanditModel& bandit, double zeta_floor, double resolution,
                                    unsigned threads = 1);

}  // namespace covert
