#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "covert/episode.hpp"
#include "covert/prob.hpp"

namespace covert {

/// D(sum_x control(x) willie[x] || willie[0]) for a discrete Willie channel.
/// willie holds one output distribution per action 0..K.
double per_step_divergence(const ActionDist& control, std::span<const Categorical> willie);

/// Gaussian counterpart: Willie sees N(mu_x, 1) for action x. willie_means covers 0..K and
/// willie_means[0] must be 0. Uses adaptive quadrature.
double per_step_divergence(const ActionDist& control, std::span<const double> willie_means);

struct CovertnessReport {
    /// Sum of per-step divergences over the audited steps (upper bound on Willie's divergence).
    double analytic_bound = 0.0;
    /// Plug-in estimate of D(P_{Z^k} || (q^0)^k) from traces; discrete channels with k <= 3 only.
    std::optional<double> empirical_estimate;
    double eta = 0.0;
    std::uint64_t step_count = 0;
    double slack = 0.0;
    bool within_budget = true;
    std::vector<double> per_step_series;
};

struct AuditOptions {
    /// Steps after the trace ends count as null steps (zero divergence).
    std::uint64_t step_count = 0;
    double eta = 0.0;
    double slack = 0.0;
    bool keep_series = false;
};

/// Accumulates per-step divergences of a control trace over the first step_count steps.
CovertnessReport audit_episode(std::span<const ControlSegment> trace, std::span<const Categorical> willie,
                               const AuditOptions& options);
CovertnessReport audit_episode(std::span<const ControlSegment> trace, std::span<const double> willie_means,
                               const AuditOptions& options);

/// Plug-in D(empirical law of the first k symbols || null^k). Requires k <= 3.
double empirical_trace_divergence(std::span<const std::vector<double>> traces, const Categorical& null_output,
                                  std::size_t k);

struct DetectorResult {
    std::size_t k = 0;
    /// Miss rate: traces from the active law declared idle.
    double alpha = 0.0;
    /// False-alarm rate: traces from the idle law declared active.
    double beta = 0.0;
    double sum_lower_bound = 0.0;
    /// 95% half-width of alpha + beta.
    double ci_halfwidth = 0.0;
    /// True when eta > 1 and the reference bound is vacuous.
    bool vacuous = false;
    std::string approximation = "mean-field product of per-step expected outputs";
};

/// Likelihood-ratio test at threshold 1 between a product of active marginals and the
/// null product, on the first k symbols of each trace. active_marginals has length 1
/// (reused for every step) or at least k. Ties are declared active.
DetectorResult detect(std::span<const std::vector<double>> active_traces,
                      std::span<const std::vector<double>> idle_traces, std::span<const Categorical> active_marginals,
                      const Categorical& null_output, std::size_t k, double eta);

/// Gaussian version: the active marginal is (1-alpha) N(0,1) + alpha sum_x pbar(x) N(mu_x, 1).
DetectorResult detect(std::span<const std::vector<double>> active_traces,
                      std::span<const std::vector<double>> idle_traces, const ActionDist& control,
                      std::span<const double> willie_means, std::size_t k, double eta);

struct BhCheck {
    double lhs = 0.0;
    double bound = 0.0;
    /// lhs - bound.
    double slack = 0.0;
    double std_error = 0.0;
};

/// Empirical P(E^c) under the first law plus P(E) under the second, against 1/2 exp(-D).
BhCheck bh_bound_check(std::span<const std::uint8_t> event_under_first, std::span<const std::uint8_t> event_under_second,
                       double divergence);

}  // namespace covert
