#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "covert/prob.hpp"

namespace covert {

/// A run of consecutive steps that used the same control distribution.
struct ControlSegment {
    ActionDist control;
    std::uint64_t steps = 0;
};

/// Outcome of one simulated episode, shared by the hypothesis-testing and
/// best-arm policies. `decision` and `truth` are hypothesis indices for the
/// former and arm indices (1..K) for the latter.
struct EpisodeResult {
    std::uint64_t stop_time = 0;
    bool timed_out = false;
    std::optional<std::size_t> decision;
    std::size_t truth = 0;
    bool correct = false;
    std::uint64_t effective_pulls = 0;
    /// Sum over the counted steps of D(Willie output under that step's control || null output).
    double kl_bound = 0.0;
    /// Stopping-rule slack at tau: statistic minus threshold (>= 0 for HT, > 0 for BAI).
    double stop_margin = 0.0;
    double stop_statistic = 0.0;
    double stop_threshold = 0.0;
    /// Number of control refreshes whose alpha had to be clamped below one.
    std::uint64_t alpha_clamps = 0;

    std::vector<std::uint16_t> action_trace;
    std::vector<double> willie_trace;
    std::vector<ControlSegment> control_trace;
};

struct EpisodeOptions {
    /// Unset selects the policy's default cap; 0 times out immediately.
    std::optional<std::uint64_t> horizon_cap;
    bool record_actions = false;
    /// Willie observations force literal step-by-step simulation.
    bool record_willie = false;
    bool record_controls = false;
    /// After stopping, keep emitting null-action Willie outputs until this many steps exist.
    std::uint64_t pad_willie_to = 0;
    /// Literal per-step loop even when no trace needs it (testing).
    bool literal = false;
};

}  // namespace covert
