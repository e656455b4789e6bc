#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "covert/episode.hpp"
#include "covert/exponent.hpp"
#include "covert/model.hpp"
#include "covert/prob.hpp"
#include "covert/rng.hpp"

namespace covert {

/// Returns the optimal effective-action weights for one hypothesis.
using HtSolver = std::function<FractionalResult(const HypothesisModel&, std::size_t theta)>;

/// Immutable covert sequential test. One control distribution and one row of
/// thresholds per hypothesis; the control in force at step t is the one of the
/// maximum-likelihood hypothesis after t-1 steps.
class SeqTestPolicy {
public:
    const HypothesisModel& model() const { return model_; }
    std::uint64_t n() const { return n_; }
    double eta() const { return eta_; }
    double zeta() const { return zeta_; }
    std::uint64_t horizon_cap() const { return horizon_cap_; }

    const ActionDist& control(std::size_t theta) const { return controls_[theta]; }
    double alpha(std::size_t theta) const { return controls_[theta].alpha(); }
    double threshold(std::size_t theta, std::size_t theta2) const { return thresholds_[theta * h_ + theta2]; }
    /// chi2(sum_x pbar_theta(x) q_theta^x || q_theta^0).
    double chi2(std::size_t theta) const { return chi2_[theta]; }
    /// Probabilities over {0..K} of control(theta).
    std::span<const double> action_probs(std::size_t theta) const { return full_[theta]; }
    /// n alpha^2 chi2 / 2 for the given hypothesis's own control.
    double covertness_leading_term(std::size_t theta) const;

    /// D(Willie output under control(ml) || q_truth^0), one step.
    double step_divergence(std::size_t truth, std::size_t ml) const { return step_div_[truth * h_ + ml]; }

    /// log(alice(theta,x)(y) / alice(theta2,x)(y)); exactly antisymmetric in (theta, theta2).
    double log_ratio(std::size_t x, std::size_t y, std::size_t theta, std::size_t theta2) const {
        return log_ratio_[((x * ny_ + y) * h_ + theta) * h_ + theta2];
    }
    double log_likelihood(std::size_t x, std::size_t y, std::size_t theta) const {
        return log_lik_[(x * ny_ + y) * h_ + theta];
    }

private:
    friend SeqTestPolicy build_policy(const HypothesisModel&, std::uint64_t, double, double, const HtSolver&,
                                      std::uint64_t);

    explicit SeqTestPolicy(HypothesisModel model) : model_(std::move(model)) {}

    HypothesisModel model_;
    std::uint64_t n_ = 0;
    double eta_ = 0.0;
    double zeta_ = 0.0;
    std::uint64_t horizon_cap_ = 0;
    std::size_t h_ = 0;
    std::size_t ny_ = 0;
    std::vector<ActionDist> controls_;
    std::vector<std::vector<double>> full_;
    std::vector<double> thresholds_;
    std::vector<double> chi2_;
    std::vector<double> step_div_;
    std::vector<double> log_ratio_;
    std::vector<double> log_lik_;
};

/// Builds the policy. horizon_multiple sets the default cap to that multiple of n.
/// Throws BudgetTooSmall when some alpha exceeds 1 or some threshold is not positive.
SeqTestPolicy build_policy(const HypothesisModel& model, std::uint64_t n, double eta, double zeta,
                           const HtSolver& solver = {}, std::uint64_t horizon_multiple = 4);

enum class TestStatus { Continue, Stopped };

struct Emission {
    std::size_t action = 0;
    std::size_t alice_obs = 0;
    std::size_t willie_obs = 0;
};

class SeqTestState {
public:
    explicit SeqTestState(const SeqTestPolicy& policy);

    std::uint64_t t() const { return t_; }
    TestStatus status() const { return status_; }
    std::size_t ml_estimate() const { return ml_; }
    double pairwise_llr(std::size_t theta, std::size_t theta2) const { return llr_[theta * h_ + theta2]; }
    double log_likelihood(std::size_t theta) const { return loglik_[theta]; }
    const std::vector<std::uint64_t>& action_counts() const { return counts_; }
    /// Hypothesis certified by the stopping rule (valid once stopped).
    std::size_t stopped_on() const { return stopped_on_; }

    /// Applies one observation of action x; x = 0 leaves every LLR untouched.
    void observe(const SeqTestPolicy& policy, std::size_t x, std::size_t y);
    /// Records `count` null steps.
    void idle(std::uint64_t count);

    /// Checks the stopping rule and updates status. Returns true when stopped.
    bool check_stop(const SeqTestPolicy& policy);

    /// Smallest A(theta, theta') - Gamma(theta, theta') over theta' for the given theta.
    double margin(const SeqTestPolicy& policy, std::size_t theta) const;

private:
    friend Emission step(const SeqTestPolicy&, SeqTestState&, std::size_t, RngStream&);

    std::size_t h_;
    std::uint64_t t_ = 0;
    TestStatus status_ = TestStatus::Continue;
    std::size_t ml_ = 0;
    std::size_t stopped_on_ = 0;
    std::vector<double> llr_;
    std::vector<double> loglik_;
    std::vector<std::uint64_t> counts_;
};

/// One literal step under `truth`. Throws SteppedAfterStop once stopped.
Emission step(const SeqTestPolicy& policy, SeqTestState& state, std::size_t truth, RngStream& rng);

/// Runs until the stopping rule fires or the horizon cap is hit.
EpisodeResult run_episode(const SeqTestPolicy& policy, std::size_t truth, RngStream& rng,
                          const EpisodeOptions& options = {});

/// The never-stopping twin: follows the same controls for exactly `steps`
/// steps and reports the accumulated covertness bound (decision = ML estimate at the end).
EpisodeResult run_dummy(const SeqTestPolicy& policy, std::size_t truth, RngStream& rng, std::uint64_t steps,
                        const EpisodeOptions& options = {});

}  // namespace covert
