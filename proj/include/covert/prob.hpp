#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "covert/rng.hpp"

namespace covert {

inline constexpr double kProbSumTolerance = 1e-12;

/// A distribution over a finite alphabet {0, ..., size-1}.
///
/// Construction validates the probabilities (nonnegative, summing to one
/// within 1e-12). Inputs are never silently renormalized; use normalize()
/// for that.
class Categorical {
public:
    explicit Categorical(std::vector<double> probs);

    static Categorical normalize(std::vector<double> weights);
    static Categorical bernoulli(double p1);
    static Categorical point_mass(std::size_t size, std::size_t at);
    static Categorical uniform(std::size_t size);

    std::size_t size() const { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::span<const double> probs() const { return probs_; }

    friend bool operator==(const Categorical&, const Categorical&) = default;

private:
    std::vector<double> probs_;
};

/// N(mean, 1). The variance is fixed by construction.
struct UnitGaussian {
    double mean = 0.0;
};

/// A distribution over the non-null actions 1..K, stored at indices 0..K-1.
class EffectiveActionDist {
public:
    explicit EffectiveActionDist(std::vector<double> probs, double floor = 0.0);

    static EffectiveActionDist uniform(std::size_t k);
    static EffectiveActionDist point_mass(std::size_t k, std::size_t at);

    std::size_t size() const { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::span<const double> probs() const { return probs_; }
    double floor() const { return floor_; }

private:
    std::vector<double> probs_;
    double floor_ = 0.0;
};

/// Full action distribution over {0, 1, ..., K}: null action with mass
/// 1 - alpha, effective action x with mass alpha * effective[x-1].
class ActionDist {
public:
    ActionDist(double alpha, EffectiveActionDist effective);

    static ActionDist pure_null(std::size_t k);

    double alpha() const { return alpha_; }
    double null_mass() const { return 1.0 - alpha_; }
    const EffectiveActionDist& effective() const { return effective_; }
    std::size_t num_actions() const { return effective_.size() + 1; }

    /// Probability of action x in {0..K}.
    double prob(std::size_t x) const;
    std::vector<double> full() const;

private:
    double alpha_;
    EffectiveActionDist effective_;
};

/// D(p||q) in nats, with 0 log 0 = 0.
/// Throws AbsoluteContinuityViolation when p(x) > 0 = q(x).
double kl_categorical(const Categorical& p, const Categorical& q);

double kl_unit_gaussian(UnitGaussian a, UnitGaussian b);

/// Sum (p - q)^2 / q. Terms with p(x) = q(x) = 0 contribute 0.
double chi2_categorical(const Categorical& p, const Categorical& q);

/// Chi-square distance between sum_x w(x) N(mu_x, 1) and N(0, 1), which
/// collapses to exp((sum_x w(x) mu_x)^2) - 1.
double chi2_gaussian_mixture(const EffectiveActionDist& weights, std::span<const double> arm_means,
                             double null_mean = 0.0);

/// D((1-alpha) N(0,1) + alpha sum_x w(x) N(mu_x,1) || N(0,1)) by adaptive
/// Gauss-Kronrod quadrature.
double kl_gaussian_mixture(double alpha, std::span<const double> weights, std::span<const double> arm_means);

/// Same quantity with a fixed composite Gauss-Legendre rule; for inner loops.
double kl_gaussian_mixture_fast(double alpha, std::span<const double> weights, std::span<const double> arm_means);

double tv_categorical(const Categorical& p, const Categorical& q);

Categorical mixture(std::span<const double> weights, std::span<const Categorical> components);

/// Draws one outcome index.
std::size_t sample(const Categorical& dist, RngStream& rng);

/// Inverse-CDF draw from raw probabilities (no validation; hot loops only).
std::size_t sample_index(std::span<const double> probs, RngStream& rng);

}  // namespace covert
