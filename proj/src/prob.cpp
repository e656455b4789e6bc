#include "covert/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "covert/error.hpp"

namespace covert {
namespace {

void check_probs(std::span<const double> probs, const char* what) {
    if (probs.empty()) throw InvalidDistribution(std::string(what) + ": empty alphabet");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p))
            throw InvalidDistribution(std::string(what) + ": negative or non-finite entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance)
        throw InvalidDistribution(std::string(what) + ": entries sum to " + std::to_string(sum));
}

void check_same_size(const Categorical& p, const Categorical& q) {
    if (p.size() != q.size())
        throw AlphabetMismatch("alphabet sizes differ: " + std::to_string(p.size()) + " vs " +
                               std::to_string(q.size()));
}

}  // namespace

Categorical::Categorical(std::vector<double> probs) : probs_(std::move(probs)) {
    check_probs(probs_, "Categorical");
}

Categorical Categorical::normalize(std::vector<double> weights) {
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidDistribution("normalize: bad weight");
        sum += w;
    }
    if (!(sum > 0.0)) throw InvalidDistribution("normalize: weights sum to zero");
    for (double& w : weights) w /= sum;
    return Categorical(std::move(weights));
}

Categorical Categorical::bernoulli(double p1) {
    if (!(p1 >= 0.0 && p1 <= 1.0)) throw InvalidDistribution("bernoulli parameter outside [0,1]");
    return Categorical({1.0 - p1, p1});
}

Categorical Categorical::point_mass(std::size_t size, std::size_t at) {
    std::vector<double> p(size, 0.0);
    p.at(at) = 1.0;
    return Categorical(std::move(p));
}

Categorical Categorical::uniform(std::size_t size) {
    return Categorical(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

EffectiveActionDist::EffectiveActionDist(std::vector<double> probs, double floor)
    : probs_(std::move(probs)), floor_(floor) {
    check_probs(probs_, "EffectiveActionDist");
    if (floor_ < 0.0 || floor_ * static_cast<double>(probs_.size()) > 1.0 + kProbSumTolerance)
        throw InvalidDistribution("EffectiveActionDist: infeasible floor");
    for (double p : probs_)
        if (p < floor_ - kProbSumTolerance)
            throw InvalidDistribution("EffectiveActionDist: entry below floor");
}

EffectiveActionDist EffectiveActionDist::uniform(std::size_t k) {
    return EffectiveActionDist(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

EffectiveActionDist EffectiveActionDist::point_mass(std::size_t k, std::size_t at) {
    std::vector<double> p(k, 0.0);
    p.at(at) = 1.0;
    return EffectiveActionDist(std::move(p));
}

ActionDist::ActionDist(double alpha, EffectiveActionDist effective)
    : alpha_(alpha), effective_(std::move(effective)) {
    if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) throw InvalidDistribution("ActionDist: alpha outside [0,1]");
}

ActionDist ActionDist::pure_null(std::size_t k) { return ActionDist(0.0, EffectiveActionDist::uniform(k)); }

double ActionDist::prob(std::size_t x) const {
    if (x == 0) return 1.0 - alpha_;
    return alpha_ * effective_[x - 1];
}

std::vector<double> ActionDist::full() const {
    std::vector<double> out(num_actions());
    for (std::size_t x = 0; x < out.size(); ++x) out[x] = prob(x);
    return out;
}

double kl_categorical(const Categorical& p, const Categorical& q) {
    check_same_size(p, q);
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0)
            throw AbsoluteContinuityViolation("kl: p(" + std::to_string(i) + ") > 0 but q(" +
                                              std::to_string(i) + ") = 0");
        d += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(d, 0.0);
}

double kl_unit_gaussian(UnitGaussian a, UnitGaussian b) {
    const double diff = a.mean - b.mean;
    return 0.5 * diff * diff;
}

double chi2_categorical(const Categorical& p, const Categorical& q) {
    check_same_size(p, q);
    double c = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double diff = p[i] - q[i];
        if (q[i] == 0.0) {
            if (p[i] != 0.0)
                throw AbsoluteContinuityViolation("chi2: q(" + std::to_string(i) + ") = 0 but p(" +
                                                  std::to_string(i) + ") > 0");
            continue;
        }
        c += diff * diff / q[i];
    }
    return c;
}

double chi2_gaussian_mixture(const EffectiveActionDist& weights, std::span<const double> arm_means,
                             double null_mean) {
    if (null_mean != 0.0) throw NonZeroNullMean("chi2_gaussian_mixture requires a zero null mean");
    if (weights.size() != arm_means.size())
        throw AlphabetMismatch("chi2_gaussian_mixture: weights and means differ in length");
    double m = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) m += weights[i] * arm_means[i];
    return std::expm1(m * m);
}

namespace {

// Integrand of D(M || N(0,1)) written as phi(z) * ((1+a) log1p(a) - a), a = r(z) - 1,
// which is pointwise nonnegative and avoids cancellation in the tails.
struct MixtureIntegrand {
    double alpha;
    std::span<const double> w;
    std::span<const double> mu;

    double operator()(double z) const {
        double lr = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) lr += w[i] * std::exp(mu[i] * z - 0.5 * mu[i] * mu[i]);
        const double a = alpha * (lr - 1.0);
        double g;
        if (std::abs(a) < 1e-5)
            g = a * a * (0.5 - a / 6.0 + a * a / 12.0);
        else
            g = (1.0 + a) * std::log1p(a) - a;
        return g * std::exp(-0.5 * z * z) * 0.3989422804014327;
    }
};

void check_mixture_args(double alpha, std::span<const double> w, std::span<const double> mu) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("mixture weight alpha must lie in [0, 1]");
    if (w.size() != mu.size()) throw AlphabetMismatch("kl_gaussian_mixture: weights and means differ in length");
}

std::pair<double, double> mixture_range(std::span<const double> mu) {
    double lo = 0.0, hi = 0.0;
    for (double m : mu) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    return {lo - 13.0, hi + 13.0};
}

}  // namespace

double kl_gaussian_mixture(double alpha, std::span<const double> weights, std::span<const double> arm_means) {
    check_mixture_args(alpha, weights, arm_means);
    if (alpha == 0.0) return 0.0;
    const MixtureIntegrand f{alpha, weights, arm_means};
    const auto [lo, hi] = mixture_range(arm_means);
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 20, 1e-13, &err);
}

double kl_gaussian_mixture_fast(double alpha, std::span<const double> weights, std::span<const double> arm_means) {
    check_mixture_args(alpha, weights, arm_means);
    if (alpha == 0.0) return 0.0;
    const MixtureIntegrand f{alpha, weights, arm_means};
    const auto [lo, hi] = mixture_range(arm_means);
    constexpr int kPanels = 8;
    const double width = (hi - lo) / kPanels;
    double total = 0.0;
    for (int i = 0; i < kPanels; ++i)
        total += boost::math::quadrature::gauss<double, 20>::integrate(f, lo + i * width, lo + (i + 1) * width);
    return total;
}

double tv_categorical(const Categorical& p, const Categorical& q) {
    check_same_size(p, q);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

Categorical mixture(std::span<const double> weights, std::span<const Categorical> components) {
    if (weights.size() != components.size() || components.empty())
        throw AlphabetMismatch("mixture: weight/component count mismatch");
    check_probs(weights, "mixture weights");
    const std::size_t n = components.front().size();
    std::vector<double> out(n, 0.0);
    for (std::size_t c = 0; c < components.size(); ++c) {
        if (components[c].size() != n) throw AlphabetMismatch("mixture: component alphabets differ");
        for (std::size_t i = 0; i < n; ++i) out[i] += weights[c] * components[c][i];
    }
    // Rounding can push the sum off by a few ulps.
    return Categorical::normalize(std::move(out));
}

std::size_t sample_index(std::span<const double> probs, RngStream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // Land on the last index with positive mass.
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0) return i;
    return probs.size() - 1;
}

std::size_t sample(const Categorical& dist, RngStream& rng) { return sample_index(dist.probs(), rng); }

}  // namespace covert
