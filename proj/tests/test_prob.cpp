#include <doctest.h>

#include <cmath>
#include <random>

#include "covert/error.hpp"
#include "covert/prob.hpp"
#include "covert/rng.hpp"
#include "covert/simplex.hpp"
#include "support.hpp"

using namespace covert;
using covert::testing::normal_pdf;
using covert::testing::random_categorical;
using covert::testing::simpson;

TEST_CASE("categorical validation") {
    CHECK_THROWS_AS(Categorical({0.5, 0.6}), InvalidDistribution);
    CHECK_THROWS_AS(Categorical({-0.1, 1.1}), InvalidDistribution);
    CHECK_THROWS_AS(Categorical(std::vector<double>{}), InvalidDistribution);
    CHECK_NOTHROW(Categorical({0.25, 0.75}));
    const Categorical n = Categorical::normalize({1.0, 3.0});
    CHECK(n[1] == doctest::Approx(0.75));
}

TEST_CASE("bernoulli KL against hand computation") {
    const double p = 0.9, q = 0.6;
    const double expected = p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q));
    CHECK(kl_categorical(Categorical::bernoulli(0.9), Categorical::bernoulli(0.6)) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.226289).epsilon(1e-5));

    const double small = 0.51 * std::log(1.02) + 0.49 * std::log(0.98);
    CHECK(kl_categorical(Categorical::bernoulli(0.51), Categorical::bernoulli(0.5)) ==
          doctest::Approx(small).epsilon(1e-12));
    CHECK(small == doctest::Approx(2.0003e-4).epsilon(1e-4));
}

TEST_CASE("KL edge cases") {
    const Categorical p({0.0, 1.0}), q({0.5, 0.5});
    CHECK(kl_categorical(p, p) == 0.0);
    CHECK(kl_categorical(p, q) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(kl_categorical(q, p), AbsoluteContinuityViolation);
    CHECK_THROWS_AS(kl_categorical(q, Categorical::uniform(3)), AlphabetMismatch);
}

TEST_CASE("chi-square and TV") {
    const Categorical p = Categorical::bernoulli(0.6), q = Categorical::bernoulli(0.5);
    CHECK(chi2_categorical(p, q) == doctest::Approx(0.04));
    CHECK(tv_categorical(p, q) == doctest::Approx(0.1));
    CHECK(chi2_categorical(q, q) == 0.0);
}

TEST_CASE("randomized divergence identities") {
    std::mt19937_64 g(11);
    std::uniform_int_distribution<std::size_t> size(2, 6);
    for (int i = 0; i < 10000; ++i) {
        const std::size_t m = size(g);
        const Categorical p = random_categorical(g, m), q = random_categorical(g, m, 0.01);
        const double kl = kl_categorical(p, q), tv = tv_categorical(p, q), chi2 = chi2_categorical(p, q);
        REQUIRE(kl >= -1e-15);
        REQUIRE(tv <= std::sqrt(kl / 2.0) + 1e-12);
        REQUIRE(kl <= std::log1p(chi2) + 1e-12);
        REQUIRE(tv <= 1.0);
    }
}

TEST_CASE("Gaussian chi-square of the mean-matched Gaussian") {
    const std::vector<double> means = {1.0, 0.5};
    for (std::vector<double> w : {std::vector<double>{0.5, 0.5}, std::vector<double>{0.3, 0.7}}) {
        const double m = w[0] * means[0] + w[1] * means[1];
        const double quad = simpson([&](double z) {
            const double r = normal_pdf(z, m);
            return r * r / normal_pdf(z);
        }, -20.0, 20.0) - 1.0;
        const double closed = chi2_gaussian_mixture(EffectiveActionDist(w), means);
        CHECK(closed == doctest::Approx(quad).epsilon(1e-6));
    }
    CHECK(chi2_gaussian_mixture(EffectiveActionDist({0.5, 0.5}), means) == doctest::Approx(0.755055).epsilon(1e-6));
    CHECK_THROWS_AS(chi2_gaussian_mixture(EffectiveActionDist({0.5, 0.5}), means, 0.1), NonZeroNullMean);
}

TEST_CASE("Gaussian mixture KL against an independent quadrature") {
    const std::vector<double> w = {0.4, 0.6}, mu = {1.0, -0.5};
    for (double alpha : {1.0, 0.3, 1e-3, 1e-6}) {
        const double quad = simpson([&](double z) {
            const double mix = (1 - alpha) * normal_pdf(z) + alpha * (w[0] * normal_pdf(z, mu[0]) + w[1] * normal_pdf(z, mu[1]));
            return mix * std::log(mix / normal_pdf(z));
        }, -14.0, 14.0, 200000);
        const double adaptive = kl_gaussian_mixture(alpha, w, mu);
        CHECK(adaptive == doctest::Approx(quad).epsilon(alpha < 1e-4 ? 1e-4 : 1e-7));
        CHECK(kl_gaussian_mixture_fast(alpha, w, mu) == doctest::Approx(adaptive).epsilon(1e-8));
    }
    // Single Gaussian: D(N(m,1) || N(0,1)) = m^2 / 2.
    const std::vector<double> one = {1.0}, m = {0.7};
    CHECK(kl_gaussian_mixture(1.0, one, m) == doctest::Approx(0.245).epsilon(1e-10));
    CHECK(kl_unit_gaussian({0.7}, {0.0}) == doctest::Approx(0.245));
}

TEST_CASE("small-alpha Gaussian KL is second order") {
    const std::vector<double> w = {0.5, 0.5}, mu = {1.0, 0.5};
    const double s = 0.75;
    const double chi2 = std::expm1(s * s);
    const double alpha = 1e-4;
    // D ~ alpha^2 chi2 / 2 for the true mixture chi-square, which is at least the closed form.
    const double d = kl_gaussian_mixture(alpha, w, mu);
    CHECK(d > 0.0);
    CHECK(d >= 0.5 * alpha * alpha * chi2 * 0.99);
}

TEST_CASE("action distributions") {
    const ActionDist a(0.2, EffectiveActionDist({0.25, 0.75}));
    CHECK(a.prob(0) == doctest::Approx(0.8));
    CHECK(a.prob(2) == doctest::Approx(0.15));
    CHECK_THROWS_AS(ActionDist(1.5, EffectiveActionDist::uniform(2)), InvalidDistribution);
    CHECK_THROWS_AS(EffectiveActionDist({0.05, 0.95}, 0.1), InvalidDistribution);
}

TEST_CASE("sampler matches its law") {
    RngStream rng(5);
    const Categorical p({0.1, 0.2, 0.3, 0.4});
    std::vector<double> counts(4, 0.0);
    const int n = 1000000;
    for (int i = 0; i < n; ++i) counts[sample(p, rng)] += 1.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double se = std::sqrt(p[i] * (1 - p[i]) / n);
        CHECK(std::abs(counts[i] / n - p[i]) < 5 * se);
    }
}

TEST_CASE("derived streams depend only on their indices") {
    RngStream a = RngStream::derive(3, 1, 7), b = RngStream::derive(3, 1, 7), c = RngStream::derive(3, 7, 1);
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x != c.uniform());
}

TEST_CASE("simplex projection") {
    std::vector<double> v = {0.9, 0.9, -0.5};
    project_to_simplex(v);
    CHECK(v[0] == doctest::Approx(0.5));
    CHECK(v[1] == doctest::Approx(0.5));
    CHECK(v[2] == 0.0);
    std::vector<double> f = {1.0, 0.0, 0.0};
    project_to_simplex(f, 0.1);
    CHECK(f[2] == doctest::Approx(0.1));
    CHECK(f[0] + f[1] + f[2] == doctest::Approx(1.0));
}

TEST_CASE("simplex grid enumeration") {
    CHECK(simplex_grid_size(3, 10) == 66);
    std::size_t seen = 0;
    visit_simplex_grid(3, 10, 0.0, 0, 66, [&](std::size_t i, std::span<const double> p) {
        CHECK(i == seen++);
        CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
    });
    CHECK(seen == 66);
}

TEST_CASE("small worked divergences") {
    CHECK(kl_categorical(Categorical::bernoulli(0.3), Categorical::bernoulli(0.3)) == 0.0);
    CHECK(kl_categorical(Categorical::bernoulli(0.0), Categorical::bernoulli(0.0)) == 0.0);
    CHECK(kl_unit_gaussian({1.0}, {0.5}) == doctest::Approx(0.125));
    CHECK(kl_unit_gaussian({0.5}, {1.0}) == doctest::Approx(0.125));
    CHECK(kl_unit_gaussian({1.0}, {1.0}) == 0.0);
    CHECK_THROWS_AS(chi2_categorical(Categorical::bernoulli(0.6), Categorical::bernoulli(0.0)),
                    AbsoluteContinuityViolation);
    CHECK(tv_categorical(Categorical::bernoulli(0.9), Categorical::bernoulli(0.6)) == doctest::Approx(0.3));
    const std::vector<Categorical> comps = {Categorical::bernoulli(0.9), Categorical::bernoulli(0.6)};
    const std::vector<double> half = {0.5, 0.5};
    CHECK(mixture(half, comps)[1] == doctest::Approx(0.75));
    const std::vector<double> zero_mean = {0.0, 2.0};
    CHECK(chi2_gaussian_mixture(EffectiveActionDist::point_mass(2, 0), zero_mean) == 0.0);
    // exp(0.65^2) - 1 to double precision.
    CHECK(chi2_gaussian_mixture(EffectiveActionDist({0.3, 0.7}), std::vector<double>{1.0, 0.5}) ==
          doctest::Approx(0.5257712196).epsilon(1e-9));
}

TEST_CASE("Gaussian mixture KL approaches its quadratic approximation") {
    const std::vector<double> w = {0.5, 0.5}, mu = {1.0, 0.5};
    const double chi2 = chi2_gaussian_mixture(EffectiveActionDist(w), mu);
    for (double alpha : {0.01, 1e-3}) {
        const double d = kl_gaussian_mixture(alpha, w, mu);
        CHECK(std::abs(d / (0.5 * alpha * alpha * chi2) - 1.0) < 0.1);
    }
}
