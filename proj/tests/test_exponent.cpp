#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "covert/error.hpp"
#include "covert/exponent.hpp"
#include "support.hpp"

using namespace covert;
using covert::testing::random_ht_model;
using covert::testing::table12;
using covert::testing::table3;

namespace {

// Direct evaluation of the covert objective from the model tables.
double covert_objective_by_hand(const HypothesisModel& m, std::size_t theta, const std::vector<double>& pbar) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t2 = 0; t2 < m.num_hypotheses(); ++t2) {
        if (t2 == theta) continue;
        double s = 0.0;
        for (std::size_t x = 1; x <= m.num_effective(); ++x)
            s += pbar[x - 1] * kl_categorical(m.alice(theta, x), m.alice(t2, x));
        best = std::min(best, s);
    }
    std::vector<double> mix(m.willie_alphabet(), 0.0);
    for (std::size_t x = 1; x <= m.num_effective(); ++x)
        for (std::size_t z = 0; z < mix.size(); ++z) mix[z] += pbar[x - 1] * m.willie(theta, x)[z];
    double chi2 = 0.0;
    for (std::size_t z = 0; z < mix.size(); ++z) {
        const double q = m.willie(theta, 0)[z];
        chi2 += (mix[z] - q) * (mix[z] - q) / q;
    }
    return best / std::sqrt(chi2);
}

}  // namespace

TEST_CASE("covert HT objective matches the tables") {
    const HypothesisModel m = table12(0.01);
    for (std::vector<double> p : {std::vector<double>{0.5, 0.5}, std::vector<double>{0.2, 0.8}}) {
        for (std::size_t th = 0; th < 3; ++th)
            CHECK(covert_ht_objective(m, th, p) == doctest::Approx(covert_objective_by_hand(m, th, p)).epsilon(1e-12));
    }
}

TEST_CASE("unregularized Bernoulli example has an infinite covert chi-square") {
    const HypothesisModel m = table12();
    CHECK(m.has_degenerate_null());
    CHECK_THROWS_AS(covert_ht_exponent(m, 1.0), AbsoluteContinuityViolation);
}

TEST_CASE("non-covert optimizers of the worked examples") {
    const auto plain = noncovert_bai_exponent(table3());
    CHECK(plain.value == doctest::Approx(0.03125).epsilon(1e-6));
    CHECK(plain.argmax_pbar[0] == doctest::Approx(0.5).epsilon(1e-3));

    const auto ht = noncovert_ht_exponent(table12(), NonCovertVariant::MinOutside);
    REQUIRE(ht.binding_hypothesis);
    CHECK(*ht.binding_hypothesis == 1);
    CHECK(ht.argmax_pbar[0] == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(ht.argmax_pbar[1] == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("Gaussian alternative infimum") {
    const std::vector<double> mu = {1.0, 0.5};
    const std::vector<double> half = {0.5, 0.5}, skew = {0.3, 0.7};
    CHECK(alt_inf_gaussian(half, mu) == doctest::Approx(0.03125));
    CHECK(alt_inf_gaussian(skew, mu) == doctest::Approx(0.02625));
    // Brute-force infimum over alternatives that move both means to a common value.
    double brute = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100000; ++i) {
        const double c = 0.5 + 0.5 * i / 100000.0;
        brute = std::min(brute, 0.5 * (skew[0] * (1 - c) * (1 - c) + skew[1] * (0.5 - c) * (0.5 - c)));
    }
    CHECK(alt_inf_gaussian(skew, mu) == doctest::Approx(brute).epsilon(1e-8));
}

TEST_CASE("covert BAI optimum agrees with the grid oracle") {
    const auto sol = covert_bai_exponent(table3(), 1.0);
    const auto grid = grid_covert_bai(table3(), 1.0, 0.0, 1e-3);
    CHECK(std::abs(sol.value - grid.value) < 1e-6);
    CHECK(sol.objective == doctest::Approx(sol.value / std::sqrt(2.0)));
}

TEST_CASE("Dinkelbach matches the grid oracle on random instances") {
    std::mt19937_64 g(23);
    for (int i = 0; i < 6; ++i) {
        const HypothesisModel m = random_ht_model(g, 2 + i % 2, 2 + (i / 2) % 2);
        const double res = 1e-3;
        const auto c = covert_ht_exponent(m, 1.0);
        CHECK(std::abs(c.value - grid_covert_ht(m, 1.0, res).value) < 1e-3);
        const auto p = noncovert_ht_exponent(m, NonCovertVariant::MinOutside);
        CHECK(std::abs(p.value - grid_noncovert_ht(m, NonCovertVariant::MinOutside, res).value) < 1e-3);
    }
}

TEST_CASE("grid oracle is independent of the worker count") {
    const HypothesisModel m = table12(0.01);
    const auto one = grid_covert_ht(m, 1.0, 1e-3, 1);
    const auto three = grid_covert_ht(m, 1.0, 1e-3, 3);
    CHECK(one.value == three.value);
    CHECK(one.argmax_pbar[0] == three.argmax_pbar[0]);
}

TEST_CASE("fractional program on a known ratio") {
    // maximize (p0) / (1 + p0^2) over the 2-simplex: optimum at p0 = 1 with ratio 1/2.
    FractionalProgram prog;
    prog.dim = 2;
    prog.numerator = [](std::span<const double> p, std::span<double> g) {
        g[0] = 1.0;
        g[1] = 0.0;
        return p[0];
    };
    prog.denominator = [](std::span<const double> p, std::span<double> g) {
        g[0] = 2 * p[0];
        g[1] = 0.0;
        return 1.0 + p[0] * p[0];
    };
    const auto r = maximize_ratio(prog, {});
    CHECK(r.ratio == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(r.argmax[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("indistinguishable hypotheses are rejected up front") {
    // Their objective would be identically zero; the model refuses them instead.
    const auto ber = [](double p) { return Categorical::bernoulli(p); };
    const std::vector<Categorical> same = {ber(0.5), ber(0.7), ber(0.2)};
    const std::vector<Categorical> w = {ber(0.3), ber(0.6), ber(0.8)};
    const std::vector<Categorical> other = {ber(0.5), ber(0.1), ber(0.9)};
    CHECK_THROWS_AS(HypothesisModel({"a", "b", "c"}, {"0", "1", "2"}, {same, same, other}, {w, w, w}), ValidationError);
}

TEST_CASE("dominant action wins") {
    const auto ber = [](double p) { return Categorical::bernoulli(p); };
    const std::vector<Categorical> w = {ber(0.3), ber(0.6), ber(0.6)};
    const HypothesisModel m({"a", "b"}, {"0", "1", "2"}, {{ber(0.5), ber(0.9), ber(0.55)}, {ber(0.5), ber(0.1), ber(0.5)}},
                            {w, w});
    const auto s = covert_ht_exponent(m, 1.0);
    CHECK(s.argmax_pbar[0] == doctest::Approx(1.0).epsilon(1e-6));
    const auto p = noncovert_ht_exponent(m, NonCovertVariant::MinOutside);
    CHECK(p.argmax_pbar[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("as-written variant vanishes at b in the Bernoulli example") {
    const HypothesisModel m = table12();
    for (std::vector<double> p : {std::vector<double>{0.5, 0.5}, std::vector<double>{0.1, 0.9}, std::vector<double>{1, 0}})
        CHECK(noncovert_ht_objective(m, 1, p, NonCovertVariant::AsWritten) == 0.0);
}

TEST_CASE("variants coincide for a single pair of hypotheses") {
    std::mt19937_64 g(5);
    const HypothesisModel m = random_ht_model(g, 2, 2);
    const auto a = noncovert_ht_exponent(m, NonCovertVariant::AsWritten);
    const auto b = noncovert_ht_exponent(m, NonCovertVariant::MinOutside);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-9));
}

TEST_CASE("Bernoulli example objective at b") {
    const HypothesisModel m = table12(0.01);
    const std::vector<double> p = {0.5, 0.5};
    // Every alternative differs from b in one action with D(Ber(0.9) || Ber(0.6)); Willie's mixture is
    // Ber(0.75) against the regularized null Ber(0.005).
    const double d = 0.9 * std::log(0.9 / 0.6) + 0.1 * std::log(0.1 / 0.4);
    const double chi2 = (0.25 - 0.995) * (0.25 - 0.995) / 0.995 + (0.75 - 0.005) * (0.75 - 0.005) / 0.005;
    CHECK(covert_ht_objective(m, 1, p) == doctest::Approx(0.5 * d / std::sqrt(chi2)).epsilon(1e-9));
}

TEST_CASE("Gaussian objectives") {
    const std::vector<double> mu = {0.7, 0.7}, p = {0.5, 0.5};
    CHECK(alt_inf_gaussian(p, mu) == 0.0);
    const auto tiny = covert_bai_exponent(GaussianBanditModel({0, 1, 0.5}, {0, 0.1, 0.1}), 1.0);
    const auto huge = covert_bai_exponent(GaussianBanditModel({0, 1, 0.5}, {0, 2.0, 2.0}), 1.0);
    CHECK(tiny.value > huge.value);

    // Equal-gap challengers split the remaining mass evenly.
    const auto sym = noncovert_bai_exponent(GaussianBanditModel({0, 1, 0.5, 0.5}, {0, 1, 1, 1}));
    CHECK(sym.argmax_pbar[1] == doctest::Approx(sym.argmax_pbar[2]).epsilon(1e-3));
    const auto grid = grid_noncovert_bai(GaussianBanditModel({0, 1, 0.5, 0.5}, {0, 1, 1, 1}), 0.0, 1e-3);
    CHECK(std::abs(sym.value - grid.value) < 1e-6);

    // Single challenger: interior optimum.
    const auto one = covert_bai_exponent(GaussianBanditModel({0, 1, 0.2}, {0, 0.3, 1.5}), 1.0);
    CHECK(one.argmax_pbar[0] > 0.01);
    CHECK(one.argmax_pbar[0] < 0.99);
    const auto one_grid = grid_covert_bai(GaussianBanditModel({0, 1, 0.2}, {0, 0.3, 1.5}), 1.0, 0.0, 1e-3);
    CHECK(std::abs(one.value - one_grid.value) < 1e-4);
}

TEST_CASE("floored optimum never beats the unfloored one") {
    const auto b = table3();
    const double free = covert_bai_exponent(b, 1.0).value;
    double previous = free;
    for (double floor : {1e-4, 0.1, 0.3, 0.45}) {
        const double v = covert_bai_exponent(b, 1.0, floor).value;
        CHECK(v <= previous + 1e-9);
        previous = v;
    }
    CHECK(covert_bai_exponent(b, 1.0, 1e-6).value == doctest::Approx(free).epsilon(1e-5));
}
