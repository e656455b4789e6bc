#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "covert/error.hpp"
#include "covert/model.hpp"
#include "covert/prob.hpp"

namespace covert::testing {

inline HypothesisModel table12(double regularize = 0.0) {
    auto ber = [](double p1) { return Categorical::bernoulli(p1); };
    std::vector<std::vector<Categorical>> alice = {
        {ber(0.0), ber(0.9), ber(0.6)},
        {ber(0.0), ber(0.9), ber(0.9)},
        {ber(0.0), ber(0.6), ber(0.9)},
    };
    std::vector<Categorical> w = {ber(0.0), ber(0.6), ber(0.9)};
    HypothesisModel m({"a", "b", "c"}, {"0", "1", "2"}, alice, {w, w, w});
    return regularize > 0.0 ? m.regularize_null(regularize) : m;
}

inline GaussianBanditModel table3() { return GaussianBanditModel({0.0, 1.0, 0.5}, {0.0, 1.0, 0.5}); }

inline Categorical random_categorical(std::mt19937_64& g, std::size_t size, double lo = 0.0) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> w(size);
    for (auto& v : w) v = e(g) + lo;
    return Categorical::normalize(w);
}

/// A random well-posed instance with K effective actions and h hypotheses
/// over binary or ternary alphabets; retries until the model validates.
inline HypothesisModel random_ht_model(std::mt19937_64& g, std::size_t k, std::size_t h) {
    std::uniform_int_distribution<std::size_t> alphabet(2, 3);
    for (;;) {
        const std::size_t ny = alphabet(g), nz = alphabet(g);
        std::vector<std::string> hyps, acts;
        for (std::size_t i = 0; i < h; ++i) hyps.push_back(std::string(1, static_cast<char>('a' + i)));
        for (std::size_t x = 0; x <= k; ++x) acts.push_back(std::to_string(x));
        const Categorical alice_null = random_categorical(g, ny, 0.05);
        std::vector<std::vector<Categorical>> alice(h), willie(h);
        for (std::size_t t = 0; t < h; ++t) {
            alice[t].push_back(alice_null);
            willie[t].push_back(random_categorical(g, nz, 0.3));
            for (std::size_t x = 1; x <= k; ++x) {
                alice[t].push_back(random_categorical(g, ny, 0.05));
                willie[t].push_back(random_categorical(g, nz, 0.05));
            }
        }
        try {
            return HypothesisModel(hyps, acts, alice, willie);
        } catch (const ValidationError&) {
        }
    }
}

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

inline double normal_pdf(double z, double mu = 0.0) {
    return std::exp(-0.5 * (z - mu) * (z - mu)) / std::sqrt(2.0 * M_PI);
}

}  // namespace covert::testing
