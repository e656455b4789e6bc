#pragma once

#include <cstdint>
#include <random>

namespace covert {

/// SplitMix64 finalizer. Used to turn structured counters into well-spread seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// A caller-owned random stream. Every sampling routine in the library takes
/// one of these explicitly; there is no global generator.
///
/// Streams for parallel work are derived from (master seed, cell, episode)
/// counters, so the draws an episode sees depend only on its indices and not
/// on which worker ran it.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    static RngStream derive(std::uint64_t master, std::uint64_t cell, std::uint64_t episode) {
        std::uint64_t h = splitmix64(master);
        h = splitmix64(h ^ splitmix64(cell + 0x632BE59BD9B4E019ULL));
        h = splitmix64(h ^ splitmix64(episode + 0x85157AF5ULL));
        std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                          static_cast<std::uint32_t>(cell), static_cast<std::uint32_t>(episode)};
        return RngStream(seq);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() { return normal_(engine_); }

    /// Number of failures before the first success of a Bernoulli(p) sequence.
    std::uint64_t geometric(double p) {
        if (p >= 1.0) return 0;
        std::geometric_distribution<std::uint64_t> dist(p);
        return dist(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    explicit RngStream(std::seed_seq& seq) : engine_(seq) {}

    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace covert
