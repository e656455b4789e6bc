#include "covert/bai.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "covert/error.hpp"

namespace covert {

EmpiricalBandit::EmpiricalBandit(std::size_t num_arms) : counts_(num_arms, 0), sums_(num_arms, 0.0) {
    if (num_arms < 3) throw InvalidModel("a bandit needs the null arm and at least two effective arms");
}

double EmpiricalBandit::mean(std::size_t x) const {
    return counts_[x] == 0 ? 0.0 : sums_[x] / static_cast<double>(counts_[x]);
}

std::vector<double> EmpiricalBandit::effective_means() const {
    std::vector<double> m(num_effective());
    for (std::size_t x = 1; x < num_arms(); ++x) m[x - 1] = mean(x);
    return m;
}

bool EmpiricalBandit::all_pulled() const {
    return std::all_of(counts_.begin() + 1, counts_.end(), [](std::uint64_t c) { return c > 0; });
}

std::size_t EmpiricalBandit::best_arm() const {
    std::size_t b = 1;
    for (std::size_t x = 2; x < num_arms(); ++x)
        if (mean(x) > mean(b)) b = x;
    return b;
}

void EmpiricalBandit::record(std::size_t x, double reward) {
    ++counts_[x];
    sums_[x] += reward;
    if (x != 0) ++effective_;
}

void EmpiricalBandit::record_idle(std::uint64_t count) { counts_[0] += count; }

EmpiricalBandit EmpiricalBandit::from_tallies(std::vector<std::uint64_t> counts, std::vector<double> means) {
    if (counts.size() != means.size()) throw AlphabetMismatch("counts and means differ in length");
    EmpiricalBandit e(counts.size());
    for (std::size_t x = 0; x < counts.size(); ++x) {
        e.counts_[x] = counts[x];
        e.sums_[x] = means[x] * static_cast<double>(counts[x]);
        if (x != 0) e.effective_ += counts[x];
    }
    return e;
}

void BaiPolicyConfig::validate(std::size_t k) const {
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("eta must be positive and finite");
    const double z = floor_for(k);
    if (!(z >= 0.0) || z * static_cast<double>(k) > 1.0) throw DomainError("zeta_floor * K must not exceed 1");
    if (!(kappa > 0.0 && kappa < 0.5)) throw DomainError("kappa must lie in (0, 0.5)");
    if (recompute_period == 0) throw DomainError("recompute_period must be positive");
    if (k_override && *k_override == 0) throw DomainError("challenger count override must be positive");
}

double f_threshold(double a, std::size_t k) {
    const double kk = static_cast<double>(k);
    if (!(a > 0.0)) throw DomainError("f is defined for a > 0");
    return std::exp(kk - a + kk * std::log(a / kk));
}

double f_inverse(double delta, std::size_t k) {
    if (!(delta > 0.0 && delta <= 1.0)) throw DomainError("f_inverse needs delta in (0, 1]");
    if (k == 0) throw DomainError("f_inverse needs K >= 1");
    const double kk = static_cast<double>(k);
    if (delta == 1.0) return kk;
    double lo = kk;
    double hi = kk + 10.0 * std::abs(std::log(delta)) + 10.0;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (f_threshold(mid, k) > delta)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double glr_statistic(const EmpiricalBandit& emp) {
    if (!emp.all_pulled()) return 0.0;
    const std::size_t b = emp.best_arm();
    const double tb = static_cast<double>(emp.count(b));
    const double mb = emp.mean(b);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t x = 1; x < emp.num_arms(); ++x) {
        if (x == b) continue;
        const double tx = static_cast<double>(emp.count(x));
        const double d = mb - emp.mean(x);
        best = std::min(best, tb * tx * d * d / (2.0 * (tb + tx)));
    }
    return best;
}

double stopping_threshold(const EmpiricalBandit& emp, const BaiPolicyConfig& config) {
    const std::size_t k = config.k_for(emp.num_effective());
    const double t = static_cast<double>(emp.effective_pulls());
    return static_cast<double>(k) * std::log(t * t + t) + f_inverse(config.delta, k);
}

double bai_alpha_formula(std::span<const double> pbar, std::span<const double> alice_effective,
                         std::span<const double> willie_effective, double eta, double delta) {
    double s = 0.0;
    for (std::size_t i = 0; i < pbar.size(); ++i) s += pbar[i] * willie_effective[i];
    const double chi2 = std::expm1(s * s);
    if (!(chi2 > 1e-14))
        throw DegenerateDenominator("the Willie mixture mean is zero; the covert chi-square vanishes");
    return 2.0 * eta / chi2 * alt_inf_gaussian(pbar, alice_effective) / std::abs(std::log(delta));
}

RefreshResult refresh_control(const EmpiricalBandit& emp, const BaiPolicyConfig& config,
                              std::span<const double> willie_effective, const BaiSolver& solver,
                              std::span<const double> start) {
    const std::size_t k = emp.num_effective();
    if (willie_effective.size() != k) throw AlphabetMismatch("Willie means must cover the effective arms");
    const double floor = config.floor_for(k);
    const std::vector<double> means = emp.effective_means();
    std::vector<double> pbar(k, 1.0 / static_cast<double>(k));
    if (emp.all_pulled()) {
        if (solver) {
            pbar = solver(means, willie_effective, floor, start).argmax;
        } else {
            SolverOptions opt = config.solver;
            opt.floor = floor;
            pbar = covert_bai_program(means, willie_effective, opt, start).argmax;
        }
    }
    RefreshResult out{ActionDist::pure_null(k)};
    double alpha = bai_alpha_formula(pbar, means, willie_effective, config.eta, config.delta);
    if (!(alpha > 0.0)) {
        // Before every arm is pulled, or while empirical means tie, the formula gives 0
        // and the policy would never leave the null action.
        alpha = 1.0 / std::abs(std::log(config.delta));
        out.warmup = true;
    }
    constexpr double kMaxAlpha = 1.0 - 1e-9;
    if (alpha > kMaxAlpha) {
        alpha = kMaxAlpha;
        out.clamped = true;
    }
    out.control = ActionDist(alpha, EffectiveActionDist(std::move(pbar), floor));
    return out;
}

double predicted_stop_time(const GaussianBanditModel& truth, const BaiPolicyConfig& config) {
    const std::size_t k = truth.num_effective();
    config.validate(k);
    const std::vector<double> means(truth.alice_means().begin() + 1, truth.alice_means().end());
    SolverOptions opt = config.solver;
    opt.floor = config.floor_for(k);
    const auto r = covert_bai_program(means, truth.willie_effective_means(), opt);
    const double alt = alt_inf_gaussian(r.argmax, means);
    const double alpha = std::min(
        bai_alpha_formula(r.argmax, means, truth.willie_effective_means(), config.eta, config.delta), 1.0 - 1e-9);
    const double kk = static_cast<double>(config.k_for(k));
    const double base = f_inverse(config.delta, config.k_for(k));
    double t = base / alt;
    for (int i = 0; i < 200; ++i) {
        const double next = (kk * std::log(t * t + t) + base) / alt;
        if (std::abs(next - t) < 1e-9 * t) break;
        t = next;
    }
    return t / alpha;
}

std::uint64_t default_bai_horizon(const GaussianBanditModel& truth, const BaiPolicyConfig& config) {
    const double ld = std::log(config.delta);
    const double base = std::ceil(200.0 * ld * ld);
    const double predicted = std::ceil(1e4 * predicted_stop_time(truth, config));
    return static_cast<std::uint64_t>(std::max(base, predicted));
}

namespace {

// Argmax cache keyed by the empirical best arm and the squared gaps scaled
// to a unit maximum; the program's argmax depends on the means only through
// this key. With two effective arms the key never changes.
class ArgmaxCache {
public:
    std::vector<double> key(const std::vector<double>& means) const {
        std::size_t b = 0;
        for (std::size_t i = 1; i < means.size(); ++i)
            if (means[i] > means[b]) b = i;
        std::vector<double> k{static_cast<double>(b)};
        double mx = 0.0;
        for (double m : means) mx = std::max(mx, (means[b] - m) * (means[b] - m));
        for (double m : means) k.push_back(mx > 0.0 ? (means[b] - m) * (means[b] - m) / mx : 0.0);
        return k;
    }
    const std::vector<double>* find(const std::vector<double>& k) const {
        auto it = map_.find(k);
        return it == map_.end() ? nullptr : &it->second;
    }
    void put(std::vector<double> k, std::vector<double> v) {
        if (map_.size() < 4096) map_.emplace(std::move(k), std::move(v));
    }

private:
    std::map<std::vector<double>, std::vector<double>> map_;
};

}  // namespace

EpisodeResult run_episode(const GaussianBanditModel& truth, const BaiPolicyConfig& config, RngStream& rng,
                          const EpisodeOptions& options) {
    const std::size_t k = truth.num_effective();
    config.validate(k);
    const std::uint64_t cap = options.horizon_cap ? *options.horizon_cap : default_bai_horizon(truth, config);
    const auto willie = truth.willie_effective_means();
    const auto alice = truth.alice_means();
    const std::uint64_t period = config.recompute_period;
    const bool literal = options.literal || options.record_willie;

    EmpiricalBandit emp(truth.num_arms());
    EpisodeResult res;
    res.truth = truth.best_arm();

    ArgmaxCache cache;
    std::vector<double> last_pbar;
    const BaiSolver cached = [&](std::span<const double> means, std::span<const double> w, double floor,
                                 std::span<const double> start) {
        std::vector<double> m(means.begin(), means.end());
        auto key = cache.key(m);
        if (const auto* hit = cache.find(key)) return FractionalResult{*hit, 0.0, 0, {}};
        SolverOptions opt = config.solver;
        opt.floor = floor;
        FractionalResult r = covert_bai_program(means, w, opt, start);
        cache.put(std::move(key), r.argmax);
        return r;
    };

    ActionDist control = ActionDist::pure_null(k);
    std::vector<double> full;
    double step_div = 0.0;
    auto refresh = [&]() {
        RefreshResult r = refresh_control(emp, config, willie, cached, last_pbar);
        if (r.clamped) ++res.alpha_clamps;
        control = std::move(r.control);
        if (emp.all_pulled()) last_pbar.assign(control.effective().probs().begin(), control.effective().probs().end());
        full = control.full();
        step_div = kl_gaussian_mixture_fast(control.alpha(), control.effective().probs(), willie);
    };
    auto account = [&](std::uint64_t steps) {
        res.kl_bound += static_cast<double>(steps) * step_div;
        if (options.record_controls && steps > 0) {
            if (!res.control_trace.empty() && res.control_trace.back().control.alpha() == control.alpha() &&
                std::ranges::equal(res.control_trace.back().control.effective().probs(),
                                   control.effective().probs()))
                res.control_trace.back().steps += steps;
            else
                res.control_trace.push_back({control, steps});
        }
    };

    refresh();
    std::uint64_t t = 0;
    bool pending = false;
    std::uint64_t switch_at = 0;
    bool stopped = false;

    auto pull = [&](std::size_t x) {
        emp.record(x, alice[x] + rng.normal());
        const double r = glr_statistic(emp);
        const double g = stopping_threshold(emp, config);
        if (r > g) {
            stopped = true;
            res.stop_statistic = r;
            res.stop_threshold = g;
            res.stop_margin = r - g;
            return;
        }
        pending = true;
        switch_at = (t + period - 1) / period * period;
    };

    while (t < cap && !stopped) {
        if (pending && t >= switch_at) {
            refresh();
            pending = false;
        }
        if (literal) {
            const std::size_t x = sample_index(full, rng);
            ++t;
            account(1);
            if (options.record_actions) res.action_trace.push_back(static_cast<std::uint16_t>(x));
            if (options.record_willie) res.willie_trace.push_back(truth.willie_means()[x] + rng.normal());
            if (x == 0) {
                emp.record_idle(1);
            } else {
                pull(x);
            }
            continue;
        }
        const std::uint64_t limit = pending ? std::min(switch_at, cap) : cap;
        const double alpha = control.alpha();
        const std::uint64_t room = limit - t;
        const std::uint64_t g = alpha > 0.0 ? rng.geometric(alpha) : room;
        if (g >= room) {
            emp.record_idle(room);
            account(room);
            if (options.record_actions) res.action_trace.insert(res.action_trace.end(), room, 0);
            t = limit;
            continue;
        }
        emp.record_idle(g);
        if (options.record_actions) res.action_trace.insert(res.action_trace.end(), g, 0);
        const std::size_t x = 1 + sample_index(control.effective().probs(), rng);
        t += g + 1;
        account(g + 1);
        if (options.record_actions) res.action_trace.push_back(static_cast<std::uint16_t>(x));
        pull(x);
    }

    res.stop_time = t;
    res.effective_pulls = emp.effective_pulls();
    if (stopped) {
        res.decision = emp.best_arm();
        res.correct = *res.decision == res.truth;
    } else {
        res.timed_out = true;
    }
    if (options.record_willie)
        while (res.willie_trace.size() < options.pad_willie_to) res.willie_trace.push_back(rng.normal());
    return res;
}

double tau_sup_estimate(std::span<const double> stop_times, double kappa) {
    if (!(kappa > 0.0 && kappa < 1.0)) throw DomainError("kappa must lie in (0, 1)");
    const double n = static_cast<double>(stop_times.size());
    if (stop_times.empty() || n < 1.0 / kappa)
        throw TooFewEpisodes("need at least 1/kappa = " + std::to_string(static_cast<long>(std::ceil(1.0 / kappa))) +
                             " stop times, got " + std::to_string(stop_times.size()));
    std::vector<double> s(stop_times.begin(), stop_times.end());
    std::sort(s.begin(), s.end());
    for (double a : s) {
        const auto above = s.end() - std::upper_bound(s.begin(), s.end(), a);
        if (static_cast<double>(above) < kappa * n) return a;
    }
    return s.back();
}

}  // namespace covert
