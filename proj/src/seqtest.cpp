#include "covert/seqtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "covert/error.hpp"

namespace covert {

double SeqTestPolicy::covertness_leading_term(std::size_t theta) const {
    const double a = controls_[theta].alpha();
    return static_cast<double>(n_) * a * a * chi2_[theta] / 2.0;
}

SeqTestPolicy build_policy(const HypothesisModel& model, std::uint64_t n, double eta, double zeta,
                           const HtSolver& solver, std::uint64_t horizon_multiple) {
    if (n == 0) throw DomainError("n must be positive");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("eta must be positive and finite");
    if (!(zeta > 0.0) || !std::isfinite(zeta)) throw DomainError("zeta must be positive and finite");
    if (horizon_multiple == 0) throw DomainError("horizon multiple must be positive");

    const std::size_t h = model.num_hypotheses();
    const std::size_t na = model.num_actions();
    const std::size_t k = model.num_effective();
    SeqTestPolicy p(model);
    p.n_ = n;
    p.eta_ = eta;
    p.zeta_ = zeta;
    p.horizon_cap_ = n * horizon_multiple;
    p.h_ = h;
    p.ny_ = model.alice_alphabet();
    p.thresholds_.assign(h * h, 0.0);

    for (std::size_t th = 0; th < h; ++th) {
        FractionalResult r = solver ? solver(model, th) : covert_ht_for_hypothesis(model, th);
        if (r.argmax.size() != k) throw AlphabetMismatch("solver returned weights of the wrong size");
        std::vector<double> pbar(r.argmax);
        for (double& v : pbar) v = std::max(v, 0.0);
        const double total = std::accumulate(pbar.begin(), pbar.end(), 0.0);
        for (double& v : pbar) v /= total;

        const double chi2 = chi2_categorical(model.willie_mixture(th, pbar), model.willie(th, 0));
        if (!(chi2 > 1e-14) || !std::isfinite(chi2))
            throw DegenerateDenominator("chi-square of hypothesis '" + model.hypotheses()[th] +
                                        "' is zero or infinite");
        const double alpha = std::sqrt(2.0 * eta) / (std::sqrt(static_cast<double>(n)) * std::sqrt(chi2));
        if (alpha > 1.0)
            throw BudgetTooSmall("alpha for hypothesis '" + model.hypotheses()[th] + "' is " + std::to_string(alpha) +
                                 " > 1; increase n or decrease eta");
        for (std::size_t th2 = 0; th2 < h; ++th2) {
            if (th2 == th) continue;
            double drift = 0.0;
            for (std::size_t x = 1; x < na; ++x) drift += pbar[x - 1] * model.divergence(th, th2, x);
            const double gamma = static_cast<double>(n) * alpha * (drift - zeta);
            if (!(gamma > 0.0))
                throw BudgetTooSmall("threshold for ('" + model.hypotheses()[th] + "', '" + model.hypotheses()[th2] +
                                     "') is not positive; zeta must be below the drift " + std::to_string(drift));
            p.thresholds_[th * h + th2] = gamma;
        }
        p.chi2_.push_back(chi2);
        p.controls_.emplace_back(alpha, EffectiveActionDist(pbar));
        p.full_.push_back(p.controls_.back().full());
    }

    p.step_div_.assign(h * h, 0.0);
    for (std::size_t truth = 0; truth < h; ++truth) {
        for (std::size_t ml = 0; ml < h; ++ml) {
            const Categorical out = model.willie_output(truth, p.full_[ml]);
            try {
                p.step_div_[truth * h + ml] = kl_categorical(out, model.willie(truth, 0));
            } catch (const AbsoluteContinuityViolation&) {
                p.step_div_[truth * h + ml] = std::numeric_limits<double>::infinity();
            }
        }
    }

    // Log-likelihood and log-ratio tables. The null action is pinned to zero.
    const std::size_t ny = p.ny_;
    p.log_lik_.assign(na * ny * h, 0.0);
    p.log_ratio_.assign(na * ny * h * h, 0.0);
    for (std::size_t x = 1; x < na; ++x) {
        for (std::size_t y = 0; y < ny; ++y) {
            for (std::size_t th = 0; th < h; ++th)
                p.log_lik_[(x * ny + y) * h + th] = std::log(model.alice(th, x)[y]);
            for (std::size_t a = 0; a < h; ++a) {
                for (std::size_t b = a + 1; b < h; ++b) {
                    const double la = p.log_lik_[(x * ny + y) * h + a];
                    const double lb = p.log_lik_[(x * ny + y) * h + b];
                    const double v = (std::isinf(la) && std::isinf(lb)) ? 0.0 : la - lb;
                    p.log_ratio_[((x * ny + y) * h + a) * h + b] = v;
                    p.log_ratio_[((x * ny + y) * h + b) * h + a] = -v;
                }
            }
        }
    }
    return p;
}

SeqTestState::SeqTestState(const SeqTestPolicy& policy)
    : h_(policy.model().num_hypotheses()),
      llr_(h_ * h_, 0.0),
      loglik_(h_, 0.0),
      counts_(policy.model().num_actions(), 0) {}

void SeqTestState::observe(const SeqTestPolicy& policy, std::size_t x, std::size_t y) {
    ++t_;
    ++counts_[x];
    if (x == 0) return;
    for (std::size_t a = 0; a < h_; ++a) {
        loglik_[a] += policy.log_likelihood(x, y, a);
        for (std::size_t b = 0; b < h_; ++b) llr_[a * h_ + b] += policy.log_ratio(x, y, a, b);
    }
    std::size_t best = 0;
    for (std::size_t a = 1; a < h_; ++a)
        if (loglik_[a] > loglik_[best]) best = a;
    ml_ = best;
}

void SeqTestState::idle(std::uint64_t count) {
    t_ += count;
    counts_[0] += count;
}

bool SeqTestState::check_stop(const SeqTestPolicy& policy) {
    if (status_ == TestStatus::Stopped) return true;
    for (std::size_t a = 0; a < h_; ++a) {
        bool all = true;
        for (std::size_t b = 0; b < h_ && all; ++b)
            if (b != a && llr_[a * h_ + b] < policy.threshold(a, b)) all = false;
        if (all) {
            status_ = TestStatus::Stopped;
            stopped_on_ = a;
            return true;
        }
    }
    return false;
}

double SeqTestState::margin(const SeqTestPolicy& policy, std::size_t theta) const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < h_; ++b)
        if (b != theta) m = std::min(m, llr_[theta * h_ + b] - policy.threshold(theta, b));
    return m;
}

Emission step(const SeqTestPolicy& policy, SeqTestState& state, std::size_t truth, RngStream& rng) {
    if (state.status_ == TestStatus::Stopped) throw SteppedAfterStop("the test has already stopped");
    const HypothesisModel& m = policy.model();
    Emission e;
    e.action = sample_index(policy.action_probs(state.ml_), rng);
    e.alice_obs = sample_index(m.alice(truth, e.action).probs(), rng);
    e.willie_obs = sample_index(m.willie(truth, e.action).probs(), rng);
    state.observe(policy, e.action, e.alice_obs);
    if (e.action != 0) state.check_stop(policy);
    return e;
}

namespace {

std::uint64_t counted(std::uint64_t from, std::uint64_t to, std::uint64_t window) {
    return std::min(to, window) - std::min(from, window);
}

void push_control(std::vector<ControlSegment>& trace, const ActionDist& control, std::uint64_t steps) {
    if (steps == 0) return;
    if (!trace.empty()) {
        const ActionDist& last = trace.back().control;
        if (last.alpha() == control.alpha() &&
            std::ranges::equal(last.effective().probs(), control.effective().probs())) {
            trace.back().steps += steps;
            return;
        }
    }
    trace.push_back({control, steps});
}

// Shared loop for the stopping policy and its never-stopping twin.
EpisodeResult simulate(const SeqTestPolicy& policy, std::size_t truth, RngStream& rng, std::uint64_t cap,
                       std::uint64_t window, bool stopping, const EpisodeOptions& opt) {
    const HypothesisModel& m = policy.model();
    if (truth >= m.num_hypotheses()) throw DomainError("truth index out of range");
    SeqTestState st(policy);
    EpisodeResult res;
    res.truth = truth;
    const bool literal = opt.literal || opt.record_willie;

    auto account = [&](std::size_t ml, std::uint64_t from, std::uint64_t to) {
        const std::uint64_t c = counted(from, to, window);
        if (c > 0) res.kl_bound += static_cast<double>(c) * policy.step_divergence(truth, ml);
        if (opt.record_controls) push_control(res.control_trace, policy.control(ml), to - from);
    };

    bool stopped = false;
    while (st.t() < cap) {
        const std::size_t ml = st.ml_estimate();
        const std::uint64_t t0 = st.t();
        if (literal) {
            const std::size_t x = sample_index(policy.action_probs(ml), rng);
            const std::size_t y = sample_index(m.alice(truth, x).probs(), rng);
            const std::size_t z = sample_index(m.willie(truth, x).probs(), rng);
            st.observe(policy, x, y);
            account(ml, t0, st.t());
            if (opt.record_actions) res.action_trace.push_back(static_cast<std::uint16_t>(x));
            if (opt.record_willie) res.willie_trace.push_back(static_cast<double>(z));
            if (x != 0 && stopping && st.check_stop(policy)) {
                stopped = true;
                break;
            }
            continue;
        }
        const double alpha = policy.alpha(ml);
        const std::uint64_t room = cap - t0;
        const std::uint64_t g = alpha > 0.0 ? rng.geometric(alpha) : room;
        if (g >= room) {
            st.idle(room);
            account(ml, t0, cap);
            if (opt.record_actions) res.action_trace.insert(res.action_trace.end(), room, 0);
            break;
        }
        st.idle(g);
        if (opt.record_actions) res.action_trace.insert(res.action_trace.end(), g, 0);
        const auto eff = policy.control(ml).effective().probs();
        const std::size_t x = 1 + sample_index(eff, rng);
        const std::size_t y = sample_index(m.alice(truth, x).probs(), rng);
        st.observe(policy, x, y);
        account(ml, t0, st.t());
        if (opt.record_actions) res.action_trace.push_back(static_cast<std::uint16_t>(x));
        if (stopping && st.check_stop(policy)) {
            stopped = true;
            break;
        }
    }

    res.stop_time = st.t();
    for (std::size_t x = 1; x < st.action_counts().size(); ++x) res.effective_pulls += st.action_counts()[x];
    if (stopped) {
        res.decision = st.ml_estimate();
        res.correct = *res.decision == truth;
        res.stop_margin = st.margin(policy, st.stopped_on());
    } else if (stopping) {
        res.timed_out = true;
    } else {
        res.decision = st.ml_estimate();
        res.correct = *res.decision == truth;
    }
    if (opt.record_willie) {
        const auto& null_out = m.willie(truth, 0);
        while (res.willie_trace.size() < opt.pad_willie_to)
            res.willie_trace.push_back(static_cast<double>(sample(null_out, rng)));
    }
    return res;
}

}  // namespace

EpisodeResult run_episode(const SeqTestPolicy& policy, std::size_t truth, RngStream& rng,
                          const EpisodeOptions& options) {
    const std::uint64_t cap = options.horizon_cap.value_or(policy.horizon_cap());
    return simulate(policy, truth, rng, cap, policy.n(), true, options);
}

EpisodeResult run_dummy(const SeqTestPolicy& policy, std::size_t truth, RngStream& rng, std::uint64_t steps,
                        const EpisodeOptions& options) {
    return simulate(policy, truth, rng, steps, steps, false, options);
}

}  // namespace covert
