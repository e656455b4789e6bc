#include "covert/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "covert/error.hpp"

namespace covert {
namespace {

constexpr std::size_t kMinTraces = 500;

void check_channels(const ActionDist& control, std::size_t n) {
    if (control.num_actions() != n) throw AlphabetMismatch("control and Willie channel cover different actions");
}

}  // namespace

double per_step_divergence(const ActionDist& control, std::span<const Categorical> willie) {
    check_channels(control, willie.size());
    if (control.alpha() == 0.0) return 0.0;
    const std::vector<double> w = control.full();
    return kl_categorical(mixture(w, willie), willie[0]);
}

double per_step_divergence(const ActionDist& control, std::span<const double> willie_means) {
    check_channels(control, willie_means.size());
    if (willie_means[0] != 0.0) throw NonZeroNullMean("Willie's null output must be N(0, 1)");
    return kl_gaussian_mixture(control.alpha(), control.effective().probs(), willie_means.subspan(1));
}

namespace {

template <class StepDiv>
CovertnessReport accumulate(std::span<const ControlSegment> trace, const AuditOptions& opt, StepDiv div) {
    CovertnessReport rep;
    rep.eta = opt.eta;
    rep.step_count = opt.step_count;
    rep.slack = opt.slack;
    std::uint64_t t = 0;
    for (const auto& seg : trace) {
        if (t >= opt.step_count) break;
        const std::uint64_t steps = std::min(seg.steps, opt.step_count - t);
        const double d = div(seg.control);
        rep.analytic_bound += static_cast<double>(steps) * d;
        if (opt.keep_series) rep.per_step_series.insert(rep.per_step_series.end(), steps, d);
        t += steps;
    }
    if (opt.keep_series) rep.per_step_series.resize(opt.step_count, 0.0);
    rep.within_budget = rep.analytic_bound <= opt.eta * (1.0 + opt.slack);
    return rep;
}

}  // namespace

CovertnessReport audit_episode(std::span<const ControlSegment> trace, std::span<const Categorical> willie,
                               const AuditOptions& options) {
    return accumulate(trace, options, [&](const ActionDist& c) { return per_step_divergence(c, willie); });
}

CovertnessReport audit_episode(std::span<const ControlSegment> trace, std::span<const double> willie_means,
                               const AuditOptions& options) {
    return accumulate(trace, options, [&](const ActionDist& c) { return per_step_divergence(c, willie_means); });
}

double empirical_trace_divergence(std::span<const std::vector<double>> traces, const Categorical& null_output,
                                  std::size_t k) {
    if (k == 0 || k > 3) throw DomainError("plug-in divergence is only computed for 1 <= k <= 3");
    if (traces.empty()) throw TooFewTraces("no traces");
    const std::size_t m = null_output.size();
    std::map<std::size_t, std::size_t> hist;
    for (const auto& tr : traces) {
        if (tr.size() < k) throw DomainError("trace shorter than k");
        std::size_t code = 0;
        for (std::size_t i = 0; i < k; ++i) code = code * m + static_cast<std::size_t>(tr[i]);
        ++hist[code];
    }
    const double n = static_cast<double>(traces.size());
    double d = 0.0;
    for (const auto& [code, count] : hist) {
        double q = 1.0;
        std::size_t c = code;
        for (std::size_t i = 0; i < k; ++i) {
            q *= null_output[c % m];
            c /= m;
        }
        const double p = static_cast<double>(count) / n;
        if (q == 0.0) throw AbsoluteContinuityViolation("trace symbol impossible under the null output");
        d += p * std::log(p / q);
    }
    return d;
}

namespace {

template <class LogRatio>
DetectorResult run_detector(std::span<const std::vector<double>> active, std::span<const std::vector<double>> idle,
                            std::size_t k, double eta, LogRatio log_ratio) {
    if (active.size() < kMinTraces || idle.size() < kMinTraces)
        throw TooFewTraces("the detector needs at least 500 traces per class");
    auto declares_active = [&](const std::vector<double>& tr) {
        if (tr.size() < k) throw DomainError("trace shorter than k");
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += log_ratio(i, tr[i]);
        return s >= 0.0;
    };
    std::size_t misses = 0, alarms = 0;
    for (const auto& tr : active)
        if (!declares_active(tr)) ++misses;
    for (const auto& tr : idle)
        if (declares_active(tr)) ++alarms;
    DetectorResult r;
    r.k = k;
    const double na = static_cast<double>(active.size());
    const double ni = static_cast<double>(idle.size());
    r.alpha = static_cast<double>(misses) / na;
    r.beta = static_cast<double>(alarms) / ni;
    r.sum_lower_bound = 1.0 - std::sqrt(eta);
    r.vacuous = eta > 1.0;
    r.ci_halfwidth = 1.959963984540054 * std::sqrt(r.alpha * (1.0 - r.alpha) / na + r.beta * (1.0 - r.beta) / ni);
    return r;
}

}  // namespace

DetectorResult detect(std::span<const std::vector<double>> active_traces,
                      std::span<const std::vector<double>> idle_traces, std::span<const Categorical> active_marginals,
                      const Categorical& null_output, std::size_t k, double eta) {
    if (active_marginals.empty() || (active_marginals.size() != 1 && active_marginals.size() < k))
        throw DomainError("need one active marginal or one per step");
    const std::size_t m = null_output.size();
    std::vector<std::vector<double>> table;
    for (const auto& am : active_marginals) {
        if (am.size() != m) throw AlphabetMismatch("active marginal and null output alphabets differ");
        std::vector<double> row(m);
        for (std::size_t z = 0; z < m; ++z) {
            if (null_output[z] == 0.0 && am[z] > 0.0)
                throw AbsoluteContinuityViolation("active marginal puts mass where the null output has none");
            if (am[z] > 0.0)
                row[z] = std::log(am[z] / null_output[z]);
            else
                row[z] = null_output[z] == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
        }
        table.push_back(std::move(row));
    }
    return run_detector(active_traces, idle_traces, k, eta, [&](std::size_t i, double z) {
        const auto& row = table.size() == 1 ? table[0] : table[i];
        return row[static_cast<std::size_t>(z)];
    });
}

DetectorResult detect(std::span<const std::vector<double>> active_traces,
                      std::span<const std::vector<double>> idle_traces, const ActionDist& control,
                      std::span<const double> willie_means, std::size_t k, double eta) {
    check_channels(control, willie_means.size());
    if (willie_means[0] != 0.0) throw NonZeroNullMean("Willie's null output must be N(0, 1)");
    const double a = control.alpha();
    const auto p = control.effective().probs();
    return run_detector(active_traces, idle_traces, k, eta, [&](std::size_t, double z) {
        double lr = 0.0;
        for (std::size_t x = 0; x < p.size(); ++x) {
            const double mu = willie_means[x + 1];
            lr += p[x] * std::exp(mu * z - 0.5 * mu * mu);
        }
        return std::log1p(a * (lr - 1.0));
    });
}

BhCheck bh_bound_check(std::span<const std::uint8_t> event_under_first, std::span<const std::uint8_t> event_under_second,
                       double divergence) {
    if (event_under_first.empty() || event_under_second.empty()) throw TooFewTraces("empty sample");
    if (!(divergence >= 0.0)) throw DomainError("divergence must be nonnegative");
    double miss = 0.0, hit = 0.0;
    for (auto e : event_under_first) miss += e ? 0.0 : 1.0;
    for (auto e : event_under_second) hit += e ? 1.0 : 0.0;
    const double n1 = static_cast<double>(event_under_first.size());
    const double n2 = static_cast<double>(event_under_second.size());
    const double p1 = miss / n1, p2 = hit / n2;
    BhCheck c;
    c.lhs = p1 + p2;
    c.bound = 0.5 * std::exp(-divergence);
    c.slack = c.lhs - c.bound;
    c.std_error = std::sqrt(p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2);
    return c;
}

}  // namespace covert
