#include "covert/exponent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "covert/error.hpp"
#include "covert/simplex.hpp"

namespace covert {
namespace {

constexpr double kDegenerateChi2 = 1e-14;

struct Evaluated {
    double num = 0.0;
    double den = 0.0;
};

// Inner loop: maximize num(p) - lambda * den(p) by projected subgradient
// ascent with step step_scale / sqrt(t) along the normalized tangent direction.
// Returns the best iterate seen (which is never worse than the start).
double inner_maximize(const FractionalProgram& fp, const SolverOptions& opt, double lambda,
                      std::vector<double>& p) {
    const std::size_t n = fp.dim;
    std::vector<double> q(p), gn(n), gd(n), g(n), best(p);
    double best_phi = -std::numeric_limits<double>::infinity();
    for (int t = 1; t <= opt.inner_steps + 1; ++t) {
        const double num = fp.numerator(q, gn);
        const double den = fp.denominator(q, gd);
        const double phi = num - lambda * den;
        if (phi > best_phi) {
            best_phi = phi;
            best = q;
        }
        if (t > opt.inner_steps) break;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = gn[i] - lambda * gd[i];
            mean += g[i];
        }
        mean /= static_cast<double>(n);
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            g[i] -= mean;
            norm += g[i] * g[i];
        }
        norm = std::sqrt(norm);
        if (norm < 1e-300) break;
        const double step = opt.step_scale / std::sqrt(static_cast<double>(t));
        for (std::size_t i = 0; i < n; ++i) q[i] += step * g[i] / norm;
        project_to_simplex(q, opt.floor);
    }
    p = best;
    return best_phi;
}

Evaluated evaluate(const FractionalProgram& fp, std::span<const double> p) {
    std::vector<double> scratch(fp.dim);
    return {fp.numerator(p, scratch), fp.denominator(p, scratch)};
}

// Per-hypothesis data for the HT objectives.
struct HtTables {
    std::size_t k = 0;
    std::vector<std::size_t> rivals;       // theta' != theta
    std::vector<std::vector<double>> div;  // div[r][x-1] = D(nu_theta^x || nu_rival^x)
    std::vector<std::vector<double>> willie;  // willie[x-1][z]
    std::vector<double> null_out;             // q_theta^0
};

HtTables ht_tables(const HypothesisModel& model, std::size_t theta) {
    HtTables t;
    t.k = model.num_effective();
    for (std::size_t u = 0; u < model.num_hypotheses(); ++u) {
        if (u == theta) continue;
        t.rivals.push_back(u);
        std::vector<double> row(t.k);
        for (std::size_t x = 1; x <= t.k; ++x) row[x - 1] = model.divergence(theta, u, x);
        t.div.push_back(std::move(row));
    }
    for (std::size_t x = 1; x <= t.k; ++x) {
        auto pr = model.willie(theta, x).probs();
        t.willie.emplace_back(pr.begin(), pr.end());
    }
    auto q0 = model.willie(theta, 0).probs();
    t.null_out.assign(q0.begin(), q0.end());
    return t;
}

// min_r sum_x p(x) div[r][x]; writes the gradient of the active form and its index.
double min_linear(const std::vector<std::vector<double>>& forms, std::span<const double> p, std::span<double> grad,
                  std::size_t* which = nullptr) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t r = 0; r < forms.size(); ++r) {
        double v = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) v += p[i] * forms[r][i];
        if (v < best) {
            best = v;
            arg = r;
        }
    }
    if (!grad.empty())
        for (std::size_t i = 0; i < p.size(); ++i) grad[i] = forms[arg][i];
    if (which) *which = arg;
    return best;
}

double ht_chi2(const HtTables& t, std::span<const double> p, std::span<double> grad) {
    const std::size_t nz = t.null_out.size();
    double g = 0.0;
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t z = 0; z < nz; ++z) {
        double m = 0.0;
        for (std::size_t x = 0; x < t.k; ++x) m += p[x] * t.willie[x][z];
        const double q0 = t.null_out[z];
        if (q0 == 0.0) {
            if (m != 0.0)
                throw AbsoluteContinuityViolation("chi2 against the null output is infinite: null output has zero mass "
                                                  "on an outcome effective actions produce");
            continue;
        }
        const double diff = m - q0;
        g += diff * diff / q0;
        if (!grad.empty())
            for (std::size_t x = 0; x < t.k; ++x) grad[x] += 2.0 * diff / q0 * t.willie[x][z];
    }
    return g;
}

FractionalProgram ht_covert_program(const HtTables& t) {
    FractionalProgram fp;
    fp.dim = t.k;
    fp.numerator = [&t](std::span<const double> p, std::span<double> grad) { return min_linear(t.div, p, grad); };
    fp.denominator = [&t](std::span<const double> p, std::span<double> grad) {
        const double g = ht_chi2(t, p, grad);
        if (g < kDegenerateChi2) throw DegenerateDenominator("chi-square of the Willie mixture against the null output vanishes");
        const double s = std::sqrt(g);
        for (double& v : grad) v /= 2.0 * s;
        return s;
    };
    return fp;
}

SimplexFunction constant_one() {
    return [](std::span<const double>, std::span<double> grad) {
        std::fill(grad.begin(), grad.end(), 0.0);
        return 1.0;
    };
}

FractionalProgram ht_plain_program(const HtTables& t, NonCovertVariant variant, std::vector<double>& inner_min) {
    FractionalProgram fp;
    fp.dim = t.k;
    fp.denominator = constant_one();
    if (variant == NonCovertVariant::MinOutside) {
        fp.numerator = [&t](std::span<const double> p, std::span<double> grad) { return min_linear(t.div, p, grad); };
    } else {
        inner_min.assign(t.k, std::numeric_limits<double>::infinity());
        for (const auto& row : t.div)
            for (std::size_t x = 0; x < t.k; ++x) inner_min[x] = std::min(inner_min[x], row[x]);
        fp.numerator = [&inner_min](std::span<const double> p, std::span<double> grad) {
            double v = 0.0;
            for (std::size_t x = 0; x < p.size(); ++x) {
                v += p[x] * inner_min[x];
                grad[x] = inner_min[x];
            }
            return v;
        };
    }
    return fp;
}

std::size_t best_index(std::span<const double> means) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < means.size(); ++i)
        if (means[i] > means[b]) b = i;
    return b;
}

// 1/2 min_x p_b p_x gap_x^2 / (p_b + p_x); gradient of the active term.
double alt_inf_with_grad(std::span<const double> p, std::span<const double> means, std::size_t b,
                         std::span<double> grad, std::size_t* which) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t x = 0; x < means.size(); ++x) {
        if (x == b) continue;
        const double gap = means[b] - means[x];
        const double s = p[b] + p[x];
        const double v = s > 0.0 ? 0.5 * gap * gap * p[b] * p[x] / s : 0.0;
        if (v < best) {
            best = v;
            arg = x;
        }
    }
    if (!grad.empty()) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double gap = means[b] - means[arg];
        const double s = p[b] + p[arg];
        const double c = 0.5 * gap * gap;
        if (s > 0.0) {
            grad[b] = c * p[arg] * p[arg] / (s * s);
            grad[arg] = c * p[b] * p[b] / (s * s);
        } else {
            grad[b] = grad[arg] = 0.25 * c;
        }
    }
    if (which) *which = arg;
    return best;
}

double bai_denominator(std::span<const double> p, std::span<const double> willie, std::span<double> grad) {
    double s = 0.0;
    for (std::size_t x = 0; x < p.size(); ++x) s += p[x] * willie[x];
    const double chi2 = std::expm1(s * s);
    if (chi2 < kDegenerateChi2) throw DegenerateDenominator("Willie mixture mean is zero; chi-square vanishes");
    const double root = std::sqrt(chi2);
    if (!grad.empty()) {
        const double coef = s * std::exp(s * s) / root;
        for (std::size_t x = 0; x < p.size(); ++x) grad[x] = coef * willie[x];
    }
    return root;
}

void check_bai_denominator(std::span<const double> willie, double floor) {
    // The Willie mixture mean ranges over [lo, hi] on the floored simplex.
    const double k = static_cast<double>(willie.size());
    const double total = std::accumulate(willie.begin(), willie.end(), 0.0);
    const double lo = floor * total + (1.0 - k * floor) * *std::min_element(willie.begin(), willie.end());
    const double hi = floor * total + (1.0 - k * floor) * *std::max_element(willie.begin(), willie.end());
    if (lo <= 0.0 && hi >= 0.0)
        throw DegenerateDenominator("some effective-action mixture gives Willie a zero-mean output; "
                                    "the covert BAI objective is unbounded");
}

void check_eta(double eta) {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("eta must be positive");
}

void check_floor(std::size_t k, double floor) {
    if (!(floor >= 0.0) || floor * static_cast<double>(k) > 1.0)
        throw DomainError("zeta floor must satisfy 0 <= zeta * K <= 1");
}

std::vector<double> uniform_start(std::size_t k) { return std::vector<double>(k, 1.0 / static_cast<double>(k)); }

}  // namespace

FractionalResult maximize_ratio(const FractionalProgram& fp, const SolverOptions& opt, std::span<const double> start) {
    if (fp.dim == 0) throw DomainError("maximize_ratio: empty simplex");
    FractionalResult res;
    std::vector<double> p = start.empty() ? uniform_start(fp.dim) : std::vector<double>(start.begin(), start.end());
    project_to_simplex(p, opt.floor);
    auto ev = evaluate(fp, p);
    double lambda = ev.num / ev.den;
    res.trace.push_back({0, lambda, 0.0, "start"});
    if (fp.dim == 1) {
        res.argmax = p;
        res.ratio = lambda;
        return res;
    }
    for (int outer = 1; outer <= opt.max_outer; ++outer) {
        std::vector<double> cand = p;
        const double gap = inner_maximize(fp, opt, lambda, cand);
        if (gap < opt.tolerance) {
            res.trace.push_back({outer, lambda, gap, "converged"});
            res.argmax = p;
            res.ratio = lambda;
            res.outer_iterations = outer;
            return res;
        }
        p = std::move(cand);
        ev = evaluate(fp, p);
        const double next = ev.num / ev.den;
        res.trace.push_back({outer, next, gap, ""});
        if (!(next > lambda)) {
            // Rounding: the inner loop found a positive gap that does not move lambda.
            res.trace.back().note = "stalled";
            res.argmax = p;
            res.ratio = std::max(next, lambda);
            res.outer_iterations = outer;
            return res;
        }
        lambda = next;
    }
    throw SolverDiverged("Dinkelbach iteration did not converge within " + std::to_string(opt.max_outer) +
                         " outer iterations");
}

double default_grid_resolution(std::size_t k) {
    if (k <= 3) return 1e-3;
    if (k == 4) return 1e-2;
    return 5e-2;
}

GridResult grid_maximize(std::size_t dim, double resolution, double floor,
                         const std::function<double(std::span<const double>)>& objective, unsigned threads) {
    if (!(resolution > 0.0 && resolution <= 1.0)) throw DomainError("grid resolution must lie in (0, 1]");
    check_floor(dim, floor);
    const double mass = 1.0 - floor * static_cast<double>(dim);
    const auto divisions = static_cast<std::size_t>(std::max(1.0, std::ceil(mass / resolution - 1e-9)));
    const std::size_t total = simplex_grid_size(dim, divisions);
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(total, 1))));

    struct Local {
        double value = -std::numeric_limits<double>::infinity();
        std::size_t index = 0;
        std::vector<double> point;
        std::exception_ptr error;
    };
    std::vector<Local> locals(threads);
    auto work = [&](unsigned w) {
        const std::size_t begin = total * w / threads;
        const std::size_t end = total * (w + 1) / threads;
        try {
            visit_simplex_grid(dim, divisions, floor, begin, end, [&](std::size_t idx, std::span<const double> p) {
                const double v = objective(p);
                if (v > locals[w].value) {
                    locals[w].value = v;
                    locals[w].index = idx;
                    locals[w].point.assign(p.begin(), p.end());
                }
            });
        } catch (...) {
            locals[w].error = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    GridResult out;
    out.value = -std::numeric_limits<double>::infinity();
    for (auto& l : locals) {
        if (l.error) std::rethrow_exception(l.error);
        if (l.value > out.value) {
            out.value = l.value;
            out.argmax = l.point;
        }
    }
    return out;
}

double covert_ht_objective(const HypothesisModel& model, std::size_t theta, std::span<const double> pbar) {
    if (pbar.size() != model.num_effective()) throw AlphabetMismatch("pbar must cover the effective actions");
    const auto t = ht_tables(model, theta);
    const double num = min_linear(t.div, pbar, {});
    const double chi2 = ht_chi2(t, pbar, {});
    if (chi2 < kDegenerateChi2) throw DegenerateDenominator("chi-square of the Willie mixture against the null output vanishes");
    return num / std::sqrt(chi2);
}

double noncovert_ht_objective(const HypothesisModel& model, std::size_t theta, std::span<const double> pbar,
                              NonCovertVariant variant) {
    if (pbar.size() != model.num_effective()) throw AlphabetMismatch("pbar must cover the effective actions");
    const auto t = ht_tables(model, theta);
    std::vector<double> inner_min;
    auto fp = ht_plain_program(t, variant, inner_min);
    std::vector<double> scratch(t.k);
    return fp.numerator(pbar, scratch);
}

FractionalResult covert_ht_for_hypothesis(const HypothesisModel& model, std::size_t theta,
                                          const SolverOptions& options) {
    if (model.has_degenerate_null())
        throw AbsoluteContinuityViolation("Willie's null output has zeros where effective actions put mass; "
                                          "the covert chi-square is infinite (regularize the null output)");
    const auto t = ht_tables(model, theta);
    return maximize_ratio(ht_covert_program(t), options);
}

namespace {

// Fills binding data for an HT solution from the per-hypothesis optima.
template <class Objective>
ExponentSolution assemble_ht(const HypothesisModel& model, std::vector<FractionalResult> per, double scale,
                             double eta, Objective rival_of) {
    ExponentSolution sol;
    std::size_t bind = 0;
    for (std::size_t th = 1; th < per.size(); ++th)
        if (per[th].ratio < per[bind].ratio - 1e-12) bind = th;
    sol.objective = per[bind].ratio;
    sol.value = scale * sol.objective;
    sol.eta = eta;
    sol.binding_hypothesis = bind;
    sol.argmax_pbar = EffectiveActionDist(per[bind].argmax);
    sol.binding_challenger = rival_of(bind, per[bind].argmax);
    sol.solver_trace = per[bind].trace;
    sol.solver_trace.push_back({0, sol.objective, 0.0,
                                "binding hypothesis '" + model.hypotheses()[bind] + "' (lowest label on ties)"});
    sol.per_hypothesis = std::move(per);
    return sol;
}

std::size_t ht_rival(const HypothesisModel& model, std::size_t theta, std::span<const double> p) {
    const auto t = ht_tables(model, theta);
    std::size_t which = 0;
    min_linear(t.div, p, {}, &which);
    return t.rivals[which];
}

}  // namespace

ExponentSolution covert_ht_exponent(const HypothesisModel& model, double eta, const SolverOptions& options) {
    check_eta(eta);
    std::vector<FractionalResult> per;
    for (std::size_t th = 0; th < model.num_hypotheses(); ++th)
        per.push_back(covert_ht_for_hypothesis(model, th, options));
    return assemble_ht(model, std::move(per), std::sqrt(2.0 * eta), eta,
                       [&](std::size_t th, std::span<const double> p) { return ht_rival(model, th, p); });
}

ExponentSolution noncovert_ht_exponent(const HypothesisModel& model, NonCovertVariant variant,
                                       const SolverOptions& options) {
    std::vector<FractionalResult> per;
    for (std::size_t th = 0; th < model.num_hypotheses(); ++th) {
        const auto t = ht_tables(model, th);
        std::vector<double> inner_min;
        per.push_back(maximize_ratio(ht_plain_program(t, variant, inner_min), options));
    }
    return assemble_ht(model, std::move(per), 1.0, 0.0,
                       [&](std::size_t th, std::span<const double> p) { return ht_rival(model, th, p); });
}

double alt_inf_gaussian(std::span<const double> pbar, std::span<const double> means) {
    if (pbar.size() != means.size()) throw AlphabetMismatch("alt_inf_gaussian: pbar and means differ in length");
    if (means.size() < 2) throw NoChallenger("best-arm identification needs at least two effective arms");
    return alt_inf_with_grad(pbar, means, best_index(means), {}, nullptr);
}

double covert_bai_objective(const GaussianBanditModel& bandit, std::span<const double> pbar) {
    const auto alice = bandit.alice_means().subspan(1);
    return alt_inf_gaussian(pbar, alice) / bai_denominator(pbar, bandit.willie_effective_means(), {});
}

FractionalResult covert_bai_program(std::span<const double> alice, std::span<const double> willie,
                                    const SolverOptions& options, std::span<const double> start) {
    if (alice.size() < 2) throw NoChallenger("best-arm identification needs at least two effective arms");
    check_floor(alice.size(), options.floor);
    check_bai_denominator(willie, options.floor);
    const std::size_t b = best_index(alice);
    FractionalProgram fp;
    fp.dim = alice.size();
    fp.numerator = [alice, b](std::span<const double> p, std::span<double> grad) {
        return alt_inf_with_grad(p, alice, b, grad, nullptr);
    };
    fp.denominator = [willie](std::span<const double> p, std::span<double> grad) {
        return bai_denominator(p, willie, grad);
    };
    return maximize_ratio(fp, options, start);
}

namespace {

ExponentSolution bai_solution(const GaussianBanditModel& bandit, FractionalResult r, double scale, double eta,
                              double floor) {
    ExponentSolution sol;
    sol.objective = r.ratio;
    sol.value = scale * r.ratio;
    sol.eta = eta;
    sol.argmax_pbar = EffectiveActionDist(r.argmax, floor);
    const auto alice = bandit.alice_means().subspan(1);
    std::size_t which = 0;
    alt_inf_with_grad(r.argmax, alice, best_index(alice), {}, &which);
    sol.binding_challenger = which + 1;
    sol.solver_trace = std::move(r.trace);
    return sol;
}

}  // namespace

ExponentSolution covert_bai_exponent(const GaussianBanditModel& bandit, double eta, double zeta_floor,
                                     const SolverOptions& options) {
    check_eta(eta);
    SolverOptions opt = options;
    opt.floor = zeta_floor;
    auto r = covert_bai_program(bandit.alice_means().subspan(1), bandit.willie_effective_means(), opt);
    return bai_solution(bandit, std::move(r), std::sqrt(2.0 * eta), eta, zeta_floor);
}

ExponentSolution noncovert_bai_exponent(const GaussianBanditModel& bandit, double zeta_floor,
                                        const SolverOptions& options) {
    const auto alice = bandit.alice_means().subspan(1);
    if (alice.size() < 2) throw NoChallenger("best-arm identification needs at least two effective arms");
    check_floor(alice.size(), zeta_floor);
    SolverOptions opt = options;
    opt.floor = zeta_floor;
    const std::size_t b = best_index(alice);
    FractionalProgram fp;
    fp.dim = alice.size();
    fp.numerator = [alice, b](std::span<const double> p, std::span<double> grad) {
        return alt_inf_with_grad(p, alice, b, grad, nullptr);
    };
    fp.denominator = constant_one();
    return bai_solution(bandit, maximize_ratio(fp, opt), 1.0, 0.0, zeta_floor);
}

ExponentSolution grid_covert_ht(const HypothesisModel& model, double eta, double resolution, unsigned threads) {
    check_eta(eta);
    if (model.has_degenerate_null())
        throw AbsoluteContinuityViolation("Willie's null output has zeros where effective actions put mass");
    std::vector<FractionalResult> per;
    for (std::size_t th = 0; th < model.num_hypotheses(); ++th) {
        const auto t = ht_tables(model, th);
        auto g = grid_maximize(
            model.num_effective(), resolution, 0.0,
            [&t](std::span<const double> p) { return min_linear(t.div, p, {}) / std::sqrt(ht_chi2(t, p, {})); },
            threads);
        per.push_back({g.argmax, g.value, 0, {{0, g.value, 0.0, "grid oracle"}}});
    }
    return assemble_ht(model, std::move(per), std::sqrt(2.0 * eta), eta,
                       [&](std::size_t th, std::span<const double> p) { return ht_rival(model, th, p); });
}

ExponentSolution grid_noncovert_ht(const HypothesisModel& model, NonCovertVariant variant, double resolution,
                                   unsigned threads) {
    std::vector<FractionalResult> per;
    for (std::size_t th = 0; th < model.num_hypotheses(); ++th) {
        auto g = grid_maximize(
            model.num_effective(), resolution, 0.0,
            [&](std::span<const double> p) { return noncovert_ht_objective(model, th, p, variant); }, threads);
        per.push_back({g.argmax, g.value, 0, {{0, g.value, 0.0, "grid oracle"}}});
    }
    return assemble_ht(model, std::move(per), 1.0, 0.0,
                       [&](std::size_t th, std::span<const double> p) { return ht_rival(model, th, p); });
}

ExponentSolution grid_covert_bai(const GaussianBanditModel& bandit, double eta, double zeta_floor, double resolution,
                                 unsigned threads) {
    check_eta(eta);
    check_bai_denominator(bandit.willie_effective_means(), zeta_floor);
    auto g = grid_maximize(
        bandit.num_effective(), resolution, zeta_floor,
        [&](std::span<const double> p) { return covert_bai_objective(bandit, p); }, threads);
    return bai_solution(bandit, {g.argmax, g.value, 0, {{0, g.value, 0.0, "grid oracle"}}}, std::sqrt(2.0 * eta), eta,
                        zeta_floor);
}

ExponentSolution grid_noncovert_bai(const GaussianBanditModel& bandit, double zeta_floor, double resolution,
                                    unsigned threads) {
    const auto alice = bandit.alice_means().subspan(1);
    auto g = grid_maximize(
        bandit.num_effective(), resolution, zeta_floor,
        [&](std::span<const double> p) { return alt_inf_gaussian(p, alice); }, threads);
    return bai_solution(bandit, {g.argmax, g.value, 0, {{0, g.value, 0.0, "grid oracle"}}}, 1.0, 0.0, zeta_floor);
}

}  // namespace covert
