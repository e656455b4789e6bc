#include "covert/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "covert/error.hpp"

namespace covert {

void BatchSpec::validate() const {
    if (grid.empty()) throw DomainError("the parameter grid is empty");
    if (episodes < 100) throw DomainError("at least 100 episodes per cell are required");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("eta must be positive and finite");
    if (threads == 0) throw DomainError("threads must be positive");
    for (double g : grid) {
        if (mode == BatchMode::Ht && (!(g >= 1.0) || g != std::floor(g) || g > 1e15))
            throw DomainError("n values must be positive integers");
        if (mode == BatchMode::Bai && !(g > 0.0 && g < 1.0)) throw DomainError("delta values must lie in (0, 1)");
    }
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
    const auto cap = static_cast<unsigned>(std::min<std::size_t>(std::max<std::size_t>(count, 1), 1024));
    const unsigned workers = std::max(1u, std::min(threads, cap));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next.store(count);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double z2 = z * z;
    const double centre = (p + z2 / (2.0 * nn)) / (1.0 + z2 / nn);
    const double half = z / (1.0 + z2 / nn) * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

double quantile(std::vector<double> sample, double q) {
    if (sample.empty()) throw DomainError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
    std::sort(sample.begin(), sample.end());
    const double pos = q * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sample.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sample[lo] + frac * (sample[hi] - sample[lo]);
}

namespace {

EpisodeRecord record_of(std::size_t id, const EpisodeResult& r) {
    EpisodeRecord rec;
    rec.episode_id = id;
    rec.truth = r.truth;
    rec.decision = r.decision;
    rec.stop_time = r.stop_time;
    rec.timed_out = r.timed_out;
    rec.effective_pulls = r.effective_pulls;
    rec.kl_bound = r.kl_bound;
    rec.stop_margin = r.stop_margin;
    return rec;
}

CellSummary summarize(std::size_t cell, double parameter, const std::vector<EpisodeRecord>& eps,
                      std::size_t num_truths) {
    CellSummary s;
    s.cell = cell;
    s.parameter = parameter;
    s.episodes = eps.size();
    std::vector<double> stops;
    std::vector<std::size_t> truth_stopped(num_truths, 0), truth_errors(num_truths, 0);
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& e : eps) {
        stops.push_back(static_cast<double>(e.stop_time));
        s.mean_stop_time += static_cast<double>(e.stop_time);
        s.mean_effective_pulls += static_cast<double>(e.effective_pulls);
        s.mean_kl_bound += e.kl_bound;
        s.max_kl_bound = std::max(s.max_kl_bound, e.kl_bound);
        if (e.timed_out) {
            ++s.timeouts;
            continue;
        }
        ++s.stopped;
        margin = std::min(margin, e.stop_margin);
        const std::size_t slot = std::min(e.truth, num_truths - 1);
        ++truth_stopped[slot];
        if (*e.decision != e.truth) {
            ++s.errors;
            ++truth_errors[slot];
        }
    }
    const double n = static_cast<double>(eps.size());
    s.mean_stop_time /= n;
    s.mean_effective_pulls /= n;
    s.mean_kl_bound /= n;
    s.timeout_rate = static_cast<double>(s.timeouts) / n;
    s.error_rate = s.stopped ? static_cast<double>(s.errors) / static_cast<double>(s.stopped) : 0.0;
    s.error_ci = wilson_interval(s.errors, s.stopped);
    for (std::size_t t = 0; t < num_truths; ++t)
        if (truth_stopped[t])
            s.max_truth_error_rate = std::max(s.max_truth_error_rate, static_cast<double>(truth_errors[t]) /
                                                                          static_cast<double>(truth_stopped[t]));
    s.min_stop_margin = s.stopped ? margin : 0.0;
    s.stop_p10 = quantile(stops, 0.10);
    s.stop_p50 = quantile(stops, 0.50);
    s.stop_p90 = quantile(stops, 0.90);
    s.stop_p95 = quantile(stops, 0.95);
    return s;
}

}  // namespace

BatchResult run_batch(const Model& model, const BatchSpec& spec) {
    spec.validate();
    BatchResult out;
    for (std::size_t c = 0; c < spec.grid.size(); ++c) {
        std::vector<EpisodeRecord> records(spec.episodes);
        CellSummary summary;
        if (spec.mode == BatchMode::Ht) {
            const auto* m = std::get_if<HypothesisModel>(&model);
            if (!m) throw InvalidModel("hypothesis-testing batches need a hypothesis model");
            if (spec.truth && *spec.truth >= m->num_hypotheses()) throw DomainError("truth index out of range");
            const auto n = static_cast<std::uint64_t>(spec.grid[c]);
            const SeqTestPolicy policy = build_policy(*m, n, spec.eta, spec.zeta, {}, spec.horizon_multiple);
            const std::size_t h = m->num_hypotheses();
            parallel_for(spec.episodes, spec.threads, [&](std::size_t e) {
                RngStream rng = RngStream::derive(spec.master_seed, c, e);
                const std::size_t truth = spec.truth.value_or(e % h);
                records[e] = record_of(e, run_episode(policy, truth, rng));
            });
            summary = summarize(c, spec.grid[c], records, h);
            double lead = 0.0;
            nlohmann::json pol;
            for (std::size_t th = 0; th < h; ++th) {
                lead = std::max(lead, policy.covertness_leading_term(th));
                const auto p = policy.control(th).effective().probs();
                nlohmann::json thr = nlohmann::json::object();
                for (std::size_t th2 = 0; th2 < h; ++th2)
                    if (th2 != th) thr[m->hypotheses()[th2]] = policy.threshold(th, th2);
                pol[m->hypotheses()[th]] = {{"alpha", policy.alpha(th)},
                                            {"pbar", std::vector<double>(p.begin(), p.end())},
                                            {"chi2", policy.chi2(th)},
                                            {"thresholds", thr},
                                            {"covertness_leading_term", policy.covertness_leading_term(th)}};
            }
            summary.covertness_leading_term = lead;
            summary.policy = {{"hypotheses", pol}, {"horizon_cap", policy.horizon_cap()}};
        } else {
            const auto* b = std::get_if<GaussianBanditModel>(&model);
            if (!b) throw InvalidModel("best-arm batches need a Gaussian bandit model");
            BaiPolicyConfig cfg = spec.bai;
            cfg.delta = spec.grid[c];
            cfg.eta = spec.eta;
            cfg.validate(b->num_effective());
            const std::uint64_t cap = cfg.horizon_cap.value_or(default_bai_horizon(*b, cfg));
            EpisodeOptions opt;
            opt.horizon_cap = cap;
            std::vector<std::uint64_t> clamps(spec.episodes, 0);
            parallel_for(spec.episodes, spec.threads, [&](std::size_t e) {
                RngStream rng = RngStream::derive(spec.master_seed, c, e);
                const EpisodeResult r = run_episode(*b, cfg, rng, opt);
                clamps[e] = r.alpha_clamps;
                records[e] = record_of(e, r);
            });
            summary = summarize(c, spec.grid[c], records, b->num_arms());
            summary.alpha_clamps = std::accumulate(clamps.begin(), clamps.end(), std::uint64_t{0});
            std::vector<double> stops;
            for (const auto& r : records) stops.push_back(static_cast<double>(r.stop_time));
            if (static_cast<double>(stops.size()) >= 1.0 / cfg.kappa) summary.tau_sup = tau_sup_estimate(stops, cfg.kappa);
            summary.policy = {{"horizon_cap", cap},
                              {"predicted_stop_time", predicted_stop_time(*b, cfg)},
                              {"f_inverse", f_inverse(cfg.delta, cfg.k_for(b->num_effective()))},
                              {"zeta_floor", cfg.floor_for(b->num_effective())},
                              {"kappa", cfg.kappa},
                              {"recompute_period", cfg.recompute_period}};
        }
        out.cells.push_back(std::move(summary));
        out.episodes.push_back(std::move(records));
    }
    return out;
}

ScalingFit fit_sqrt_scaling(std::vector<double> xs, std::vector<double> ys, std::optional<std::vector<double>> variances) {
    if (xs.size() != ys.size()) throw DomainError("xs and ys differ in length");
    if (xs.size() < 3) throw InsufficientCells("a scaling fit needs at least 3 cells");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw DomainError("scaling points must be finite");
        if (i > 0 && !(xs[i] > xs[i - 1])) throw DomainError("xs must be strictly increasing");
    }
    const std::size_t n = xs.size();
    std::vector<double> w(n, 1.0);
    if (variances) {
        if (variances->size() != n) throw DomainError("one variance per point is required");
        for (std::size_t i = 0; i < n; ++i) {
            if (!((*variances)[i] > 0.0)) throw DomainError("variances must be positive");
            w[i] = 1.0 / (*variances)[i];
        }
    }
    const double sw = std::accumulate(w.begin(), w.end(), 0.0);
    double xbar = 0.0, ybar = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xbar += w[i] * xs[i];
        ybar += w[i] * ys[i];
    }
    xbar /= sw;
    ybar /= sw;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += w[i] * (xs[i] - xbar) * (xs[i] - xbar);
        sxy += w[i] * (xs[i] - xbar) * (ys[i] - ybar);
        syy += w[i] * (ys[i] - ybar) * (ys[i] - ybar);
    }
    ScalingFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = ybar - fit.slope * xbar;
    double ssres = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - fit.intercept - fit.slope * xs[i];
        ssres += w[i] * r * r;
    }
    fit.r2 = syy > 0.0 ? 1.0 - ssres / syy : 1.0;
    double half;
    if (variances) {
        fit.method = "wls-z";
        half = 1.959963984540054 / std::sqrt(sxx);
    } else {
        fit.method = "ols-t";
        const double dof = static_cast<double>(n - 2);
        const boost::math::students_t dist(dof);
        const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
        half = t * std::sqrt(ssres / dof / sxx);
    }
    fit.ci = {fit.slope - half, fit.slope + half};
    fit.xs = std::move(xs);
    fit.ys = std::move(ys);
    fit.surrogate.assign(n, false);
    return fit;
}

ScalingFit fit_cells(const std::vector<CellSummary>& cells, BatchMode mode) {
    struct Point {
        double x, y, var;
        bool surrogate;
    };
    std::vector<Point> pts;
    for (const auto& c : cells) {
        if (c.stopped == 0) continue;
        const double nn = static_cast<double>(c.stopped);
        double p = c.error_rate;
        bool sur = false;
        if (c.errors == 0) {
            p = std::min(3.0 / nn, 1.0);
            sur = true;
        }
        if (p >= 1.0) continue;
        const double x = mode == BatchMode::Ht ? std::sqrt(c.parameter) : std::abs(std::log(c.parameter));
        pts.push_back({x, -std::log(p), (1.0 - p) / (nn * p), sur});
    }
    if (pts.size() < 3) throw InsufficientCells("fewer than 3 cells have usable error estimates");
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    std::vector<double> xs, ys, vs;
    for (const auto& p : pts) {
        xs.push_back(p.x);
        ys.push_back(p.y);
        vs.push_back(p.var);
    }
    ScalingFit fit = fit_sqrt_scaling(xs, ys, vs);
    for (std::size_t i = 0; i < pts.size(); ++i) fit.surrogate[i] = pts[i].surrogate;
    return fit;
}

nlohmann::json to_json(const CellSummary& c) {
    nlohmann::json j = {{"cell", c.cell},
                        {"parameter", c.parameter},
                        {"episodes", c.episodes},
                        {"stopped", c.stopped},
                        {"errors", c.errors},
                        {"timeouts", c.timeouts},
                        {"error_rate", c.error_rate},
                        {"error_rate_ci95", {c.error_ci.low, c.error_ci.high}},
                        {"timeout_rate", c.timeout_rate},
                        {"max_truth_error_rate", c.max_truth_error_rate},
                        {"mean_stop_time", c.mean_stop_time},
                        {"stop_time_quantiles", {{"p10", c.stop_p10}, {"p50", c.stop_p50}, {"p90", c.stop_p90},
                                                 {"p95", c.stop_p95}}},
                        {"mean_effective_pulls", c.mean_effective_pulls},
                        {"mean_kl_bound", c.mean_kl_bound},
                        {"max_kl_bound", c.max_kl_bound},
                        {"min_stop_margin", c.min_stop_margin},
                        {"alpha_clamps", c.alpha_clamps},
                        {"policy", c.policy}};
    if (c.tau_sup) j["tau_sup"] = *c.tau_sup;
    if (c.covertness_leading_term) j["covertness_leading_term"] = *c.covertness_leading_term;
    return j;
}

nlohmann::json to_json(const ScalingFit& f) {
    return {{"xs", f.xs},         {"ys", f.ys},           {"surrogate", f.surrogate},
            {"slope", f.slope},   {"intercept", f.intercept}, {"r2", f.r2},
            {"slope_ci95", {f.ci.low, f.ci.high}}, {"method", f.method}};
}

std::vector<std::string> outcome_labels(const Model& model) {
    if (const auto* m = std::get_if<HypothesisModel>(&model)) return m->hypotheses();
    const auto& b = std::get<GaussianBanditModel>(model);
    std::vector<std::string> out;
    for (std::size_t x = 0; x < b.num_arms(); ++x) out.push_back(std::to_string(x));
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    return f;
}

}  // namespace

void write_episodes_csv(const std::filesystem::path& path, const std::vector<EpisodeRecord>& episodes,
                        const std::vector<std::string>& labels) {
    auto f = open_out(path);
    f << "episode_id,truth,decision,stop_time,timeout_flag,effective_pulls,kl_bound_contrib\n";
    for (const auto& e : episodes) {
        f << e.episode_id << ',' << labels.at(e.truth) << ',' << (e.decision ? labels.at(*e.decision) : "") << ','
          << e.stop_time << ',' << (e.timed_out ? 1 : 0) << ',' << e.effective_pulls << ',' << fmt_double(e.kl_bound)
          << '\n';
    }
    if (!f) throw IoError("failed writing '" + path.string() + "'");
}

void write_scaling_csv(const std::filesystem::path& path, const ScalingFit& fit) {
    auto f = open_out(path);
    f << "x,y,surrogate,fitted_y,slope,intercept,slope_ci_low,slope_ci_high,r2\n";
    for (std::size_t i = 0; i < fit.xs.size(); ++i) {
        f << fmt_double(fit.xs[i]) << ',' << fmt_double(fit.ys[i]) << ',' << (fit.surrogate[i] ? 1 : 0) << ','
          << fmt_double(fit.intercept + fit.slope * fit.xs[i]) << ',' << fmt_double(fit.slope) << ','
          << fmt_double(fit.intercept) << ',' << fmt_double(fit.ci.low) << ',' << fmt_double(fit.ci.high) << ','
          << fmt_double(fit.r2) << '\n';
    }
    if (!f) throw IoError("failed writing '" + path.string() + "'");
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    auto f = open_out(path);
    f << doc.dump(2) << '\n';
    if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<EpisodeCsvRow> read_episodes_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open episodes file '" + path.string() + "'");
    std::string line;
    if (!std::getline(f, line) ||
        line != "episode_id,truth,decision,stop_time,timeout_flag,effective_pulls,kl_bound_contrib")
        throw IoError("'" + path.string() + "' does not have the episodes.csv header");
    std::vector<EpisodeCsvRow> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (!line.empty() && line.back() == ',') cols.emplace_back();
        if (cols.size() != 7) throw IoError("malformed row at line " + std::to_string(lineno));
        try {
            EpisodeCsvRow r;
            r.episode_id = std::stoull(cols[0]);
            r.truth = cols[1];
            r.decision = cols[2];
            r.stop_time = std::stoull(cols[3]);
            r.timed_out = cols[4] == "1";
            r.effective_pulls = std::stoull(cols[5]);
            r.kl_bound = std::stod(cols[6]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw IoError("malformed number at line " + std::to_string(lineno));
        }
    }
    return rows;
}

}  // namespace covert
