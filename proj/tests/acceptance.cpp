// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria not named in --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "covert/adversary.hpp"
#include "covert/bai.hpp"
#include "covert/exponent.hpp"
#include "covert/harness.hpp"
#include "covert/seqtest.hpp"
#include "support.hpp"

using namespace covert;
namespace fs = std::filesystem;
using covert::testing::normal_pdf;
using covert::testing::random_categorical;
using covert::testing::simpson;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

void note(Outcome& o, bool ok, const char* fmt, double a = 0, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, a, b, c);
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += buf;
    if (!ok) {
        o.pass = false;
        o.detail += " [x]";
    }
}

// ---- 1 ---------------------------------------------------------------------

Outcome divergence_suite() {
    Outcome o;
    std::mt19937_64 g(101);
    std::uniform_int_distribution<std::size_t> size(2, 8);
    std::size_t bad = 0;
    double worst_pinsker = -1.0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t m = size(g);
        const Categorical p = random_categorical(g, m), q = random_categorical(g, m, 0.01);
        double l1 = 0, chi = 0, kl = 0;
        for (std::size_t x = 0; x < m; ++x) {
            l1 += std::abs(p[x] - q[x]);
            chi += p[x] * p[x] / q[x];
            if (p[x] > 0) kl += p[x] * std::log(p[x] / q[x]);
        }
        chi -= 1.0;
        const double tv = tv_categorical(p, q), d = kl_categorical(p, q), c2 = chi2_categorical(p, q);
        bad += std::abs(tv - 0.5 * l1) > 1e-12 || std::abs(d - kl) > 1e-10 || std::abs(c2 - chi) > 1e-9 * (1 + chi);
        bad += d < 0 || kl_categorical(p, p) != 0.0 || tv_categorical(p, q) != tv_categorical(q, p);
        bad += d > std::log1p(c2) + 1e-12;
        worst_pinsker = std::max(worst_pinsker, tv - std::sqrt(d / 2));
    }
    note(o, bad == 0, "identity violations %.0f over 1e4 pairs", double(bad));
    note(o, worst_pinsker <= 1e-12, "max TV - sqrt(KL/2) = %.2e", worst_pinsker);

    double worst = 0.0;
    std::uniform_real_distribution<double> mu(-1.5, 1.5);
    for (int i = 0; i < 20; ++i) {
        const std::size_t k = 2 + i % 2;
        std::vector<double> means(k);
        for (auto& v : means) v = mu(g);
        const Categorical w = random_categorical(g, k);
        const std::vector<double> wv(w.probs().begin(), w.probs().end());
        double m = 0;
        for (std::size_t x = 0; x < k; ++x) m += wv[x] * means[x];
        const double quad = simpson([&](double z) {
            const double r = normal_pdf(z, m);
            return r * r / normal_pdf(z);
        }, -25.0, 25.0, 40000) - 1.0;
        const double closed = chi2_gaussian_mixture(EffectiveActionDist(wv), means);
        if (quad > 1e-12) worst = std::max(worst, std::abs(closed - quad) / quad);
    }
    note(o, worst <= 1e-6, "Gaussian chi-square max relative gap %.2e", worst);
    return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome optimizer_oracle() {
    Outcome o;
    std::mt19937_64 g(202);
    double worst = 0.0;
    for (int i = 0; i < 25; ++i) {
        const HypothesisModel m = covert::testing::random_ht_model(g, 2 + i % 2, 2 + (i / 2) % 2);
        const double res = default_grid_resolution(m.num_effective());
        worst = std::max(worst, std::abs(covert_ht_exponent(m, 1.0).value - grid_covert_ht(m, 1.0, res).value));
    }
    note(o, worst <= 1e-3, "25 random covert instances: max |dinkelbach - grid| %.2e", worst);

    const HypothesisModel t12 = covert::testing::table12(0.01);
    const double d12 = std::abs(covert_ht_exponent(t12, 1.0).value - grid_covert_ht(t12, 1.0, 1e-3).value);
    const double p12 = std::abs(noncovert_ht_exponent(t12, NonCovertVariant::MinOutside).value -
                                grid_noncovert_ht(t12, NonCovertVariant::MinOutside, 1e-3).value);
    note(o, std::max(d12, p12) <= 1e-3, "Bernoulli example covert/plain gaps %.2e / %.2e", d12, p12);

    const auto t3 = covert::testing::table3();
    const double d3 = std::abs(covert_bai_exponent(t3, 1.0).value - grid_covert_bai(t3, 1.0, 0.0, 1e-3).value);
    const double p3 = std::abs(noncovert_bai_exponent(t3).value - grid_noncovert_bai(t3, 0.0, 1e-3).value);
    note(o, std::max(d3, p3) <= 1e-3, "Gaussian example covert/plain gaps %.2e / %.2e", d3, p3);
    return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome worked_examples() {
    Outcome o;
    const auto bai = noncovert_bai_exponent(covert::testing::table3());
    note(o, std::abs(bai.value - 0.03125) <= 1e-6, "Gaussian plain value %.6f", bai.value);
    note(o, std::abs(bai.argmax_pbar[0] - 0.5) <= 1e-3 && std::abs(bai.argmax_pbar[1] - 0.5) <= 1e-3,
         "argmax (%.4f, %.4f)", bai.argmax_pbar[0], bai.argmax_pbar[1]);

    const HypothesisModel t12 = covert::testing::table12();
    const auto plain = noncovert_ht_exponent(t12, NonCovertVariant::MinOutside);
    const auto& per_b = plain.per_hypothesis.at(1);
    note(o, std::abs(per_b.argmax[0] - 0.5) <= 1e-3 && std::abs(per_b.argmax[1] - 0.5) <= 1e-3,
         "Bernoulli min-outside argmax at b (%.4f, %.4f)", per_b.argmax[0], per_b.argmax[1]);

    const auto cov12 = covert_ht_exponent(covert::testing::table12(0.01), 1.0);
    const auto cov3 = covert_bai_exponent(covert::testing::table3(), 1.0);
    std::printf("  info: covert Bernoulli argmax (%.4f, %.4f) vs reported (0.67, 0.33); covert Gaussian argmax "
                "(%.4f, %.4f) vs reported (0.3, 0.7)\n",
                cov12.argmax_pbar[0], cov12.argmax_pbar[1], cov3.argmax_pbar[0], cov3.argmax_pbar[1]);
    return o;
}

// ---- 4 ---------------------------------------------------------------------

Outcome ht_simulation(unsigned threads) {
    Outcome o;
    const Model m = covert::testing::table12(0.01);
    BatchSpec s;
    s.mode = BatchMode::Ht;
    s.grid = {2500, 10000, 40000};
    s.eta = 0.5;
    s.zeta = 0.01;
    s.episodes = 2000;
    s.master_seed = 4;
    s.threads = threads;
    const BatchResult r = run_batch(m, s);
    double worst_timeout = 0.0;
    bool decreasing = true;
    for (std::size_t c = 0; c < r.cells.size(); ++c) {
        worst_timeout = std::max(worst_timeout, r.cells[c].timeout_rate);
        if (c > 0 && !(r.cells[c].error_rate < r.cells[c - 1].error_rate)) decreasing = false;
    }
    note(o, worst_timeout <= 0.1, "max timeout rate %.4f", worst_timeout);
    note(o, decreasing, "error rates %.4f > %.4f > %.4f", r.cells[0].error_rate, r.cells[1].error_rate,
         r.cells[2].error_rate);
    const ScalingFit fit = fit_cells(r.cells, BatchMode::Ht);
    note(o, fit.slope > 0 && fit.ci.low > 0, "slope %.5f CI [%.5f, %.5f]", fit.slope, fit.ci.low, fit.ci.high);

    double lead = 0.0;
    for (double n : s.grid) {
        const auto p = build_policy(std::get<HypothesisModel>(m), static_cast<std::uint64_t>(n), 0.5, 0.01);
        for (std::size_t th = 0; th < 3; ++th) lead = std::max(lead, p.covertness_leading_term(th));
    }
    note(o, lead <= 0.5 + 1e-9, "max leading covertness term %.12f", lead);
    return o;
}

// ---- 5 ---------------------------------------------------------------------

Outcome bai_simulation(unsigned threads) {
    Outcome o;
    const Model m = covert::testing::table3();
    BatchSpec s;
    s.mode = BatchMode::Bai;
    s.grid = {0.1, 0.01};
    s.eta = 1.0;
    s.episodes = 2000;
    s.master_seed = 5;
    s.threads = threads;
    s.bai.eta = 1.0;
    const BatchResult r = run_batch(m, s);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& cell = r.cells[c];
        const double delta = s.grid[c];
        const double se = std::sqrt(delta * (1 - delta) / static_cast<double>(cell.stopped));
        note(o, cell.error_rate <= delta + 2 * se, "delta %.2f: error %.4f (limit %.4f)", delta, cell.error_rate,
             delta + 2 * se);
    }
    const double ratio = *r.cells[1].tau_sup / *r.cells[0].tau_sup;
    note(o, ratio >= 2.5 && ratio <= 6.0, "tau_sup ratio %.3f (%.4g / %.4g)", ratio, *r.cells[1].tau_sup,
         *r.cells[0].tau_sup);
    std::size_t violations = 0, stopped = 0;
    for (const auto& cell : r.episodes)
        for (const auto& e : cell) {
            if (e.timed_out) continue;
            ++stopped;
            violations += !(e.stop_margin > 0.0);
        }
    note(o, violations == 0, "R > Gamma violated in %.0f of %.0f stopped episodes", double(violations), double(stopped));
    return o;
}

// ---- 6 ---------------------------------------------------------------------

Outcome adversary_audit(unsigned threads) {
    Outcome o;
    const HypothesisModel m = covert::testing::table12(0.01);
    const std::uint64_t n = 2500;
    const double eta = 0.25;
    const auto policy = build_policy(m, n, eta, 0.01);
    const std::vector<std::size_t> ks = {n / 100, n / 10, n};
    const std::size_t traces = 1000;
    double worst = 2.0, worst_null = 0.0;
    for (std::size_t th = 0; th < m.num_hypotheses(); ++th) {
        std::vector<std::vector<double>> active(traces), idle(traces), idle2(traces);
        EpisodeOptions eo;
        eo.record_willie = true;
        eo.pad_willie_to = n;
        eo.horizon_cap = n;
        parallel_for(traces, threads, [&](std::size_t i) {
            RngStream ra = RngStream::derive(6, 10 + th, i);
            active[i] = run_episode(policy, th, ra, eo).willie_trace;
            RngStream ri = RngStream::derive(6, 20 + th, i), rj = RngStream::derive(6, 30 + th, i);
            idle[i].resize(n);
            idle2[i].resize(n);
            for (auto& z : idle[i]) z = static_cast<double>(sample(m.willie(th, 0), ri));
            for (auto& z : idle2[i]) z = static_cast<double>(sample(m.willie(th, 0), rj));
        });
        const Categorical marginal = m.willie_output(th, policy.action_probs(th));
        for (std::size_t k : ks) {
            const auto d = detect(active, idle, std::span(&marginal, 1), m.willie(th, 0), k, eta);
            worst = std::min(worst, d.alpha + d.beta + d.ci_halfwidth);
            const auto c = detect(idle2, idle, std::span(&marginal, 1), m.willie(th, 0), k, eta);
            const double z = std::abs(c.alpha + c.beta - 1.0) / std::max(c.ci_halfwidth, 1e-12);
            worst_null = std::max(worst_null, z);
        }
    }
    note(o, worst >= 1.0 - std::sqrt(eta) - 0.1, "min over (theta, k) of alpha+beta+CI %.4f (bound 0.4)", worst);
    note(o, worst_null <= 3.0, "identical-law control: max |alpha+beta-1| = %.2f halfwidths", worst_null);
    return o;
}

// ---- 7 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t tree_differences(const fs::path& a, const fs::path& b, std::size_t& files) {
    std::vector<std::string> la, lb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) la.push_back(fs::relative(e.path(), a).generic_string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) lb.push_back(fs::relative(e.path(), b).generic_string());
    std::sort(la.begin(), la.end());
    std::sort(lb.begin(), lb.end());
    files = la.size();
    if (la != lb) return std::max(la.size(), lb.size());
    std::size_t diff = 0;
    for (const auto& f : la) diff += slurp(a / f) != slurp(b / f);
    return diff;
}

Outcome determinism() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "covert_acceptance_repro";
    fs::remove_all(root);
    std::ostringstream sink;
    int codes = 0;
    for (const auto& [dir, threads] : {std::pair{"a", "1"}, std::pair{"b", "1"}, std::pair{"c", "4"}})
        codes += covert::cli::run({"repro", "--seed", "7", "--out", (root / dir).string(), "--threads", threads}, sink,
                                  sink);
    note(o, codes == 0, "repro exit codes sum %.0f", codes);
    std::size_t files = 0;
    const std::size_t same = tree_differences(root / "a", root / "b", files);
    const std::size_t threads = tree_differences(root / "a", root / "c", files);
    note(o, same == 0 && files > 0, "repeat run: %.0f of %.0f files differ", double(same), double(files));
    note(o, threads == 0, "1 vs 4 threads: %.0f files differ", double(threads));
    fs::remove_all(root);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    unsigned threads = 1;
    std::vector<int> expected_failures;
    for (int i = 1; i + 1 < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--threads") threads = static_cast<unsigned>(std::stoul(argv[i + 1]));
        if (arg == "--expect-fail") {
            std::stringstream list(argv[i + 1]);
            for (std::string id; std::getline(list, id, ',');) expected_failures.push_back(std::stoi(id));
        }
    }

    struct Criterion {
        int id;
        const char* name;
        double limit_seconds;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "divergence suite", 10, divergence_suite},
        {2, "optimizer oracle equivalence", 120, optimizer_oracle},
        {3, "worked examples (non-covert)", 60, worked_examples},
        {4, "covert sequential test simulation", 600, [&] { return ht_simulation(threads); }},
        {5, "covert best-arm simulation", 600, [&] { return bai_simulation(threads); }},
        {6, "adversary audit", 300, [&] { return adversary_audit(threads); }},
        {7, "determinism", 300, determinism},
    };
    int failed = 0, unexpected = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.limit_seconds) {
            o.pass = false;
            o.detail += "; over time limit";
        }
        const bool known = std::find(expected_failures.begin(), expected_failures.end(), c.id) != expected_failures.end();
        std::printf("%s [%d] %s: %s (%.1f s, limit %.0f s)%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.limit_seconds, !o.pass && known ? " (known failure)" : "");
        std::fflush(stdout);
        failed += !o.pass;
        unexpected += !o.pass && !known;
    }
    std::printf("%d of %zu criteria passed", static_cast<int>(criteria.size()) - failed, criteria.size());
    if (failed > unexpected) std::printf(", %d known failure(s)", failed - unexpected);
    std::printf("\n");
    return unexpected;
}
