#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "covert/bai.hpp"
#include "covert/error.hpp"
#include "covert/exponent.hpp"
#include "covert/harness.hpp"
#include "covert/model.hpp"
#include "covert/prob.hpp"

namespace py = pybind11;
using namespace covert;
using nlohmann::json;

namespace {

py::object to_python(const json& j) {
    switch (j.type()) {
        case json::value_t::null:
            return py::none();
        case json::value_t::boolean:
            return py::bool_(j.get<bool>());
        case json::value_t::number_integer:
            return py::int_(j.get<std::int64_t>());
        case json::value_t::number_unsigned:
            return py::int_(j.get<std::uint64_t>());
        case json::value_t::number_float:
            return py::float_(j.get<double>());
        case json::value_t::string:
            return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list out;
            for (const auto& v : j) out.append(to_python(v));
            return out;
        }
        default: {
            py::dict out;
            for (const auto& [k, v] : j.items()) out[py::str(k)] = to_python(v);
            return out;
        }
    }
}

py::dict solution(const ExponentSolution& s) {
    py::dict d;
    d["value"] = s.value;
    d["objective"] = s.objective;
    d["argmax"] = std::vector<double>(s.argmax_pbar.probs().begin(), s.argmax_pbar.probs().end());
    d["binding_hypothesis"] = s.binding_hypothesis ? py::cast(*s.binding_hypothesis) : py::none();
    d["binding_challenger"] = s.binding_challenger ? py::cast(*s.binding_challenger) : py::none();
    return d;
}

HypothesisModel ht_model(const std::string& path, double regularize) {
    HypothesisModel m = load_hypothesis_model(path);
    return regularize > 0.0 ? m.regularize_null(regularize) : m;
}

py::dict batch_to_python(const Model& model, const BatchResult& r) {
    py::list cells, episodes;
    const auto labels = outcome_labels(model);
    for (std::size_t c = 0; c < r.cells.size(); ++c) {
        cells.append(to_python(to_json(r.cells[c])));
        py::list rows;
        for (const auto& e : r.episodes[c]) {
            py::dict row;
            row["episode_id"] = e.episode_id;
            row["truth"] = labels.at(e.truth);
            row["decision"] = e.decision ? py::cast(labels.at(*e.decision)) : py::none();
            row["stop_time"] = e.stop_time;
            row["timed_out"] = e.timed_out;
            row["effective_pulls"] = e.effective_pulls;
            row["kl_bound"] = e.kl_bound;
            rows.append(row);
        }
        episodes.append(rows);
    }
    py::dict out;
    out["cells"] = cells;
    out["episodes"] = episodes;
    return out;
}

BatchResult run(const Model& m, const BatchSpec& spec) {
    py::gil_scoped_release release;
    return run_batch(m, spec);
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "Covert sequential testing and best-arm identification core";

    auto validation = py::register_exception<ValidationError>(mod, "ValidationError", PyExc_ValueError);
    py::register_exception<SolverError>(mod, "SolverError", PyExc_RuntimeError);
    (void)validation;

    mod.def("kl", [](std::vector<double> p, std::vector<double> q) {
        return kl_categorical(Categorical(std::move(p)), Categorical(std::move(q)));
    }, py::arg("p"), py::arg("q"));
    mod.def("chi2", [](std::vector<double> p, std::vector<double> q) {
        return chi2_categorical(Categorical(std::move(p)), Categorical(std::move(q)));
    }, py::arg("p"), py::arg("q"));
    mod.def("tv", [](std::vector<double> p, std::vector<double> q) {
        return tv_categorical(Categorical(std::move(p)), Categorical(std::move(q)));
    }, py::arg("p"), py::arg("q"));
    mod.def("chi2_gaussian_mixture", [](std::vector<double> w, const std::vector<double>& means) {
        return chi2_gaussian_mixture(EffectiveActionDist(std::move(w)), means);
    }, py::arg("weights"), py::arg("means"));
    mod.def("kl_gaussian_mixture", [](double alpha, const std::vector<double>& w, const std::vector<double>& means) {
        return kl_gaussian_mixture(alpha, w, means);
    }, py::arg("alpha"), py::arg("weights"), py::arg("means"));

    mod.def("exponent", [](const std::string& model, const std::string& mode, double eta, const std::string& variant,
                           double zeta_floor, double regularize_null) {
        const auto v = variant == "as-written" ? NonCovertVariant::AsWritten : NonCovertVariant::MinOutside;
        if (mode == "ht-covert") return solution(covert_ht_exponent(ht_model(model, regularize_null), eta));
        if (mode == "ht-plain") return solution(noncovert_ht_exponent(ht_model(model, regularize_null), v));
        if (mode == "bai-covert") return solution(covert_bai_exponent(load_bandit_model(model), eta, zeta_floor));
        if (mode == "bai-plain") return solution(noncovert_bai_exponent(load_bandit_model(model), zeta_floor));
        throw DomainError("mode must be ht-covert, ht-plain, bai-covert or bai-plain");
    }, py::arg("model"), py::arg("mode"), py::arg("eta") = 1.0, py::arg("variant") = "min-outside",
       py::arg("zeta_floor") = 0.0, py::arg("regularize_null") = 0.0);

    mod.def("f_inverse", &f_inverse, py::arg("delta"), py::arg("k"));
    mod.def("glr_statistic", [](std::vector<std::uint64_t> counts, std::vector<double> means) {
        return glr_statistic(EmpiricalBandit::from_tallies(std::move(counts), std::move(means)));
    }, py::arg("counts"), py::arg("means"));
    mod.def("stopping_threshold", [](std::vector<std::uint64_t> counts, std::vector<double> means, double delta) {
        BaiPolicyConfig cfg;
        cfg.delta = delta;
        return stopping_threshold(EmpiricalBandit::from_tallies(std::move(counts), std::move(means)), cfg);
    }, py::arg("counts"), py::arg("means"), py::arg("delta"));
    mod.def("tau_sup", [](const std::vector<double>& taus, double kappa) { return tau_sup_estimate(taus, kappa); },
            py::arg("stop_times"), py::arg("kappa") = 0.05);

    mod.def("simulate_ht", [](const std::string& model, std::vector<double> grid, double eta, double zeta,
                              std::size_t episodes, std::uint64_t seed, unsigned threads, double regularize_null,
                              std::optional<std::string> truth) {
        const HypothesisModel m = ht_model(model, regularize_null);
        BatchSpec s;
        s.mode = BatchMode::Ht;
        s.grid = std::move(grid);
        s.eta = eta;
        s.zeta = zeta;
        s.episodes = episodes;
        s.master_seed = seed;
        s.threads = threads;
        if (truth) s.truth = m.hypothesis_index(*truth);
        const Model mm = m;
        return batch_to_python(mm, run(mm, s));
    }, py::arg("model"), py::arg("n_grid"), py::arg("eta") = 0.5, py::arg("zeta") = 0.01, py::arg("episodes") = 1000,
       py::arg("seed") = 0, py::arg("threads") = 1, py::arg("regularize_null") = 0.0, py::arg("truth") = py::none());

    mod.def("simulate_bai", [](const std::string& model, std::vector<double> deltas, double eta, std::size_t episodes,
                               std::uint64_t seed, unsigned threads, std::optional<double> zeta_floor, double kappa,
                               std::optional<std::uint64_t> horizon_cap) {
        BatchSpec s;
        s.mode = BatchMode::Bai;
        s.grid = std::move(deltas);
        s.eta = eta;
        s.episodes = episodes;
        s.master_seed = seed;
        s.threads = threads;
        s.bai.eta = eta;
        s.bai.zeta_floor = zeta_floor;
        s.bai.kappa = kappa;
        s.bai.horizon_cap = horizon_cap;
        const Model mm = load_bandit_model(model);
        return batch_to_python(mm, run(mm, s));
    }, py::arg("model"), py::arg("deltas"), py::arg("eta") = 1.0, py::arg("episodes") = 1000, py::arg("seed") = 0,
       py::arg("threads") = 1, py::arg("zeta_floor") = py::none(), py::arg("kappa") = 0.05,
       py::arg("horizon_cap") = py::none());

    mod.def("fit_sqrt_scaling", [](std::vector<double> xs, std::vector<double> ys,
                                   std::optional<std::vector<double>> variances) {
        return to_python(to_json(fit_sqrt_scaling(std::move(xs), std::move(ys), std::move(variances))));
    }, py::arg("xs"), py::arg("ys"), py::arg("variances") = py::none());
}
