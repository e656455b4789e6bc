#include "covert/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "covert/error.hpp"
#include "covert/simplex.hpp"

namespace covert {
namespace {

constexpr double kNullMixtureTolerance = 1e-9;

using nlohmann::json;

std::vector<std::string> default_action_labels(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i));
    return out;
}

void reject_unknown_keys(const json& doc, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : doc.items())
        if (!allowed.contains(key)) throw InvalidModel("unknown model key '" + key + "'");
}

std::vector<std::vector<Categorical>> parse_tables(const json& doc, const std::vector<std::string>& hyps,
                                                   std::size_t num_actions, const char* side) {
    if (!doc.is_object()) throw InvalidModel(std::string(side) + " must map hypothesis labels to tables");
    std::vector<std::vector<Categorical>> out;
    for (const auto& h : hyps) {
        if (!doc.contains(h)) throw InvalidModel(std::string(side) + " has no table for hypothesis '" + h + "'");
        const auto& rows = doc.at(h);
        if (!rows.is_array() || rows.size() != num_actions)
            throw InvalidModel(std::string(side) + "['" + h + "'] must have one row per action");
        std::vector<Categorical> per_action;
        for (const auto& row : rows) {
            try {
                per_action.emplace_back(row.get<std::vector<double>>());
            } catch (const InvalidDistribution& e) {
                throw InvalidModel(std::string(side) + "['" + h + "']: " + e.what());
            } catch (const json::exception& e) {
                throw InvalidModel(std::string(side) + "['" + h + "']: " + e.what());
            }
        }
        out.push_back(std::move(per_action));
    }
    if (doc.size() != hyps.size()) throw InvalidModel(std::string(side) + " has tables for unknown hypotheses");
    return out;
}

}  // namespace

HypothesisModel::HypothesisModel(std::vector<std::string> hypotheses, std::vector<std::string> actions,
                                 std::vector<std::vector<Categorical>> alice,
                                 std::vector<std::vector<Categorical>> willie)
    : hypotheses_(std::move(hypotheses)),
      actions_(std::move(actions)),
      alice_(std::move(alice)),
      willie_(std::move(willie)) {
    validate();
}

void HypothesisModel::validate() {
    const std::size_t nh = hypotheses_.size();
    const std::size_t na = actions_.size();
    if (nh < 2) throw InvalidModel("need at least two hypotheses");
    if (na < 2) throw InvalidModel("need the null action and at least one effective action");
    if (std::set<std::string>(hypotheses_.begin(), hypotheses_.end()).size() != nh)
        throw InvalidModel("duplicate hypothesis labels");
    if (alice_.size() != nh || willie_.size() != nh) throw InvalidModel("table count does not match hypotheses");
    for (std::size_t t = 0; t < nh; ++t) {
        if (alice_[t].size() != na || willie_[t].size() != na)
            throw InvalidModel("table row count does not match actions");
        for (std::size_t x = 0; x < na; ++x) {
            if (alice_[t][x].size() != alice_[0][0].size()) throw InvalidModel("Alice alphabets differ");
            if (willie_[t][x].size() != willie_[0][0].size()) throw InvalidModel("Willie alphabets differ");
        }
    }

    divergence_.assign(nh * nh * na, 0.0);
    for (std::size_t t = 0; t < nh; ++t) {
        for (std::size_t u = 0; u < nh; ++u) {
            if (t == u) continue;
            if (alice_[t][0] != alice_[u][0])
                throw InvalidModel("null action distinguishes '" + hypotheses_[t] + "' from '" + hypotheses_[u] + "'");
            bool separated = false;
            for (std::size_t x = 1; x < na; ++x) {
                double d = 0.0;
                try {
                    d = kl_categorical(alice_[t][x], alice_[u][x]);
                } catch (const AbsoluteContinuityViolation&) {
                    throw InvalidModel("action '" + actions_[x] + "' separates '" + hypotheses_[t] + "' from '" +
                                       hypotheses_[u] + "' perfectly (infinite divergence)");
                }
                divergence_[(t * nh + u) * na + x] = d;
                separated = separated || d > 0.0;
            }
            if (!separated)
                throw InvalidModel("no action separates '" + hypotheses_[t] + "' from '" + hypotheses_[u] + "'");
        }
    }

    for (std::size_t t = 0; t < nh; ++t)
        if (null_mixture_residual(t) < kNullMixtureTolerance)
            throw InvalidModel("a mixture of effective actions reproduces the null output for '" + hypotheses_[t] + "'");
}

std::size_t HypothesisModel::hypothesis_index(const std::string& label) const {
    auto it = std::find(hypotheses_.begin(), hypotheses_.end(), label);
    if (it == hypotheses_.end()) throw ValidationError("unknown hypothesis '" + label + "'");
    return static_cast<std::size_t>(it - hypotheses_.begin());
}

Categorical HypothesisModel::willie_mixture(std::size_t theta, std::span<const double> pbar) const {
    std::vector<double> out(willie_alphabet(), 0.0);
    for (std::size_t x = 1; x < num_actions(); ++x)
        for (std::size_t z = 0; z < out.size(); ++z) out[z] += pbar[x - 1] * willie_[theta][x][z];
    return Categorical::normalize(std::move(out));
}

Categorical HypothesisModel::willie_output(std::size_t theta, std::span<const double> action_probs) const {
    std::vector<double> out(willie_alphabet(), 0.0);
    for (std::size_t x = 0; x < num_actions(); ++x)
        for (std::size_t z = 0; z < out.size(); ++z) out[z] += action_probs[x] * willie_[theta][x][z];
    return Categorical::normalize(std::move(out));
}

bool HypothesisModel::has_degenerate_null() const {
    for (std::size_t t = 0; t < num_hypotheses(); ++t)
        for (std::size_t z = 0; z < willie_alphabet(); ++z) {
            if (willie_[t][0][z] != 0.0) continue;
            for (std::size_t x = 1; x < num_actions(); ++x)
                if (willie_[t][x][z] > 0.0) return true;
        }
    return false;
}

HypothesisModel HypothesisModel::regularize_null(double eps) const {
    if (!(eps > 0.0 && eps < 1.0)) throw DomainError("regularization epsilon must lie in (0, 1)");
    auto willie = willie_;
    const double u = 1.0 / static_cast<double>(willie_alphabet());
    for (auto& per_action : willie) {
        std::vector<double> p(per_action[0].probs().begin(), per_action[0].probs().end());
        for (double& v : p) v = (1.0 - eps) * v + eps * u;
        per_action[0] = Categorical::normalize(std::move(p));
    }
    return HypothesisModel(hypotheses_, actions_, alice_, std::move(willie));
}

double HypothesisModel::null_mixture_residual(std::size_t theta) const {
    // Accelerated projected gradient on ||Q p - q0||^2 over the simplex.
    const std::size_t k = num_effective();
    const std::size_t nz = willie_alphabet();
    const auto& row = willie_[theta];
    double lipschitz = 0.0;
    for (std::size_t x = 1; x <= k; ++x)
        for (std::size_t z = 0; z < nz; ++z) lipschitz += row[x][z] * row[x][z];
    lipschitz = 2.0 * std::max(lipschitz, 1e-12);

    auto residual = [&](std::span<const double> p, std::vector<double>& r) {
        r.assign(nz, 0.0);
        for (std::size_t z = 0; z < nz; ++z) {
            r[z] = -row[0][z];
            for (std::size_t x = 1; x <= k; ++x) r[z] += p[x - 1] * row[x][z];
        }
    };

    std::vector<double> p(k, 1.0 / static_cast<double>(k)), y = p, prev = p, r, grad(k);
    double tk = 1.0;
    for (int it = 0; it < 20000; ++it) {
        residual(y, r);
        for (std::size_t x = 1; x <= k; ++x) {
            grad[x - 1] = 0.0;
            for (std::size_t z = 0; z < nz; ++z) grad[x - 1] += 2.0 * row[x][z] * r[z];
        }
        prev = p;
        for (std::size_t i = 0; i < k; ++i) p[i] = y[i] - grad[i] / lipschitz;
        project_to_simplex(p);
        const double tnext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        for (std::size_t i = 0; i < k; ++i) y[i] = p[i] + (tk - 1.0) / tnext * (p[i] - prev[i]);
        project_to_simplex(y);
        tk = tnext;
    }
    residual(p, r);
    double norm2 = 0.0;
    for (double v : r) norm2 += v * v;
    return std::sqrt(norm2);
}

GaussianBanditModel::GaussianBanditModel(std::vector<double> alice_means, std::vector<double> willie_means)
    : alice_means_(std::move(alice_means)), willie_means_(std::move(willie_means)) {
    if (alice_means_.size() < 2) throw InvalidModel("bandit needs the null arm and at least one effective arm");
    if (alice_means_.size() != willie_means_.size())
        throw InvalidModel("alice_means and willie_means must have the same length");
    for (double m : alice_means_)
        if (!std::isfinite(m)) throw InvalidModel("non-finite Alice mean");
    for (double m : willie_means_)
        if (!std::isfinite(m)) throw InvalidModel("non-finite Willie mean");
    if (alice_means_[0] != 0.0 || willie_means_[0] != 0.0) throw InvalidModel("null arm must have mean exactly 0");
    best_arm_ = 1;
    for (std::size_t x = 2; x < alice_means_.size(); ++x)
        if (alice_means_[x] > alice_means_[best_arm_]) best_arm_ = x;
    for (std::size_t x = 1; x < alice_means_.size(); ++x)
        if (x != best_arm_ && std::abs(alice_means_[x] - alice_means_[best_arm_]) <= 1e-12)
            throw InvalidModel("best Alice arm is not unique");
}

Model model_from_json(const json& doc) {
    if (!doc.is_object()) throw InvalidModel("model document must be a JSON object");
    if (doc.contains("alice_means")) {
        reject_unknown_keys(doc, {"alice_means", "willie_means", "name", "description"});
        if (!doc.contains("willie_means")) throw InvalidModel("bandit model lacks willie_means");
        try {
            return GaussianBanditModel(doc.at("alice_means").get<std::vector<double>>(),
                                       doc.at("willie_means").get<std::vector<double>>());
        } catch (const json::exception& e) {
            throw InvalidModel(std::string("bandit model: ") + e.what());
        }
    }
    reject_unknown_keys(doc, {"hypotheses", "actions", "alice", "willie", "name", "description"});
    for (const char* key : {"hypotheses", "actions", "alice", "willie"})
        if (!doc.contains(key)) throw InvalidModel(std::string("model lacks '") + key + "'");
    std::vector<std::string> hyps;
    std::vector<std::string> actions;
    try {
        hyps = doc.at("hypotheses").get<std::vector<std::string>>();
        const auto& a = doc.at("actions");
        if (a.is_number_unsigned()) actions = default_action_labels(a.get<std::size_t>());
        else actions = a.get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw InvalidModel(std::string("model header: ") + e.what());
    }
    auto alice = parse_tables(doc.at("alice"), hyps, actions.size(), "alice");
    auto willie = parse_tables(doc.at("willie"), hyps, actions.size(), "willie");
    return HypothesisModel(std::move(hyps), std::move(actions), std::move(alice), std::move(willie));
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model file '" + path.string() + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw InvalidModel("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return model_from_json(doc);
}

HypothesisModel load_hypothesis_model(const std::filesystem::path& path) {
    auto m = load_model(path);
    if (auto* h = std::get_if<HypothesisModel>(&m)) return std::move(*h);
    throw InvalidModel("'" + path.string() + "' holds a bandit model, expected hypothesis tables");
}

GaussianBanditModel load_bandit_model(const std::filesystem::path& path) {
    auto m = load_model(path);
    if (auto* b = std::get_if<GaussianBanditModel>(&m)) return std::move(*b);
    throw InvalidModel("'" + path.string() + "' holds hypothesis tables, expected a bandit model");
}

json to_json(const HypothesisModel& model) {
    json doc;
    doc["hypotheses"] = model.hypotheses();
    doc["actions"] = model.actions();
    for (std::size_t t = 0; t < model.num_hypotheses(); ++t) {
        json a = json::array(), w = json::array();
        for (std::size_t x = 0; x < model.num_actions(); ++x) {
            a.push_back(std::vector<double>(model.alice(t, x).probs().begin(), model.alice(t, x).probs().end()));
            w.push_back(std::vector<double>(model.willie(t, x).probs().begin(), model.willie(t, x).probs().end()));
        }
        doc["alice"][model.hypotheses()[t]] = a;
        doc["willie"][model.hypotheses()[t]] = w;
    }
    return doc;
}

json to_json(const GaussianBanditModel& model) {
    return json{{"alice_means", std::vector<double>(model.alice_means().begin(), model.alice_means().end())},
                {"willie_means", std::vector<double>(model.willie_means().begin(), model.willie_means().end())}};
}

}  // namespace covert
