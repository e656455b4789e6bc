#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "covert/prob.hpp"

namespace covert {

/// Finite hypothesis-testing model: for every hypothesis theta and action x
/// in {0..K}, Alice observes Y ~ alice(theta, x) and Willie observes
/// Z ~ willie(theta, x). Action 0 is the null action.
///
/// Validated on construction:
///  - every Alice table shares one alphabet, every Willie table another;
///  - the null action is uninformative: alice(theta, 0) is the same for all theta;
///  - for x != 0 every pairwise D(alice(theta,x) || alice(theta',x)) is finite,
///    and each pair of hypotheses is separated by at least one non-null action;
///  - no mixture of non-null Willie outputs reproduces willie(theta, 0).
class HypothesisModel {
public:
    HypothesisModel(std::vector<std::string> hypotheses, std::vector<std::string> actions,
                    std::vector<std::vector<Categorical>> alice, std::vector<std::vector<Categorical>> willie);

    std::size_t num_hypotheses() const { return hypotheses_.size(); }
    /// K + 1, including the null action.
    std::size_t num_actions() const { return actions_.size(); }
    /// K, the number of non-null actions.
    std::size_t num_effective() const { return actions_.size() - 1; }

    const std::vector<std::string>& hypotheses() const { return hypotheses_; }
    const std::vector<std::string>& actions() const { return actions_; }
    std::size_t hypothesis_index(const std::string& label) const;

    const Categorical& alice(std::size_t theta, std::size_t x) const { return alice_[theta][x]; }
    const Categorical& willie(std::size_t theta, std::size_t x) const { return willie_[theta][x]; }
    std::size_t alice_alphabet() const { return alice_[0][0].size(); }
    std::size_t willie_alphabet() const { return willie_[0][0].size(); }

    /// D(alice(theta,x) || alice(theta2,x)), precomputed.
    double divergence(std::size_t theta, std::size_t theta2, std::size_t x) const {
        return divergence_[(theta * num_hypotheses() + theta2) * num_actions() + x];
    }

    /// Willie output under effective-action weights pbar: sum_x pbar(x) willie(theta, x).
    Categorical willie_mixture(std::size_t theta, std::span<const double> pbar) const;
    /// Willie output under a full action distribution over {0..K}.
    Categorical willie_output(std::size_t theta, std::span<const double> action_probs) const;

    /// True when some willie(theta, 0) has a zero on an outcome that a
    /// non-null action can produce, which makes every covert chi-square infinite.
    bool has_degenerate_null() const;

    /// Returns a copy with willie(theta, 0) replaced by (1-eps) willie(theta, 0) + eps * uniform.
    HypothesisModel regularize_null(double eps) const;

    /// Smallest || sum_x pbar(x) willie(theta,x) - willie(theta,0) ||_2 over the simplex.
    double null_mixture_residual(std::size_t theta) const;

private:
    void validate();

    std::vector<std::string> hypotheses_;
    std::vector<std::string> actions_;
    std::vector<std::vector<Categorical>> alice_;
    std::vector<std::vector<Categorical>> willie_;
    std::vector<double> divergence_;
};

/// Unit-variance Gaussian bandits for Alice (rewards) and Willie (outputs).
/// Index 0 is the null arm and has mean exactly 0 on both sides. The best
/// non-null Alice arm must be unique.
class GaussianBanditModel {
public:
    GaussianBanditModel(std::vector<double> alice_means, std::vector<double> willie_means);

    std::size_t num_arms() const { return alice_means_.size(); }
    std::size_t num_effective() const { return alice_means_.size() - 1; }
    std::span<const double> alice_means() const { return alice_means_; }
    std::span<const double> willie_means() const { return willie_means_; }
    /// Willie means of the non-null arms (indices 1..K).
    std::span<const double> willie_effective_means() const {
        return std::span<const double>(willie_means_).subspan(1);
    }
    /// Index in 1..K of the best Alice arm.
    std::size_t best_arm() const { return best_arm_; }

private:
    std::vector<double> alice_means_;
    std::vector<double> willie_means_;
    std::size_t best_arm_ = 1;
};

using Model = std::variant<HypothesisModel, GaussianBanditModel>;

Model model_from_json(const nlohmann::json& doc);
Model load_model(const std::filesystem::path& path);
HypothesisModel load_hypothesis_model(const std::filesystem::path& path);
GaussianBanditModel load_bandit_model(const std::filesystem::path& path);

nlohmann::json to_json(const HypothesisModel& model);
nlohmann::json to_json(const GaussianBanditModel& model);

}  // namespace covert
