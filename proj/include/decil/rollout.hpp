#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "decil/env.hpp"
#include "decil/train.hpp"

namespace decil {

struct RolloutResult {
    std::vector<State> states;
    std::vector<Action> actions;
    std::vector<State> predicted_refined_states;  // DeCIL only
    std::vector<double> rewards;
    double total_reward = 0.0;
    bool success = false;
    bool aborted = false;  // non-finite state encountered
    double obs_noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

struct PolicyStep {
    Action action;
    std::optional<State> refined_state;  // raw units
};

using PolicyFn = std::function<PolicyStep(const State& observed)>;

struct NamedPolicy {
    std::string name;
    PolicyFn step;
};

// Eqs. of the two-stage inference: predict with f, refine and act with d.
// Raw state in, raw (x_hat_next, a_hat) out.
inline std::pair<State, Action> decil_step(const DynamicsModel& f, const DenoisingPolicy& d,
                                           const State& x_t) {
    if (x_t.size() != d.state_dim) throw ShapeError("decil_step: state dim mismatch");
    const Eigen::VectorXd xn = f.stats.norm_state(x_t);
    const Eigen::VectorXd y = f.predict_norm(xn);
    auto [xh, ah] = d.eval_norm(xn, y);
    State x_hat = d.stats.denorm_state(xh);
    Action a_hat = d.stats.denorm_action(ah);
    if (!x_hat.allFinite() || !a_hat.allFinite())
        throw NumericError("decil_step: non-finite network output");
    return {std::move(x_hat), std::move(a_hat)};
}

inline NamedPolicy make_decil_policy(const DynamicsModel& f, const DenoisingPolicy& d,
                                     std::string name = "decil") {
    return {std::move(name), [f, d](const State& obs) {
                auto [x_hat, a_hat] = decil_step(f, d, obs);
                return PolicyStep{std::move(a_hat), std::move(x_hat)};
            }};
}

inline NamedPolicy make_baseline_policy(const BaselinePolicy& p, std::string name = "") {
    if (name.empty()) name = to_string(p.variant);
    return {std::move(name), [p](const State& obs) { return PolicyStep{p.act(obs), {}}; }};
}

inline NamedPolicy make_expert_policy(const Environment& env, std::string name = "expert") {
    const Environment* e = &env;
    return {std::move(name), [e](const State& obs) { return PolicyStep{e->expert_action(obs), {}}; }};
}

// Closed-loop episode: the policy sees x_t + eta (raw units); the environment
// always advances on the true state.
inline RolloutResult rollout(const NamedPolicy& policy, const Environment& env,
                             double obs_noise_sigma, std::uint64_t seed) {
    RolloutResult r;
    r.obs_noise_sigma = obs_noise_sigma;
    r.seed = seed;

    auto init_rng = make_rng(seed, "rollout/init");
    auto noise_rng = make_rng(seed, "rollout/noise");
    State x = env.initial_state(init_rng);
    r.states.push_back(x);

    for (int t = 0; t < env.horizon(); ++t) {
        const State obs = add_gaussian_noise(x, obs_noise_sigma, noise_rng);
        PolicyStep ps;
        try {
            ps = policy.step(obs);
        } catch (const NumericError&) {
            r.aborted = true;
            break;
        }
        if (!ps.action.allFinite()) {
            r.aborted = true;
            break;
        }
        r.rewards.push_back(env.reward(x, ps.action));
        r.actions.push_back(ps.action);
        if (ps.refined_state) r.predicted_refined_states.push_back(*ps.refined_state);
        x = env.step(x, ps.action);
        if (!x.allFinite()) {
            r.aborted = true;
            break;
        }
        r.states.push_back(x);
    }

    r.total_reward = 0.0;
    for (double rw : r.rewards) r.total_reward += rw;
    r.success = !r.aborted && env.success(r.states);
    return r;
}

struct EvalRow {
    std::string policy;
    double noise_sigma = 0.0;
    int episode = 0;
    double total_reward = 0.0;
    bool success = false;
    std::uint64_t seed = 0;
};

struct EvalSummaryRow {
    std::string policy;
    double noise_sigma = 0.0;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double success_rate = 0.0;
    int n_episodes = 0;
};

struct EvalTable {
    std::vector<EvalRow> rows;
    std::vector<EvalSummaryRow> summary;
};

// Paired seeds: episode e uses the same initial state and the same
// observation-noise draws for every policy.
inline EvalTable evaluate(const std::vector<NamedPolicy>& policies, const Environment& env,
                          const std::vector<double>& noise_levels, int n_episodes,
                          std::uint64_t seed) {
    if (n_episodes < 1) throw std::invalid_argument("evaluate: n_episodes must be >= 1");
    EvalTable table;

    for (double sigma : noise_levels) {
        struct Cell {
            std::vector<RolloutResult> episodes;
        };
        std::vector<Cell> cells(policies.size());
        for (std::size_t p = 0; p < policies.size(); ++p) {
            for (int e = 0; e < n_episodes; ++e) {
                const std::uint64_t ep_seed = split_seed(seed, "episode/" + std::to_string(e));
                cells[p].episodes.push_back(rollout(policies[p], env, sigma, ep_seed));
            }
        }

        // aborted episodes take the worst finite episode reward in the batch
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& c : cells)
            for (const auto& ep : c.episodes)
                if (!ep.aborted && ep.total_reward < worst) worst = ep.total_reward;
        if (!std::isfinite(worst)) worst = -1e9;

        for (std::size_t p = 0; p < policies.size(); ++p) {
            double sum = 0.0, sum_sq = 0.0;
            int n_succ = 0;
            for (int e = 0; e < n_episodes; ++e) {
                const auto& ep = cells[p].episodes[e];
                const double reward = ep.aborted ? worst : ep.total_reward;
                table.rows.push_back(
                    {policies[p].name, sigma, e, reward, ep.success, ep.seed});
                sum += reward;
                sum_sq += reward * reward;
                n_succ += ep.success ? 1 : 0;
            }
            const double mean = sum / n_episodes;
            const double var = std::max(0.0, sum_sq / n_episodes - mean * mean);
            table.summary.push_back({policies[p].name, sigma, mean, std::sqrt(var),
                                     static_cast<double>(n_succ) / n_episodes, n_episodes});
        }
    }
    return table;
}

}  // namespace decil
