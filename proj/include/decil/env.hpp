#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "decil/net.hpp"
#include "decil/rng.hpp"

namespace decil {

using State = Eigen::VectorXd;
using Action = Eigen::VectorXd;

// Deterministic desk-scale environment. step is pure: equal arguments give
// equal states.
class Environment {
public:
    virtual ~Environment() = default;
    virtual std::string id() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual int horizon() const = 0;
    virtual State step(const State& x, const Action& a) const = 0;
    virtual State initial_state(std::mt19937_64& rng) const = 0;
    virtual Action expert_action(const State& x) const = 0;
    virtual double reward(const State& x, const Action& a) const = 0;
    virtual bool success(const std::vector<State>& states) const = 0;
};

// State (p, q); expert manifold q = sin(p); action is a velocity,
// x' = x + dt * a.
class SinusoidEnv final : public Environment {
public:
    static constexpr double kDt = 0.1;

    std::string id() const override { return "sinusoid"; }
    int state_dim() const override { return 2; }
    int action_dim() const override { return 2; }
    int horizon() const override { return 60; }

    State step(const State& x, const Action& a) const override {
        check_dims(x, a);
        return x + kDt * a;
    }

    State initial_state(std::mt19937_64& rng) const override {
        std::uniform_real_distribution<double> dist(0.0, 2.0 * std::numbers::pi);
        const double p = dist(rng);
        State x(2);
        x << p, std::sin(p);
        return x;
    }

    // unit-speed motion along the curve q = sin(p), with a restoring term
    // toward the manifold that vanishes on the curve (keeps the discrete
    // rollout from drifting off over the horizon)
    Action expert_action(const State& x) const override {
        Action a(2);
        a << 1.0, std::cos(x[0]) + 4.0 * (std::sin(x[0]) - x[1]);
        return a / a.norm();
    }

    double reward(const State& x, const Action&) const override {
        return -std::abs(x[1] - std::sin(x[0]));
    }

    bool success(const std::vector<State>& states) const override {
        if (states.empty()) return false;
        double acc = 0.0;
        for (const auto& x : states) acc += std::abs(x[1] - std::sin(x[0]));
        return acc / static_cast<double>(states.size()) < 0.1;
    }

private:
    static void check_dims(const State& x, const Action& a) {
        if (x.size() != 2 || a.size() != 2) throw ShapeError("sinusoid: expected 2-d state/action");
    }
};

// State (robot xy, goal xy, crossing-agent xy). The crossing agent is scripted:
// it moves along +y at constant speed, perpendicular to the robot's nominal
// path toward the goal on the x-axis. Action is robot velocity, clipped to
// unit norm.
class PointmassCrossingEnv final : public Environment {
public:
    static constexpr double kDt = 0.1;
    static constexpr double kAgentSpeed = 0.5;
    static constexpr double kRepulsionGain = 1.5;
    static constexpr double kRepulsionRadius = 0.5;
    static constexpr double kCollisionRadius = 0.2;
    static constexpr double kGoalTolerance = 0.1;

    std::string id() const override { return "pointmass_crossing"; }
    int state_dim() const override { return 6; }
    int action_dim() const override { return 2; }
    int horizon() const override { return 80; }

    State step(const State& x, const Action& a) const override {
        if (x.size() != 6 || a.size() != 2)
            throw ShapeError("pointmass_crossing: expected 6-d state, 2-d action");
        Action clipped = a;
        const double n = clipped.norm();
        if (n > 1.0) clipped /= n;
        State next = x;
        next.segment<2>(0) += kDt * clipped;
        next[5] += kDt * kAgentSpeed;  // agent y advances on its script
        return next;
    }

    State initial_state(std::mt19937_64& rng) const override {
        std::uniform_real_distribution<double> jitter(-0.2, 0.2);
        State x(6);
        const double rx = jitter(rng), ry = jitter(rng);
        const double gx = jitter(rng), gy = jitter(rng);
        const double ax = jitter(rng), ay = jitter(rng);
        x << rx, ry, 2.0 + gx, gy, 1.0 + ax, -1.2 + ay;
        return x;
    }

    // proportional controller toward the goal plus a repulsive push away from
    // the crossing agent inside kRepulsionRadius
    Action expert_action(const State& x) const override {
        const Eigen::Vector2d robot = x.segment<2>(0);
        const Eigen::Vector2d goal = x.segment<2>(2);
        const Eigen::Vector2d agent = x.segment<2>(4);
        Eigen::Vector2d a = 2.0 * (goal - robot);
        const Eigen::Vector2d away = robot - agent;
        const double dist = away.norm();
        if (dist < kRepulsionRadius && dist > 1e-9) {
            a += kRepulsionGain * (kRepulsionRadius - dist) / dist * away;
        }
        const double n = a.norm();
        if (n > 1.0) a /= n;
        return a;
    }

    double reward(const State& x, const Action&) const override {
        const double goal_dist = (x.segment<2>(0) - x.segment<2>(2)).norm();
        const bool collision = (x.segment<2>(0) - x.segment<2>(4)).norm() < kCollisionRadius;
        return -goal_dist - (collision ? 10.0 : 0.0);
    }

    bool success(const std::vector<State>& states) const override {
        if (states.empty()) return false;
        bool reached = false;
        for (const auto& x : states) {
            if ((x.segment<2>(0) - x.segment<2>(4)).norm() < kCollisionRadius) return false;
            if ((x.segment<2>(0) - x.segment<2>(2)).norm() < kGoalTolerance) reached = true;
        }
        return reached;
    }
};

inline std::unique_ptr<Environment> sinusoid_env() { return std::make_unique<SinusoidEnv>(); }

inline std::unique_ptr<Environment> pointmass_crossing_env() {
    return std::make_unique<PointmassCrossingEnv>();
}

inline std::unique_ptr<Environment> make_env(const std::string& env_id) {
    if (env_id == "sinusoid") return sinusoid_env();
    if (env_id == "pointmass_crossing") return pointmass_crossing_env();
    throw std::invalid_argument("unknown env_id '" + env_id +
                                "' (valid: sinusoid, pointmass_crossing)");
}

inline Eigen::VectorXd add_gaussian_noise(const Eigen::VectorXd& v, double sigma,
                                          std::mt19937_64& rng) {
    if (sigma < 0.0) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
    if (sigma == 0.0) return v;
    return v + gaussian_vector(static_cast<int>(v.size()), sigma, rng);
}

inline Eigen::VectorXd normalize(const Eigen::VectorXd& v, const Eigen::VectorXd& mean,
                                 const Eigen::VectorXd& std) {
    if (v.size() != mean.size() || v.size() != std.size())
        throw ShapeError("normalize: length mismatch");
    return (v - mean).cwiseQuotient(std);
}

inline Eigen::VectorXd denormalize(const Eigen::VectorXd& v, const Eigen::VectorXd& mean,
                                   const Eigen::VectorXd& std) {
    if (v.size() != mean.size() || v.size() != std.size())
        throw ShapeError("denormalize: length mismatch");
    return v.cwiseProduct(std) + mean;
}

struct NormStats {
    Eigen::VectorXd state_mean, state_std, action_mean, action_std;

    Eigen::VectorXd norm_state(const Eigen::VectorXd& x) const {
        return normalize(x, state_mean, state_std);
    }
    Eigen::VectorXd denorm_state(const Eigen::VectorXd& x) const {
        return denormalize(x, state_mean, state_std);
    }
    Eigen::VectorXd norm_action(const Eigen::VectorXd& a) const {
        return normalize(a, action_mean, action_std);
    }
    Eigen::VectorXd denorm_action(const Eigen::VectorXd& a) const {
        return denormalize(a, action_mean, action_std);
    }
};

struct Transition {
    State x_t;
    Action a_t;
    State x_next;
};

struct TrajectoryDataset {
    std::vector<std::vector<Transition>> trajectories;
    NormStats stats;
    std::string env_id;
    std::uint64_t seed = 0;
    int state_dim = 0;
    int action_dim = 0;

    std::size_t n_transitions() const {
        std::size_t n = 0;
        for (const auto& tr : trajectories) n += tr.size();
        return n;
    }

    std::vector<const Transition*> flat() const {
        std::vector<const Transition*> out;
        out.reserve(n_transitions());
        for (const auto& tr : trajectories)
            for (const auto& t : tr) out.push_back(&t);
        return out;
    }
};

// Rolls the scripted expert; non-success episodes are discarded and retried
// with the next sub-seed, erroring after 10x n_traj attempts.
inline TrajectoryDataset generate_dataset(const Environment& env, int n_traj,
                                          std::uint64_t seed) {
    if (n_traj < 1) throw std::invalid_argument("generate_dataset: n_traj must be >= 1");

    TrajectoryDataset ds;
    ds.env_id = env.id();
    ds.seed = seed;
    ds.state_dim = env.state_dim();
    ds.action_dim = env.action_dim();

    const int max_attempts = 10 * n_traj;
    int attempt = 0;
    while (static_cast<int>(ds.trajectories.size()) < n_traj) {
        if (attempt >= max_attempts)
            throw std::runtime_error("generate_dataset: expert failed too often on env " +
                                     env.id());
        auto rng = make_rng(seed, "dataset/episode/" + std::to_string(attempt));
        ++attempt;

        State x = env.initial_state(rng);
        std::vector<Transition> traj;
        std::vector<State> states{x};
        for (int t = 0; t < env.horizon(); ++t) {
            Action a = env.expert_action(x);
            State x_next = env.step(x, a);
            traj.push_back({x, a, x_next});
            x = x_next;
            states.push_back(x);
        }
        if (!env.success(states)) continue;
        ds.trajectories.push_back(std::move(traj));
    }

    // normalization statistics over all recorded states (incl. x_next) and actions
    const int sd = ds.state_dim, ad = ds.action_dim;
    Eigen::VectorXd s_sum = Eigen::VectorXd::Zero(sd), s_sq = Eigen::VectorXd::Zero(sd);
    Eigen::VectorXd a_sum = Eigen::VectorXd::Zero(ad), a_sq = Eigen::VectorXd::Zero(ad);
    std::size_t ns = 0, na = 0;
    for (const auto& tr : ds.trajectories) {
        for (const auto& t : tr) {
            s_sum += t.x_t;
            s_sq += t.x_t.cwiseProduct(t.x_t);
            s_sum += t.x_next;
            s_sq += t.x_next.cwiseProduct(t.x_next);
            ns += 2;
            a_sum += t.a_t;
            a_sq += t.a_t.cwiseProduct(t.a_t);
            na += 1;
        }
    }
    auto finish = [](Eigen::VectorXd sum, Eigen::VectorXd sq, std::size_t n,
                     Eigen::VectorXd& mean, Eigen::VectorXd& std) {
        mean = sum / static_cast<double>(n);
        Eigen::VectorXd var = sq / static_cast<double>(n) - mean.cwiseProduct(mean);
        std = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-6);
    };
    finish(s_sum, s_sq, ns, ds.stats.state_mean, ds.stats.state_std);
    finish(a_sum, a_sq, na, ds.stats.action_mean, ds.stats.action_std);
    return ds;
}

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

inline void to_json(nlohmann::json& j, const NormStats& s) {
    j = nlohmann::json{{"state_mean", vec_to_json(s.state_mean)},
                       {"state_std", vec_to_json(s.state_std)},
                       {"action_mean", vec_to_json(s.action_mean)},
                       {"action_std", vec_to_json(s.action_std)}};
}

inline void from_json(const nlohmann::json& j, NormStats& s) {
    s.state_mean = vec_from_json(j.at("state_mean"));
    s.state_std = vec_from_json(j.at("state_std"));
    s.action_mean = vec_from_json(j.at("action_mean"));
    s.action_std = vec_from_json(j.at("action_std"));
}

inline void to_json(nlohmann::json& j, const TrajectoryDataset& ds) {
    j = nlohmann::json{{"env_id", ds.env_id},
                       {"seed", ds.seed},
                       {"state_dim", ds.state_dim},
                       {"action_dim", ds.action_dim},
                       {"stats", ds.stats}};
    auto& jt = j["trajectories"] = nlohmann::json::array();
    for (const auto& tr : ds.trajectories) {
        nlohmann::json jtr = nlohmann::json::array();
        for (const auto& t : tr) {
            jtr.push_back(nlohmann::json{{"x", vec_to_json(t.x_t)},
                                         {"a", vec_to_json(t.a_t)},
                                         {"x_next", vec_to_json(t.x_next)}});
        }
        jt.push_back(std::move(jtr));
    }
}

inline void from_json(const nlohmann::json& j, TrajectoryDataset& ds) {
    ds.env_id = j.at("env_id").get<std::string>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.state_dim = j.at("state_dim").get<int>();
    ds.action_dim = j.at("action_dim").get<int>();
    ds.stats = j.at("stats").get<NormStats>();
    ds.trajectories.clear();
    for (const auto& jtr : j.at("trajectories")) {
        std::vector<Transition> tr;
        for (const auto& jt : jtr)
            tr.push_back({vec_from_json(jt.at("x")), vec_from_json(jt.at("a")),
                          vec_from_json(jt.at("x_next"))});
        ds.trajectories.push_back(std::move(tr));
    }
}

}  // namespace decil
