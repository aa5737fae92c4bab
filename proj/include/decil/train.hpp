#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "decil/env.hpp"
#include "decil/net.hpp"

namespace decil {

struct TrainConfig {
    double sigma = 0.1;        // denoising noise std, normalized state units
    double lambda = 1.0;       // action-loss weight
    int epochs = 2000;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double learning_rate = 1e-3;
    double sigma_s = 0.05;     // probe noise std for sensitivity analysis
    std::vector<int> hidden_dims = {64, 64};

    void validate() const {
        if (sigma < 0.0) throw std::invalid_argument("TrainConfig: sigma must be >= 0");
        if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"sigma", c.sigma},         {"lambda", c.lambda},
                       {"epochs", c.epochs},       {"batch_size", c.batch_size},
                       {"seed", c.seed},           {"learning_rate", c.learning_rate},
                       {"sigma_s", c.sigma_s},     {"hidden_dims", c.hidden_dims}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.sigma = j.value("sigma", c.sigma);
    c.lambda = j.value("lambda", c.lambda);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.sigma_s = j.value("sigma_s", c.sigma_s);
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
}

// Next-state predictor f, operating in normalized state coordinates.
struct DynamicsModel {
    NetParams net;
    NormStats stats;

    Eigen::VectorXd predict_norm(const Eigen::VectorXd& x_norm) const {
        return forward(net, x_norm);
    }
    Eigen::MatrixXd predict_norm_batch(const Eigen::MatrixXd& x_norm) const {
        return forward_batch(net, x_norm);
    }
    Eigen::VectorXd predict(const Eigen::VectorXd& x_raw) const {
        return stats.denorm_state(predict_norm(stats.norm_state(x_raw)));
    }
};

// Joint state-denoising / action network d: (x_t, y) -> (x_hat_next, a_hat),
// normalized coordinates. The state head is the sub-map g.
struct DenoisingPolicy {
    NetParams net;
    NormStats stats;
    int state_dim = 0;
    int action_dim = 0;

    // (state head, action head) in normalized coordinates
    std::pair<Eigen::VectorXd, Eigen::VectorXd> eval_norm(const Eigen::VectorXd& x_norm,
                                                          const Eigen::VectorXd& y_norm) const {
        Eigen::VectorXd in(2 * state_dim);
        in << x_norm, y_norm;
        Eigen::VectorXd out = forward(net, in);
        return {out.head(state_dim), out.tail(action_dim)};
    }

    Eigen::MatrixXd eval_norm_batch(const Eigen::MatrixXd& x_norm,
                                    const Eigen::MatrixXd& y_norm) const {
        Eigen::MatrixXd in(2 * state_dim, x_norm.cols());
        in << x_norm, y_norm;
        return forward_batch(net, in);
    }

    // state head g only, normalized
    Eigen::VectorXd refine_norm(const Eigen::VectorXd& x_norm,
                                const Eigen::VectorXd& y_norm) const {
        return eval_norm(x_norm, y_norm).first;
    }
};

enum class BaselineVariant { Bc, NoisyBc, Joint };

inline std::string to_string(BaselineVariant v) {
    switch (v) {
        case BaselineVariant::Bc: return "bc";
        case BaselineVariant::NoisyBc: return "noisy_bc";
        default: return "joint";
    }
}

inline BaselineVariant baseline_from_string(const std::string& s) {
    if (s == "bc") return BaselineVariant::Bc;
    if (s == "noisy_bc") return BaselineVariant::NoisyBc;
    if (s == "joint") return BaselineVariant::Joint;
    throw std::invalid_argument("unknown baseline variant: " + s);
}

struct BaselinePolicy {
    BaselineVariant variant = BaselineVariant::Bc;
    NetParams net;
    NormStats stats;
    int state_dim = 0;
    int action_dim = 0;
    double train_sigma = 0.0;  // noisy_bc only

    // raw-space action for a raw-space observation
    Eigen::VectorXd act(const Eigen::VectorXd& x_raw) const {
        Eigen::VectorXd out = forward(net, stats.norm_state(x_raw));
        Eigen::VectorXd a_norm =
            variant == BaselineVariant::Joint ? out.tail(action_dim).eval() : out;
        return stats.denorm_action(a_norm);
    }
};

struct LossHistory {
    std::vector<double> total;
    std::vector<double> denoise;  // state-reconstruction component (joint trainers)
    std::vector<double> action;   // action component (joint trainers)
};

namespace detail {

struct FlatData {
    Eigen::MatrixXd x_norm;       // state_dim x N
    Eigen::MatrixXd x_next_norm;  // state_dim x N
    Eigen::MatrixXd a_norm;       // action_dim x N
};

inline FlatData flatten_normalized(const TrajectoryDataset& ds) {
    if (ds.n_transitions() == 0) throw std::invalid_argument("training: empty dataset");
    const auto flat = ds.flat();
    const int n = static_cast<int>(flat.size());
    FlatData d;
    d.x_norm.resize(ds.state_dim, n);
    d.x_next_norm.resize(ds.state_dim, n);
    d.a_norm.resize(ds.action_dim, n);
    for (int i = 0; i < n; ++i) {
        d.x_norm.col(i) = ds.stats.norm_state(flat[i]->x_t);
        d.x_next_norm.col(i) = ds.stats.norm_state(flat[i]->x_next);
        d.a_norm.col(i) = ds.stats.norm_action(flat[i]->a_t);
    }
    return d;
}

inline std::vector<int> shuffled_indices(int n, std::mt19937_64& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

// One Adam epoch over mini-batches of (input, target) columns with squared-L2
// loss; head_weights scales the output gradient per row block. Returns the
// mean per-sample loss per head block.
struct EpochResult {
    double loss_a = 0.0;  // first block
    double loss_b = 0.0;  // second block (0 when absent)
};

inline EpochResult sgd_epoch(NetParams& net, AdamState& adam, const Eigen::MatrixXd& inputs,
                             const Eigen::MatrixXd& targets, int split_row, double lambda,
                             int batch_size, std::mt19937_64& rng, int epoch_label) {
    const int n = static_cast<int>(inputs.cols());
    const auto idx = shuffled_indices(n, rng);
    double sum_a = 0.0, sum_b = 0.0;
    for (int start = 0; start < n; start += batch_size) {
        const int b = std::min(batch_size, n - start);
        Eigen::MatrixXd in(inputs.rows(), b), tgt(targets.rows(), b);
        for (int k = 0; k < b; ++k) {
            in.col(k) = inputs.col(idx[start + k]);
            tgt.col(k) = targets.col(idx[start + k]);
        }
        Eigen::MatrixXd pred = forward_batch(net, in);
        Eigen::MatrixXd diff = pred - tgt;
        Eigen::MatrixXd gout = 2.0 * diff;
        if (split_row > 0 && split_row < diff.rows()) {
            sum_a += diff.topRows(split_row).squaredNorm();
            sum_b += diff.bottomRows(diff.rows() - split_row).squaredNorm();
            gout.bottomRows(diff.rows() - split_row) *= lambda;
        } else {
            sum_a += diff.squaredNorm();
        }
        NetGrads grads = backward_batch(net, in, gout);
        grads.scale(1.0 / static_cast<double>(b));
        adam_step(net, grads, adam);
    }
    EpochResult r{sum_a / n, sum_b / n};
    const double total = r.loss_a + lambda * r.loss_b;
    if (!std::isfinite(total))
        throw NumericError("training diverged (non-finite loss) at epoch " +
                           std::to_string(epoch_label));
    return r;
}

}  // namespace detail

inline std::pair<DynamicsModel, LossHistory> train_dynamics(const TrajectoryDataset& data,
                                                            const TrainConfig& cfg) {
    cfg.validate();
    const auto flat = detail::flatten_normalized(data);
    std::vector<int> dims{data.state_dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(data.state_dim);

    DynamicsModel model;
    model.stats = data.stats;
    model.net = init_net(dims, Activation::Tanh, split_seed(cfg.seed, "dynamics/init"));
    AdamState adam = AdamState::for_net(model.net, cfg.learning_rate);
    auto rng = make_rng(cfg.seed, "dynamics/train");

    LossHistory hist;
    for (int e = 0; e < cfg.epochs; ++e) {
        auto r = detail::sgd_epoch(model.net, adam, flat.x_norm, flat.x_next_norm,
                                   /*split_row=*/0, /*lambda=*/0.0, cfg.batch_size, rng, e);
        hist.total.push_back(r.loss_a);
    }
    return {std::move(model), std::move(hist)};
}

inline std::pair<DenoisingPolicy, LossHistory> train_denoiser(const TrajectoryDataset& data,
                                                              const TrainConfig& cfg) {
    cfg.validate();
    const auto flat = detail::flatten_normalized(data);
    const int n = static_cast<int>(flat.x_norm.cols());

    std::vector<int> dims{2 * data.state_dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(data.state_dim + data.action_dim);

    DenoisingPolicy d;
    d.stats = data.stats;
    d.state_dim = data.state_dim;
    d.action_dim = data.action_dim;
    d.net = init_net(dims, Activation::Tanh, split_seed(cfg.seed, "denoiser/init"));
    AdamState adam = AdamState::for_net(d.net, cfg.learning_rate);
    auto rng = make_rng(cfg.seed, "denoiser/train");
    std::normal_distribution<double> gauss(0.0, 1.0);

    Eigen::MatrixXd targets(data.state_dim + data.action_dim, n);
    targets << flat.x_next_norm, flat.a_norm;

    LossHistory hist;
    Eigen::MatrixXd inputs(2 * data.state_dim, n);
    for (int e = 0; e < cfg.epochs; ++e) {
        // fresh noise every epoch: y = x_next + eta in normalized units
        Eigen::MatrixXd y = flat.x_next_norm;
        if (cfg.sigma > 0.0)
            for (Eigen::Index c = 0; c < y.cols(); ++c)
                for (Eigen::Index r = 0; r < y.rows(); ++r) y(r, c) += cfg.sigma * gauss(rng);
        inputs << flat.x_norm, y;
        auto r = detail::sgd_epoch(d.net, adam, inputs, targets, data.state_dim, cfg.lambda,
                                   cfg.batch_size, rng, e);
        hist.denoise.push_back(r.loss_a);
        hist.action.push_back(r.loss_b);
        hist.total.push_back(r.loss_a + cfg.lambda * r.loss_b);
    }
    return {std::move(d), std::move(hist)};
}

inline std::pair<BaselinePolicy, LossHistory> train_baseline(const TrajectoryDataset& data,
                                                             const TrainConfig& cfg,
                                                             BaselineVariant variant) {
    cfg.validate();
    const auto flat = detail::flatten_normalized(data);
    const int n = static_cast<int>(flat.x_norm.cols());
    const bool joint = variant == BaselineVariant::Joint;

    std::vector<int> dims{data.state_dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(joint ? data.state_dim + data.action_dim : data.action_dim);

    BaselinePolicy p;
    p.variant = variant;
    p.stats = data.stats;
    p.state_dim = data.state_dim;
    p.action_dim = data.action_dim;
    p.train_sigma = variant == BaselineVariant::NoisyBc ? cfg.sigma : 0.0;
    p.net = init_net(dims, Activation::Tanh, split_seed(cfg.seed, "baseline/init"));
    AdamState adam = AdamState::for_net(p.net, cfg.learning_rate);
    auto rng = make_rng(cfg.seed, "baseline/train");
    std::normal_distribution<double> gauss(0.0, 1.0);

    Eigen::MatrixXd targets;
    if (joint) {
        targets.resize(data.state_dim + data.action_dim, n);
        targets << flat.x_next_norm, flat.a_norm;
    } else {
        targets = flat.a_norm;
    }

    LossHistory hist;
    for (int e = 0; e < cfg.epochs; ++e) {
        Eigen::MatrixXd inputs = flat.x_norm;
        if (p.train_sigma > 0.0)
            for (Eigen::Index c = 0; c < inputs.cols(); ++c)
                for (Eigen::Index r = 0; r < inputs.rows(); ++r)
                    inputs(r, c) += p.train_sigma * gauss(rng);
        auto r = detail::sgd_epoch(p.net, adam, inputs, targets, joint ? data.state_dim : 0,
                                   cfg.lambda, cfg.batch_size, rng, e);
        if (joint) {
            hist.denoise.push_back(r.loss_a);
            hist.action.push_back(r.loss_b);
            hist.total.push_back(r.loss_a + cfg.lambda * r.loss_b);
        } else {
            hist.total.push_back(r.loss_a);
        }
    }
    return {std::move(p), std::move(hist)};
}

// --- model serialization: NetParams JSON plus a model header ---

inline nlohmann::json model_to_json(const NetParams& net, const NormStats& stats,
                                    const std::string& model_kind, const std::string& env_id,
                                    const TrainConfig& cfg) {
    nlohmann::json j = net;
    j["model_kind"] = model_kind;
    j["env_id"] = env_id;
    j["stats"] = stats;
    j["cfg"] = cfg;
    return j;
}

inline nlohmann::json to_model_json(const DynamicsModel& m, const std::string& env_id,
                                    const TrainConfig& cfg) {
    return model_to_json(m.net, m.stats, "dynamics", env_id, cfg);
}

inline nlohmann::json to_model_json(const DenoisingPolicy& m, const std::string& env_id,
                                    const TrainConfig& cfg) {
    auto j = model_to_json(m.net, m.stats, "denoiser", env_id, cfg);
    j["state_dim"] = m.state_dim;
    j["action_dim"] = m.action_dim;
    return j;
}

inline nlohmann::json to_model_json(const BaselinePolicy& m, const std::string& env_id,
                                    const TrainConfig& cfg) {
    auto j = model_to_json(m.net, m.stats, to_string(m.variant), env_id, cfg);
    j["state_dim"] = m.state_dim;
    j["action_dim"] = m.action_dim;
    j["train_sigma"] = m.train_sigma;
    return j;
}

inline DynamicsModel dynamics_from_json(const nlohmann::json& j) {
    DynamicsModel m;
    m.net = j.get<NetParams>();
    m.stats = j.at("stats").get<NormStats>();
    return m;
}

inline DenoisingPolicy denoiser_from_json(const nlohmann::json& j) {
    DenoisingPolicy m;
    m.net = j.get<NetParams>();
    m.stats = j.at("stats").get<NormStats>();
    m.state_dim = j.at("state_dim").get<int>();
    m.action_dim = j.at("action_dim").get<int>();
    return m;
}

inline BaselinePolicy baseline_from_json(const nlohmann::json& j) {
    BaselinePolicy m;
    m.net = j.get<NetParams>();
    m.stats = j.at("stats").get<NormStats>();
    m.variant = baseline_from_string(j.at("model_kind").get<std::string>());
    m.state_dim = j.at("state_dim").get<int>();
    m.action_dim = j.at("action_dim").get<int>();
    m.train_sigma = j.value("train_sigma", 0.0);
    return m;
}

}  // namespace decil
