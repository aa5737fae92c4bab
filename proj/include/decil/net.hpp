#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "decil/rng.hpp"

namespace decil {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation: " + s);
}

// Dense feedforward net with linear output layer. Weights[i] maps
// layer_dims[i] -> layer_dims[i+1].
struct NetParams {
    std::vector<int> layer_dims;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Activation hidden_activation = Activation::Tanh;

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    int n_layers() const { return static_cast<int>(weights.size()); }
};

// Gradient (or moment) container mirroring NetParams shapes.
struct NetGrads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static NetGrads zeros_like(const NetParams& net) {
        NetGrads g;
        for (int i = 0; i < net.n_layers(); ++i) {
            g.weights.push_back(Eigen::MatrixXd::Zero(net.weights[i].rows(), net.weights[i].cols()));
            g.biases.push_back(Eigen::VectorXd::Zero(net.biases[i].size()));
        }
        return g;
    }

    void scale(double s) {
        for (auto& w : weights) w *= s;
        for (auto& b : biases) b *= s;
    }
};

inline NetParams init_net(const std::vector<int>& layer_dims, Activation activation,
                          std::uint64_t seed) {
    if (layer_dims.size() < 2)
        throw std::invalid_argument("init_net: need at least input and output dims");
    for (int d : layer_dims)
        if (d <= 0) throw std::invalid_argument("init_net: layer dims must be positive");

    NetParams net;
    net.layer_dims = layer_dims;
    net.hidden_activation = activation;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
        const int fan_in = layer_dims[i];
        const int fan_out = layer_dims[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Eigen::MatrixXd w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) w(r, c) = dist(rng);
        net.weights.push_back(std::move(w));
        net.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return net;
}

namespace detail {

inline Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
    if (a == Activation::Tanh) return z.array().tanh();
    return z.array().max(0.0);
}

inline Eigen::MatrixXd activation_deriv(Activation a, const Eigen::MatrixXd& post) {
    // derivative expressed through the post-activation value
    if (a == Activation::Tanh) return 1.0 - post.array().square();
    return (post.array() > 0.0).cast<double>();
}

}  // namespace detail

// Batched forward pass, columns are samples.
inline Eigen::MatrixXd forward_batch(const NetParams& net, const Eigen::MatrixXd& input) {
    if (input.rows() != net.input_dim())
        throw ShapeError("forward: input dim " + std::to_string(input.rows()) + " != " +
                         std::to_string(net.input_dim()));
    Eigen::MatrixXd h = input;
    const int L = net.n_layers();
    for (int i = 0; i < L; ++i) {
        Eigen::MatrixXd z = (net.weights[i] * h).colwise() + net.biases[i];
        h = (i + 1 < L) ? detail::apply_activation(net.hidden_activation, z) : std::move(z);
    }
    return h;
}

inline Eigen::VectorXd forward(const NetParams& net, const Eigen::VectorXd& input) {
    return forward_batch(net, input);
}

// Reverse-mode gradients of <output_grad, forward(net, input)> summed over the
// batch. If input_grads is non-null it receives d/d(input) per column.
inline NetGrads backward_batch(const NetParams& net, const Eigen::MatrixXd& input,
                               const Eigen::MatrixXd& output_grad,
                               Eigen::MatrixXd* input_grads = nullptr) {
    if (input.rows() != net.input_dim()) throw ShapeError("backward: bad input dim");
    if (output_grad.rows() != net.output_dim() || output_grad.cols() != input.cols())
        throw ShapeError("backward: bad output_grad shape");

    const int L = net.n_layers();
    std::vector<Eigen::MatrixXd> acts;  // post-activation per layer, acts[0] = input
    acts.reserve(L + 1);
    acts.push_back(input);
    for (int i = 0; i < L; ++i) {
        Eigen::MatrixXd z = (net.weights[i] * acts.back()).colwise() + net.biases[i];
        acts.push_back(i + 1 < L ? detail::apply_activation(net.hidden_activation, z)
                                 : std::move(z));
    }

    NetGrads grads;
    grads.weights.resize(L);
    grads.biases.resize(L);
    Eigen::MatrixXd delta = output_grad;
    for (int i = L - 1; i >= 0; --i) {
        grads.weights[i] = delta * acts[i].transpose();
        grads.biases[i] = delta.rowwise().sum();
        if (i > 0) {
            delta = (net.weights[i].transpose() * delta).cwiseProduct(
                detail::activation_deriv(net.hidden_activation, acts[i]));
        } else if (input_grads) {
            *input_grads = net.weights[0].transpose() * delta;
        }
    }
    if (input_grads && L == 0) *input_grads = output_grad;
    return grads;
}

inline std::pair<NetGrads, Eigen::VectorXd> backward(const NetParams& net,
                                                     const Eigen::VectorXd& input,
                                                     const Eigen::VectorXd& output_grad) {
    Eigen::MatrixXd in_grad;
    NetGrads g = backward_batch(net, input, output_grad, &in_grad);
    return {std::move(g), Eigen::VectorXd(in_grad.col(0))};
}

struct AdamState {
    NetGrads first_moment;
    NetGrads second_moment;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-3;

    static AdamState for_net(const NetParams& net, double lr = 1e-3) {
        AdamState s;
        s.first_moment = NetGrads::zeros_like(net);
        s.second_moment = NetGrads::zeros_like(net);
        s.learning_rate = lr;
        return s;
    }
};

inline void adam_step(NetParams& params, const NetGrads& grads, AdamState& state) {
    if (grads.weights.size() != params.weights.size())
        throw ShapeError("adam_step: gradient layer count mismatch");
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        if (grads.weights[i].rows() != params.weights[i].rows() ||
            grads.weights[i].cols() != params.weights[i].cols())
            throw ShapeError("adam_step: weight shape mismatch at layer " + std::to_string(i));
        auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
            m = state.beta1 * m + (1.0 - state.beta1) * g;
            v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
            p.array() -= state.learning_rate * (m.array() / bc1) /
                         ((v.array() / bc2).sqrt() + state.epsilon);
        };
        update(params.weights[i], state.first_moment.weights[i], state.second_moment.weights[i],
               grads.weights[i]);
        update(params.biases[i], state.first_moment.biases[i], state.second_moment.biases[i],
               grads.biases[i]);
    }
}

// loss = ||pred - target||^2 (squared L2, no dimension averaging)
inline std::pair<double, Eigen::VectorXd> mse_loss(const Eigen::VectorXd& pred,
                                                   const Eigen::VectorXd& target) {
    if (pred.size() != target.size()) throw ShapeError("mse_loss: length mismatch");
    Eigen::VectorXd diff = pred - target;
    return {diff.squaredNorm(), 2.0 * diff};
}

inline void to_json(nlohmann::json& j, const NetParams& net) {
    j = nlohmann::json{{"layer_dims", net.layer_dims},
                       {"activation", to_string(net.hidden_activation)}};
    auto& jw = j["weights"] = nlohmann::json::array();
    for (const auto& w : net.weights) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
            rows.push_back(std::move(row));
        }
        jw.push_back(std::move(rows));
    }
    auto& jb = j["biases"] = nlohmann::json::array();
    for (const auto& b : net.biases) {
        nlohmann::json vec = nlohmann::json::array();
        for (Eigen::Index i = 0; i < b.size(); ++i) vec.push_back(b[i]);
        jb.push_back(std::move(vec));
    }
}

inline void from_json(const nlohmann::json& j, NetParams& net) {
    net.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    net.hidden_activation = activation_from_string(j.at("activation").get<std::string>());
    net.weights.clear();
    net.biases.clear();
    for (const auto& jw : j.at("weights")) {
        const auto n_rows = jw.size();
        const auto n_cols = jw.empty() ? 0 : jw[0].size();
        Eigen::MatrixXd w(n_rows, n_cols);
        for (std::size_t r = 0; r < n_rows; ++r)
            for (std::size_t c = 0; c < n_cols; ++c) w(r, c) = jw[r][c].get<double>();
        net.weights.push_back(std::move(w));
    }
    for (const auto& jb : j.at("biases")) {
        Eigen::VectorXd b(jb.size());
        for (std::size_t i = 0; i < jb.size(); ++i) b[i] = jb[i].get<double>();
        net.biases.push_back(std::move(b));
    }
}

}  // namespace decil
