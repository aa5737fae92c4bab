#include <doctest.h>

#include <cmath>
#include <random>

#include "decil/net.hpp"

using namespace decil;

namespace {

// independent central-difference oracle over every parameter of the scalar
// <gout, forward(net, x)>
double scalar_objective(const NetParams& net, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& gout) {
    return gout.dot(forward(net, x));
}

void check_grads_against_fd(const NetParams& net, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& gout, double step = 1e-5,
                            double rel_tol = 1e-4) {
    auto [grads, input_grad] = backward(net, x, gout);
    NetParams probe = net;
    for (int l = 0; l < net.n_layers(); ++l) {
        for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) {
                const double orig = probe.weights[l](r, c);
                probe.weights[l](r, c) = orig + step;
                const double fp = scalar_objective(probe, x, gout);
                probe.weights[l](r, c) = orig - step;
                const double fm = scalar_objective(probe, x, gout);
                probe.weights[l](r, c) = orig;
                const double fd = (fp - fm) / (2 * step);
                const double an = grads.weights[l](r, c);
                CHECK(std::abs(an - fd) <= rel_tol * (1.0 + std::abs(fd)));
            }
        for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
            const double orig = probe.biases[l][i];
            probe.biases[l][i] = orig + step;
            const double fp = scalar_objective(probe, x, gout);
            probe.biases[l][i] = orig - step;
            const double fm = scalar_objective(probe, x, gout);
            probe.biases[l][i] = orig;
            const double fd = (fp - fm) / (2 * step);
            CHECK(std::abs(grads.biases[l][i] - fd) <= rel_tol * (1.0 + std::abs(fd)));
        }
    }
    // input gradient against the same oracle
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + step;
        const double fp = scalar_objective(net, xp, gout);
        xp[i] = x[i] - step;
        const double fm = scalar_objective(net, xp, gout);
        xp[i] = x[i];
        const double fd = (fp - fm) / (2 * step);
        CHECK(std::abs(input_grad[i] - fd) <= rel_tol * (1.0 + std::abs(fd)));
    }
}

NetParams identity_linear(int n) {
    NetParams net;
    net.layer_dims = {n, n};
    net.weights.push_back(Eigen::MatrixXd::Identity(n, n));
    net.biases.push_back(Eigen::VectorXd::Zero(n));
    return net;
}

}  // namespace

TEST_CASE("init_net: biases zero, deterministic, fan-in scaled") {
    auto net = init_net({2, 2}, Activation::Tanh, 3);
    CHECK(net.biases[0].isZero(0.0));

    auto a = init_net({3, 64, 64, 2}, Activation::Tanh, 7);
    auto b = init_net({3, 64, 64, 2}, Activation::Tanh, 7);
    for (int l = 0; l < a.n_layers(); ++l) CHECK(a.weights[l] == b.weights[l]);

    // uniform on [-1/sqrt(3), 1/sqrt(3)] has std 1/3; 192 samples
    const auto& w = a.weights[0];
    const double mean = w.mean();
    const double std = std::sqrt((w.array() - mean).square().mean());
    CHECK(std == doctest::Approx(1.0 / 3.0).epsilon(0.2));

    CHECK_THROWS_AS(init_net({4}, Activation::Tanh, 0), std::invalid_argument);
    CHECK_THROWS_AS(init_net({4, 0, 2}, Activation::Tanh, 0), std::invalid_argument);
}

TEST_CASE("forward: zero net, identity layer, hand-computed tanh net") {
    auto zero = init_net({2, 3}, Activation::Tanh, 0);
    zero.weights[0].setZero();
    Eigen::VectorXd in(2);
    in << 1, 2;
    CHECK(forward(zero, in).isZero(0.0));

    auto id = identity_linear(2);
    Eigen::VectorXd x(2);
    x << 0.5, -0.5;
    CHECK(forward(id, x) == x);

    // 2-layer tanh net with hand-set weights vs direct hand evaluation
    NetParams net;
    net.layer_dims = {2, 2, 1};
    net.hidden_activation = Activation::Tanh;
    Eigen::MatrixXd w1(2, 2), w2(1, 2);
    w1 << 0.3, -0.1, 0.7, 0.2;
    w2 << 1.5, -0.5;
    net.weights = {w1, w2};
    Eigen::VectorXd b1(2), b2(1);
    b1 << 0.1, -0.2;
    b2 << 0.05;
    net.biases = {b1, b2};
    Eigen::VectorXd input(2);
    input << 1, 0;
    const double h0 = std::tanh(0.3 * 1 + 0.1);
    const double h1 = std::tanh(0.7 * 1 - 0.2);
    const double expected = 1.5 * h0 - 0.5 * h1 + 0.05;
    CHECK(forward(net, input)[0] == doctest::Approx(expected).epsilon(1e-12));

    Eigen::VectorXd bad(3);
    CHECK_THROWS_AS(forward(net, bad), ShapeError);
}

TEST_CASE("backward: zero grad, linear closed form, fd oracle") {
    auto net = init_net({3, 8, 8, 2}, Activation::Tanh, 11);
    Eigen::VectorXd x(3);
    x << 0.2, -0.5, 1.1;

    auto [g0, in0] = backward(net, x, Eigen::VectorXd::Zero(2));
    for (const auto& w : g0.weights) CHECK(w.isZero(0.0));
    CHECK(in0.isZero(0.0));

    // single linear layer: dW = g x^T, dx = W^T g
    auto lin = init_net({2, 3}, Activation::Tanh, 5);
    Eigen::VectorXd xi(2), g(3);
    xi << 1.5, -2.0;
    g << 0.3, -0.7, 0.2;
    auto [gl, inl] = backward(lin, xi, g);
    CHECK((gl.weights[0] - g * xi.transpose()).norm() == doctest::Approx(0.0));
    CHECK((gl.biases[0] - g).norm() == doctest::Approx(0.0));
    CHECK((inl - lin.weights[0].transpose() * g).norm() == doctest::Approx(0.0));

    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd gout(2);
    for (int i = 0; i < 2; ++i) gout[i] = dist(rng);
    check_grads_against_fd(net, x, gout);
}

TEST_CASE("backward: relu gradients away from kinks") {
    auto net = init_net({3, 16, 2}, Activation::Relu, 21);
    Eigen::VectorXd x(3);
    x << 0.8, -0.3, 0.4;
    Eigen::VectorXd gout(2);
    gout << 1.0, -2.0;
    check_grads_against_fd(net, x, gout);
}

TEST_CASE("backward is homogeneous in output_grad") {
    auto net = init_net({2, 8, 3}, Activation::Tanh, 4);
    Eigen::VectorXd x(2), g(3);
    x << 0.3, -0.9;
    g << 1.0, 0.5, -0.25;
    auto [g1, i1] = backward(net, x, g);
    auto [g2, i2] = backward(net, x, Eigen::VectorXd(2 * g));
    for (int l = 0; l < net.n_layers(); ++l) {
        CHECK(g2.weights[l] == 2.0 * g1.weights[l]);
        CHECK(g2.biases[l] == 2.0 * g1.biases[l]);
    }
    CHECK(i2 == 2.0 * i1);
}

TEST_CASE("adam_step: zero grad fixed point, hand-evaluated first steps") {
    auto net = identity_linear(2);
    auto state = AdamState::for_net(net, 0.1);
    auto zero = NetGrads::zeros_like(net);
    auto before = net.weights[0];
    adam_step(net, zero, state);
    CHECK(net.weights[0] == before);
    CHECK(state.step_count == 1);

    // scalar parameter w=1, grad=1, lr=0.1: w' = 1 - 0.1 * 1/(1 + eps)
    NetParams scalar;
    scalar.layer_dims = {1, 1};
    scalar.weights.push_back(Eigen::MatrixXd::Constant(1, 1, 1.0));
    scalar.biases.push_back(Eigen::VectorXd::Zero(1));
    auto st = AdamState::for_net(scalar, 0.1);
    NetGrads g = NetGrads::zeros_like(scalar);
    g.weights[0](0, 0) = 1.0;
    adam_step(scalar, g, st);
    CHECK(scalar.weights[0](0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));

    // second identical call: closed-form two-step recursion
    adam_step(scalar, g, st);
    CHECK(st.step_count == 2);
    const double b1 = 0.9, b2 = 0.999;
    const double m2 = b1 * (1 - b1) + (1 - b1);      // = 0.19
    const double v2 = b2 * (1 - b2) + (1 - b2);      // = 0.001999
    const double m_hat = m2 / (1 - b1 * b1);
    const double v_hat = v2 / (1 - b2 * b2);
    CHECK(st.first_moment.weights[0](0, 0) == doctest::Approx(m2).epsilon(1e-12));
    CHECK(st.second_moment.weights[0](0, 0) == doctest::Approx(v2).epsilon(1e-12));
    const double w2 = (1.0 - 0.1 / (1.0 + 1e-8)) - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(scalar.weights[0](0, 0) == doctest::Approx(w2).epsilon(1e-10));
}

TEST_CASE("adam determinism over 100 steps") {
    auto run = [] {
        auto net = init_net({2, 8, 2}, Activation::Tanh, 17);
        auto state = AdamState::for_net(net);
        std::mt19937_64 rng(55);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (int i = 0; i < 100; ++i) {
            Eigen::VectorXd x(2), g(2);
            for (int k = 0; k < 2; ++k) {
                x[k] = dist(rng);
                g[k] = dist(rng);
            }
            auto [grads, ig] = backward(net, x, g);
            adam_step(net, grads, state);
        }
        return net;
    };
    auto a = run();
    auto b = run();
    for (int l = 0; l < a.n_layers(); ++l) {
        CHECK(a.weights[l] == b.weights[l]);
        CHECK(a.biases[l] == b.biases[l]);
    }
}

TEST_CASE("mse_loss") {
    Eigen::VectorXd v(3);
    v << 1, 2, 3;
    auto [l0, g0] = mse_loss(v, v);
    CHECK(l0 == 0.0);
    CHECK(g0.isZero(0.0));

    Eigen::VectorXd p(2), t(2);
    p << 1, 0;
    t << 0, 0;
    auto [l1, g1] = mse_loss(p, t);
    CHECK(l1 == doctest::Approx(1.0));
    CHECK(g1[0] == doctest::Approx(2.0));
    CHECK(g1[1] == doctest::Approx(0.0));

    p << 0.3, -0.4;
    auto [l2, g2] = mse_loss(p, t);
    CHECK(l2 == doctest::Approx(0.25));
    CHECK(g2[0] == doctest::Approx(0.6));
    CHECK(g2[1] == doctest::Approx(-0.8));

    Eigen::VectorXd bad(3);
    CHECK_THROWS_AS(mse_loss(p, bad), ShapeError);
}

TEST_CASE("NetParams JSON round-trip is lossless") {
    auto net = init_net({3, 5, 2}, Activation::Relu, 123);
    nlohmann::json j = net;
    auto back = nlohmann::json::parse(j.dump()).get<NetParams>();
    CHECK(back.layer_dims == net.layer_dims);
    CHECK(back.hidden_activation == net.hidden_activation);
    for (int l = 0; l < net.n_layers(); ++l) {
        CHECK(back.weights[l] == net.weights[l]);
        CHECK(back.biases[l] == net.biases[l]);
    }
}
