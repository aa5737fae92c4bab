#include <doctest.h>

#include <cmath>

#include "decil/train.hpp"

using namespace decil;

namespace {

// dataset from a constant-velocity expert: x' = x + c
TrajectoryDataset linear_dataset(int n_traj, int horizon, std::uint64_t seed,
                                 double scale = 1.0) {
    TrajectoryDataset ds;
    ds.env_id = "synthetic_linear";
    ds.seed = seed;
    ds.state_dim = 2;
    ds.action_dim = 2;
    auto rng = make_rng(seed, "linear-data");
    std::uniform_real_distribution<double> start(-scale, scale);
    Eigen::Vector2d c(0.07 * scale, -0.04 * scale);
    for (int i = 0; i < n_traj; ++i) {
        Eigen::Vector2d x(start(rng), start(rng));
        std::vector<Transition> traj;
        for (int t = 0; t < horizon; ++t) {
            Eigen::Vector2d x_next = x + c;
            traj.push_back({x, 2.0 * x, x_next});  // a_t = 2 x_t, synthetic
            x = x_next;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    // plain unit stats keep hand reasoning simple
    ds.stats.state_mean = Eigen::VectorXd::Zero(2);
    ds.stats.state_std = Eigen::VectorXd::Ones(2);
    ds.stats.action_mean = Eigen::VectorXd::Zero(2);
    ds.stats.action_std = Eigen::VectorXd::Ones(2);
    return ds;
}

TrainConfig small_cfg() {
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.hidden_dims = {32, 32};
    cfg.batch_size = 64;
    cfg.learning_rate = 3e-3;
    return cfg;
}

}  // namespace

TEST_CASE("train_dynamics learns an exactly representable linear map") {
    auto ds = linear_dataset(5, 30, 1);
    auto cfg = small_cfg();
    auto [model, hist] = train_dynamics(ds, cfg);
    CHECK(hist.total.size() == static_cast<std::size_t>(cfg.epochs));
    CHECK(hist.total.back() < 1e-3);
    CHECK(hist.total.back() < hist.total.front());

    auto [model2, hist2] = train_dynamics(ds, cfg);
    CHECK(hist.total == hist2.total);

    TrajectoryDataset empty;
    empty.state_dim = 2;
    empty.action_dim = 2;
    CHECK_THROWS_AS(train_dynamics(empty, cfg), std::invalid_argument);
}

TEST_CASE("train_denoiser: sigma=0 learns near-identity on clean pairs") {
    auto ds = linear_dataset(1, 30, 2);
    auto cfg = small_cfg();
    cfg.sigma = 0.0;
    cfg.epochs = 3000;
    auto [d, hist] = train_denoiser(ds, cfg);
    CHECK(hist.denoise.back() < 1e-4);

    // total = denoise + lambda * action at every epoch
    for (std::size_t e = 0; e < hist.total.size(); ++e)
        CHECK(std::abs(hist.total[e] - (hist.denoise[e] + cfg.lambda * hist.action[e])) < 1e-10);
}

TEST_CASE("train_denoiser: lambda=0 decouples the action head") {
    auto ds = linear_dataset(1, 20, 3);
    auto cfg = small_cfg();
    cfg.lambda = 0.0;
    cfg.epochs = 300;
    auto [d, hist] = train_denoiser(ds, cfg);
    // the state head still trains; the action head receives no gradient signal
    CHECK(hist.denoise.back() < hist.denoise.front());
    CHECK(hist.action.back() > 1e-4);
}

TEST_CASE("train_denoiser resamples noise every epoch") {
    auto ds = linear_dataset(1, 1, 4);  // a single transition
    auto cfg = small_cfg();
    cfg.sigma = 0.5;
    cfg.epochs = 2;
    cfg.batch_size = 1;
    // identical epochs would give identical losses; fresh draws make them differ
    auto [d, hist] = train_denoiser(ds, cfg);
    CHECK(hist.denoise[0] != hist.denoise[1]);
}

TEST_CASE("train_baseline: bc fits a linear action map; noisy_bc(0)=bc; joint shape") {
    // a small state range keeps the tanh units near-linear so the exact fit is reachable
    auto tiny = linear_dataset(1, 30, 5, 0.5);
    auto cfg = small_cfg();
    cfg.epochs = 5000;
    auto [bc, hist] = train_baseline(tiny, cfg, BaselineVariant::Bc);
    CHECK(hist.total.back() < 1e-5);

    auto ds = linear_dataset(3, 30, 5);
    cfg.epochs = 300;
    cfg.sigma = 0.0;
    auto [nbc, nh] = train_baseline(ds, cfg, BaselineVariant::NoisyBc);
    auto [bc2, bh] = train_baseline(ds, cfg, BaselineVariant::Bc);
    CHECK(nh.total == bh.total);
    for (int l = 0; l < nbc.net.n_layers(); ++l) CHECK(nbc.net.weights[l] == bc2.net.weights[l]);

    auto [joint, jh] = train_baseline(ds, cfg, BaselineVariant::Joint);
    CHECK(joint.net.output_dim() == ds.state_dim + ds.action_dim);
}

TEST_CASE("smoothed loss trend is non-increasing start to end") {
    auto ds = linear_dataset(5, 30, 6);
    auto cfg = small_cfg();
    for (auto variant : {BaselineVariant::Bc, BaselineVariant::Joint}) {
        auto [p, hist] = train_baseline(ds, cfg, variant);
        const auto& t = hist.total;
        auto window = [&](std::size_t start) {
            double s = 0;
            for (std::size_t i = start; i < start + 10; ++i) s += t[i];
            return s / 10;
        };
        CHECK(window(t.size() - 10) <= window(0));
    }
}

TEST_CASE("normalization invariance: rescaled dataset gives matching actions") {
    auto base = linear_dataset(5, 30, 7);
    // recompute honest stats for the base dataset
    auto stats_of = [](const TrajectoryDataset& ds) {
        NormStats st;
        int n = 0;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = Eigen::VectorXd::Zero(2);
        Eigen::VectorXd asum = Eigen::VectorXd::Zero(2), asq = Eigen::VectorXd::Zero(2);
        for (const auto& tr : ds.trajectories)
            for (const auto& t : tr) {
                sum += t.x_t + t.x_next;
                sq += t.x_t.cwiseProduct(t.x_t) + t.x_next.cwiseProduct(t.x_next);
                asum += t.a_t;
                asq += t.a_t.cwiseProduct(t.a_t);
                n += 1;
            }
        st.state_mean = sum / (2.0 * n);
        st.state_std = (sq / (2.0 * n) - st.state_mean.cwiseProduct(st.state_mean))
                           .cwiseMax(0.0)
                           .cwiseSqrt()
                           .cwiseMax(1e-6);
        st.action_mean = asum / n;
        st.action_std = (asq / static_cast<double>(n) -
                         st.action_mean.cwiseProduct(st.action_mean))
                            .cwiseMax(0.0)
                            .cwiseSqrt()
                            .cwiseMax(1e-6);
        return st;
    };
    base.stats = stats_of(base);

    TrajectoryDataset scaled = base;
    for (auto& tr : scaled.trajectories)
        for (auto& t : tr) {
            t.x_t *= 10.0;
            t.x_next *= 10.0;
        }
    scaled.stats = stats_of(scaled);

    auto cfg = small_cfg();
    cfg.epochs = 600;
    auto [bc_a, ha] = train_baseline(base, cfg, BaselineVariant::Bc);
    auto [bc_b, hb] = train_baseline(scaled, cfg, BaselineVariant::Bc);

    double sq_err = 0.0;
    int n = 0;
    for (const auto& tr : base.trajectories)
        for (const auto& t : tr) {
            sq_err += (bc_a.act(t.x_t) - bc_b.act(10.0 * t.x_t)).squaredNorm();
            ++n;
        }
    CHECK(std::sqrt(sq_err / n) < 5e-2);
}

TEST_CASE("model JSON round-trips preserve behavior") {
    auto ds = linear_dataset(2, 20, 8);
    auto cfg = small_cfg();
    cfg.epochs = 50;
    auto [f, hf] = train_dynamics(ds, cfg);
    auto f2 = dynamics_from_json(nlohmann::json::parse(
        to_model_json(f, ds.env_id, cfg).dump()));
    Eigen::Vector2d x(0.3, -0.2);
    CHECK(f.predict(x) == f2.predict(x));

    auto [d, hd] = train_denoiser(ds, cfg);
    auto jd = to_model_json(d, ds.env_id, cfg);
    CHECK(jd.at("model_kind") == "denoiser");
    auto d2 = denoiser_from_json(nlohmann::json::parse(jd.dump()));
    CHECK(d2.state_dim == d.state_dim);
    auto [xa, aa] = d.eval_norm(x, x);
    auto [xb, ab] = d2.eval_norm(x, x);
    CHECK(xa == xb);
    CHECK(aa == ab);
}
