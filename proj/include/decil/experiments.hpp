#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "decil/analysis.hpp"
#include "decil/env.hpp"
#include "decil/io.hpp"
#include "decil/rollout.hpp"
#include "decil/train.hpp"

namespace decil {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::string env_id = "sinusoid";
    int n_traj = 20;
    TrainConfig train;
    std::vector<double> noise_levels = {0.0, 0.05, 0.1, 0.2};
    int n_episodes = 20;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::filesystem::path output_dir = "out";
    std::vector<double> sigma_sweep = {0.02, 0.05, 0.1, 0.2, 0.4};
    int sensitivity_n_mc = 500;
    int quad_n_mc = 100000;
    std::string dataset_path;                 // train/evaluate input
    nlohmann::json policies = nlohmann::json::array();  // evaluate input

    void validate() const {
        std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
        if (uniq.size() != seeds.size()) throw ConfigError("config: seeds must be distinct");
        for (std::size_t i = 0; i < noise_levels.size(); ++i) {
            if (noise_levels[i] < 0.0) throw ConfigError("config: noise levels must be >= 0");
            if (i > 0 && noise_levels[i] < noise_levels[i - 1])
                throw ConfigError("config: noise levels must be sorted ascending");
        }
        if (n_traj < 1) throw ConfigError("config: n_traj must be >= 1");
        if (n_episodes < 1) throw ConfigError("config: n_episodes must be >= 1");
        train.validate();
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"env_id", c.env_id},
                       {"n_traj", c.n_traj},
                       {"train", c.train},
                       {"noise_levels", c.noise_levels},
                       {"n_episodes", c.n_episodes},
                       {"seeds", c.seeds},
                       {"output_dir", c.output_dir.string()},
                       {"sigma_sweep", c.sigma_sweep},
                       {"sensitivity_n_mc", c.sensitivity_n_mc},
                       {"quad_n_mc", c.quad_n_mc},
                       {"dataset_path", c.dataset_path},
                       {"policies", c.policies}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.env_id = j.value("env_id", c.env_id);
    c.n_traj = j.value("n_traj", c.n_traj);
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.noise_levels = j.value("noise_levels", c.noise_levels);
    c.n_episodes = j.value("n_episodes", c.n_episodes);
    c.seeds = j.value("seeds", c.seeds);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.sigma_sweep = j.value("sigma_sweep", c.sigma_sweep);
    c.sensitivity_n_mc = j.value("sensitivity_n_mc", c.sensitivity_n_mc);
    c.quad_n_mc = j.value("quad_n_mc", c.quad_n_mc);
    c.dataset_path = j.value("dataset_path", c.dataset_path);
    if (j.contains("policies")) c.policies = j.at("policies");
}

// Apply a dotted-path override such as train.sigma=0.2; the value is parsed
// as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be KEY=VALUE: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
        parsed = value;
    }
    nlohmann::json* node = &cfg;
    std::stringstream ss(key);
    std::string part, prev;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("override key is empty");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
    (*node)[parts.back()] = parsed;
}

inline int thread_cap() {
    if (const char* env = std::getenv("DECIL_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n); cells own their rng state so the result is
// independent of scheduling.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int n_threads = std::min(n, thread_cap());
    if (n_threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline void echo_config(const ExperimentConfig& cfg) {
    write_json_file(cfg.output_dir / "config.json", nlohmann::json(cfg));
}

inline std::string loss_history_csv(const LossHistory& hist) {
    std::ostringstream out;
    const bool joint = !hist.denoise.empty();
    out << (joint ? "epoch,total,denoise,action\n" : "epoch,total\n");
    for (std::size_t e = 0; e < hist.total.size(); ++e) {
        out << e << ',' << fmt_double(hist.total[e]);
        if (joint) out << ',' << fmt_double(hist.denoise[e]) << ',' << fmt_double(hist.action[e]);
        out << "\n";
    }
    return out.str();
}

inline std::string eval_table_csv(const EvalTable& table) {
    std::ostringstream out;
    out << "policy,noise_sigma,episode,total_reward,success,seed\n";
    for (const auto& r : table.rows)
        out << r.policy << ',' << fmt_double(r.noise_sigma) << ',' << r.episode << ','
            << fmt_double(r.total_reward) << ',' << (r.success ? 1 : 0) << ',' << r.seed << "\n";
    return out.str();
}

inline nlohmann::json eval_summary_json(const EvalTable& table) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : table.summary)
        j.push_back({{"policy", s.policy},
                     {"noise_sigma", s.noise_sigma},
                     {"mean_reward", s.mean_reward},
                     {"std_reward", s.std_reward},
                     {"success_rate", s.success_rate},
                     {"n_episodes", s.n_episodes}});
    return j;
}

// --- subcommand implementations; the CLI wraps these in exit-code handling ---

inline std::filesystem::path cmd_gen_data(const ExperimentConfig& cfg) {
    cfg.validate();
    auto env = make_env(cfg.env_id);
    auto ds = generate_dataset(*env, cfg.n_traj, cfg.train.seed);
    echo_config(cfg);
    const auto path = cfg.output_dir / "dataset.json";
    write_json_file(path, nlohmann::json(ds));
    return path;
}

inline TrajectoryDataset load_dataset(const ExperimentConfig& cfg) {
    const std::filesystem::path path = cfg.dataset_path.empty()
                                           ? cfg.output_dir / "dataset.json"
                                           : std::filesystem::path(cfg.dataset_path);
    if (!std::filesystem::exists(path))
        throw ConfigError("dataset file not found: " + path.string());
    return read_json_file(path).get<TrajectoryDataset>();
}

inline std::filesystem::path cmd_train(const ExperimentConfig& cfg,
                                       const std::string& model_kind) {
    cfg.validate();
    const auto data = load_dataset(cfg);
    echo_config(cfg);

    nlohmann::json model_json;
    LossHistory hist;
    if (model_kind == "dynamics") {
        auto [m, h] = train_dynamics(data, cfg.train);
        model_json = to_model_json(m, data.env_id, cfg.train);
        hist = std::move(h);
    } else if (model_kind == "denoiser") {
        auto [m, h] = train_denoiser(data, cfg.train);
        model_json = to_model_json(m, data.env_id, cfg.train);
        hist = std::move(h);
    } else {
        auto [m, h] = train_baseline(data, cfg.train, baseline_from_string(model_kind));
        model_json = to_model_json(m, data.env_id, cfg.train);
        hist = std::move(h);
    }
    const auto path = cfg.output_dir / ("model_" + model_kind + ".json");
    write_json_file(path, model_json);
    write_text_file(cfg.output_dir / ("loss_" + model_kind + ".csv"), loss_history_csv(hist));
    return path;
}

inline NamedPolicy load_policy(const nlohmann::json& spec) {
    const std::string name = spec.at("name").get<std::string>();
    auto require = [&](const char* key) -> std::filesystem::path {
        const std::string p = spec.at(key).get<std::string>();
        if (!std::filesystem::exists(p)) throw ConfigError("model file not found: " + p);
        return p;
    };
    if (spec.contains("dynamics")) {
        auto f = dynamics_from_json(read_json_file(require("dynamics")));
        auto d = denoiser_from_json(read_json_file(require("denoiser")));
        return make_decil_policy(f, d, name);
    }
    auto b = baseline_from_json(read_json_file(require("model")));
    return make_baseline_policy(b, name);
}

inline EvalTable cmd_evaluate(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.policies.empty()) throw ConfigError("evaluate: config.policies is empty");
    std::vector<NamedPolicy> policies;
    for (const auto& spec : cfg.policies) policies.push_back(load_policy(spec));
    auto env = make_env(cfg.env_id);

    auto table = evaluate(policies, *env, cfg.noise_levels, cfg.n_episodes,
                          split_seed(cfg.train.seed, "evaluate"));
    echo_config(cfg);
    write_text_file(cfg.output_dir / "results.csv", eval_table_csv(table));
    write_json_file(cfg.output_dir / "summary.json", eval_summary_json(table));
    return table;
}

struct Fig2Cell {
    double sigma_train = 0.0;
    std::uint64_t seed = 0;
    double mean_rho = 0.0;
    bool failed = false;
};

struct Fig2Result {
    std::vector<Fig2Cell> cells;                       // sigma-major, seed-minor
    std::vector<std::pair<double, double>> aggregate;  // (sigma, mean over seeds)
};

inline Fig2Result run_fig2(const ExperimentConfig& cfg) {
    cfg.validate();
    auto env = make_env(cfg.env_id);
    const int n_sigma = static_cast<int>(cfg.sigma_sweep.size());
    const int n_seeds = static_cast<int>(cfg.seeds.size());

    Fig2Result res;
    res.cells.resize(static_cast<std::size_t>(n_sigma) * n_seeds);
    parallel_for(n_sigma * n_seeds, [&](int idx) {
        const int si = idx / n_seeds;
        const int ki = idx % n_seeds;
        Fig2Cell cell;
        cell.sigma_train = cfg.sigma_sweep[si];
        cell.seed = cfg.seeds[ki];
        try {
            auto ds = generate_dataset(*env, cfg.n_traj, split_seed(cell.seed, "fig2/data"));
            TrainConfig tc = cfg.train;
            tc.seed = cell.seed;
            auto [f, hf] = train_dynamics(ds, tc);
            tc.sigma = cell.sigma_train;
            auto [d, hd] = train_denoiser(ds, tc);
            auto rec = sensitivity_ratio(f, d, ds, cfg.train.sigma_s, cfg.sensitivity_n_mc,
                                         split_seed(cell.seed, "fig2/sensitivity"));
            cell.mean_rho = rec.mean_rho;
        } catch (const NumericError&) {
            cell.failed = true;
        }
        res.cells[idx] = cell;
    });

    for (int si = 0; si < n_sigma; ++si) {
        double sum = 0.0;
        int n = 0;
        for (int ki = 0; ki < n_seeds; ++ki) {
            const auto& c = res.cells[si * n_seeds + ki];
            if (!c.failed) {
                sum += c.mean_rho;
                ++n;
            }
        }
        res.aggregate.emplace_back(cfg.sigma_sweep[si], n > 0 ? sum / n : 0.0);
    }
    return res;
}

inline Fig2Result cmd_fig2(const ExperimentConfig& cfg) {
    auto res = run_fig2(cfg);
    echo_config(cfg);
    std::ostringstream out;
    out << "sigma_train,seed,mean_rho,status\n";
    for (const auto& c : res.cells)
        out << fmt_double(c.sigma_train) << ',' << c.seed << ',' << fmt_double(c.mean_rho) << ','
            << (c.failed ? "failed" : "ok") << "\n";
    for (const auto& [sigma, rho] : res.aggregate)
        out << fmt_double(sigma) << ",aggregate," << fmt_double(rho) << ",ok\n";
    write_text_file(cfg.output_dir / "ratio_sweep.csv", out.str());
    return res;
}

struct AblationResult {
    // one EvalTable per training seed, policies decil and joint with paired
    // episode seeds
    std::vector<EvalTable> per_seed;
    // (noise, policy) -> mean reward pooled over seeds and episodes
    std::map<std::pair<double, std::string>, double> pooled_mean;
};

inline AblationResult run_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    auto env = make_env(cfg.env_id);
    const int n_seeds = static_cast<int>(cfg.seeds.size());

    AblationResult res;
    res.per_seed.resize(n_seeds);
    parallel_for(n_seeds, [&](int ki) {
        const std::uint64_t seed = cfg.seeds[ki];
        auto ds = generate_dataset(*env, cfg.n_traj, split_seed(seed, "ablation/data"));
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        auto [f, hf] = train_dynamics(ds, tc);
        auto [d, hd] = train_denoiser(ds, tc);
        auto [joint, hj] = train_baseline(ds, tc, BaselineVariant::Joint);
        std::vector<NamedPolicy> policies{make_decil_policy(f, d),
                                          make_baseline_policy(joint, "joint")};
        res.per_seed[ki] = evaluate(policies, *env, cfg.noise_levels, cfg.n_episodes,
                                    split_seed(seed, "ablation/eval"));
    });

    std::map<std::pair<double, std::string>, std::pair<double, int>> acc;
    for (const auto& table : res.per_seed)
        for (const auto& r : table.rows) {
            auto& a = acc[{r.noise_sigma, r.policy}];
            a.first += r.total_reward;
            a.second += 1;
        }
    for (const auto& [key, a] : acc) res.pooled_mean[key] = a.first / a.second;
    return res;
}

inline AblationResult cmd_ablation(const ExperimentConfig& cfg) {
    auto res = run_ablation(cfg);
    echo_config(cfg);
    std::ostringstream out;
    out << "policy,noise_sigma,train_seed,episode,total_reward,success\n";
    for (std::size_t ki = 0; ki < res.per_seed.size(); ++ki)
        for (const auto& r : res.per_seed[ki].rows)
            out << r.policy << ',' << fmt_double(r.noise_sigma) << ',' << cfg.seeds[ki] << ','
                << r.episode << ',' << fmt_double(r.total_reward) << ',' << (r.success ? 1 : 0)
                << "\n";
    write_text_file(cfg.output_dir / "ablation.csv", out.str());

    nlohmann::json jsum = nlohmann::json::array();
    for (const auto& [key, mean] : res.pooled_mean)
        jsum.push_back(
            {{"noise_sigma", key.first}, {"policy", key.second}, {"mean_reward", mean}});
    write_json_file(cfg.output_dir / "ablation_summary.json", jsum);
    return res;
}

inline nlohmann::json cmd_audit(const ExperimentConfig& cfg) {
    cfg.validate();
    auto env = make_env(cfg.env_id);
    auto ds = generate_dataset(*env, cfg.n_traj, split_seed(cfg.train.seed, "audit/data"));
    auto [f, hf] = train_dynamics(ds, cfg.train);
    auto [d, hd] = train_denoiser(ds, cfg.train);

    nlohmann::json report;

    // 1. chain-rule decomposition at probe states
    {
        const auto flat = ds.flat();
        const int n_probe = std::min<int>(50, static_cast<int>(flat.size()));
        nlohmann::json probes = nlohmann::json::array();
        bool all_pass = true;
        for (int k = 0; k < n_probe; ++k) {
            const auto& tr = *flat[(static_cast<long>(k) * flat.size()) / n_probe];
            auto rep = composite_jacobians(f, d, tr.x_t, 1e-4);
            const bool pass =
                rep.chain_rule_residual < 1e-4 * (1.0 + rep.fro_norms.at("J_h"));
            all_pass = all_pass && pass;
            nlohmann::json jp = rep;
            jp["pass"] = pass;
            probes.push_back(std::move(jp));
        }
        report["chain_rule"] = {{"probes", probes}, {"all_pass", all_pass}};
    }

    // 2. Jacobian-norm reduction vs initialization
    {
        DenoisingPolicy d0 = d;
        d0.net = init_net(d.net.layer_dims, Activation::Tanh,
                          split_seed(cfg.train.seed, "denoiser/init"));
        report["jacobian_norm_audit"] = jacobian_norm_audit(d0, d, ds, 100);
    }

    // 3. quadratic loss law for linear denoisers
    {
        nlohmann::json runs = nlohmann::json::array();
        for (double sigma : {0.005, 0.01, 0.02}) {
            const double rel = quadratic_loss_check(sigma, cfg.quad_n_mc,
                                                    split_seed(cfg.train.seed, "audit/quad"));
            runs.push_back({{"sigma", sigma}, {"relative_error", rel}});
        }
        report["quadratic_loss_check"] = runs;
    }

    // 4. environment error bound
    report["error_bound"] = error_bound_audit(*env, f, d, ds, 1e-4);

    // 5. vector-field export (2-D state spaces only)
    if (env->state_dim() == 2) {
        std::ostringstream csv;
        State x0(2);
        x0 << 1.0, std::sin(1.0) + 0.5;
        auto vf = vector_field_export(f, d, 0.0, 2.0 * std::numbers::pi, -1.8, 1.8, 20,
                                      SinusoidEnv::kDt, x0, 40, csv);
        write_text_file(cfg.output_dir / "vector_field.csv", csv.str());
        auto manifold_dist = [](const State& x) { return std::abs(x[1] - std::sin(x[0])); };
        report["vector_field"] = {
            {"rows", vf.total_rows},
            {"final_dist_f", manifold_dist(vf.traj_f.back())},
            {"final_dist_fd", manifold_dist(vf.traj_fd.back())}};
    } else {
        report["vector_field"] = {{"skipped", "state space is not 2-D"}};
    }

    echo_config(cfg);
    write_json_file(cfg.output_dir / "report.json", report);
    return report;
}

}  // namespace decil
