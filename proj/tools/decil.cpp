#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "decil/experiments.hpp"
#include "decil/io.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Experiment config JSON")->required();
    cmd->add_option("--seed", args.seed, "Override the root training seed");
    cmd->add_option("--out", args.out_dir, "Override the output directory");
    cmd->add_option("--override", args.overrides, "Dotted-path override, KEY=VALUE (repeatable)");
}

decil::ExperimentConfig resolve_config(const CommonArgs& args) {
    if (!std::filesystem::exists(args.config_path))
        throw decil::ConfigError("config file not found: " + args.config_path);
    nlohmann::json j = decil::read_json_file(args.config_path);
    for (const auto& kv : args.overrides) decil::apply_override(j, kv);
    if (args.seed >= 0) j["train"]["seed"] = static_cast<std::uint64_t>(args.seed);
    if (!args.out_dir.empty()) j["output_dir"] = args.out_dir;
    return j.get<decil::ExperimentConfig>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeCIL: denoising-based contractive imitation learning experiments"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, fig2_args, abl_args, audit_args;
    std::string model_kind;

    add_common(app.add_subcommand("gen-data", "Generate an expert trajectory dataset"),
               gen_args);
    auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset file");
    add_common(train_cmd, train_args);
    train_cmd
        ->add_option("--model-kind", model_kind,
                     "One of: dynamics, denoiser, bc, noisy_bc, joint")
        ->required();
    add_common(app.add_subcommand("evaluate", "Evaluate policies across noise levels"),
               eval_args);
    add_common(app.add_subcommand("fig2", "Sensitivity-ratio sweep over training sigma"),
               fig2_args);
    add_common(app.add_subcommand("ablation", "DeCIL vs joint-prediction baseline"), abl_args);
    add_common(app.add_subcommand("audit", "Numerical theory audits"), audit_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("gen-data")) {
            auto cfg = resolve_config(gen_args);
            const auto path = decil::cmd_gen_data(cfg);
            auto ds = decil::read_json_file(path).get<decil::TrajectoryDataset>();
            std::cout << "wrote " << path.string() << " (" << ds.n_transitions()
                      << " transitions, env " << ds.env_id << ")\n";
        } else if (app.got_subcommand("train")) {
            auto cfg = resolve_config(train_args);
            const auto path = decil::cmd_train(cfg, model_kind);
            std::cout << "wrote " << path.string() << "\n";
        } else if (app.got_subcommand("evaluate")) {
            auto cfg = resolve_config(eval_args);
            auto table = decil::cmd_evaluate(cfg);
            std::cout << "wrote " << (cfg.output_dir / "results.csv").string() << " ("
                      << table.rows.size() << " rows)\n";
        } else if (app.got_subcommand("fig2")) {
            auto cfg = resolve_config(fig2_args);
            decil::cmd_fig2(cfg);
            std::cout << "wrote " << (cfg.output_dir / "ratio_sweep.csv").string() << "\n";
        } else if (app.got_subcommand("ablation")) {
            auto cfg = resolve_config(abl_args);
            decil::cmd_ablation(cfg);
            std::cout << "wrote " << (cfg.output_dir / "ablation.csv").string() << "\n";
        } else if (app.got_subcommand("audit")) {
            auto cfg = resolve_config(audit_args);
            decil::cmd_audit(cfg);
            std::cout << "wrote " << (cfg.output_dir / "report.json").string() << "\n";
        }
    } catch (const decil::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
