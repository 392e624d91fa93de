#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "etolab/harness.hpp"
#include "etolab/losses.hpp"
#include "etolab/rng.hpp"
#include "json.hpp"

namespace {

using etolab::harness::ExperimentConfig;

// Flags mirroring ExperimentConfig fields. Values are staged here and only
// fields whose flag was actually given override the config.
struct ConfigFlags {
    std::string config_path;
    ExperimentConfig staged;
    std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        auto opt = [&](const char* flag, auto& field, const char* help, auto setter) {
            CLI::Option* o = cmd->add_option(flag, field, help);
            overrides.emplace_back(o, setter);
        };
        auto& s = staged;
        opt("--seed", s.master_seed, "master seed",
            [&s](ExperimentConfig& c) { c.master_seed = s.master_seed; });
        opt("--data", s.data_dir, "dataset directory",
            [&s](ExperimentConfig& c) { c.data_dir = s.data_dir; });
        opt("--out", s.out_dir, "run output directory",
            [&s](ExperimentConfig& c) { c.out_dir = s.out_dir; });
        opt("--train", s.sizes.train, "training instructions",
            [&s](ExperimentConfig& c) { c.sizes.train = s.sizes.train; });
        opt("--test-seen", s.sizes.test_seen, "seen test instructions",
            [&s](ExperimentConfig& c) { c.sizes.test_seen = s.sizes.test_seen; });
        opt("--test-unseen", s.sizes.test_unseen, "unseen test instructions",
            [&s](ExperimentConfig& c) { c.sizes.test_unseen = s.sizes.test_unseen; });
        opt("--sft-lr", s.sft.learning_rate, "SFT learning rate",
            [&s](ExperimentConfig& c) { c.sft.learning_rate = s.sft.learning_rate; });
        opt("--sft-epochs", s.sft.epochs, "SFT epochs",
            [&s](ExperimentConfig& c) { c.sft.epochs = s.sft.epochs; });
        opt("--sft-batch", s.sft.batch_size, "SFT batch size",
            [&s](ExperimentConfig& c) { c.sft.batch_size = s.sft.batch_size; });
        opt("--dpo-lr", s.dpo.learning_rate, "DPO learning rate",
            [&s](ExperimentConfig& c) { c.dpo.learning_rate = s.dpo.learning_rate; });
        opt("--dpo-epochs", s.dpo.epochs, "DPO epochs",
            [&s](ExperimentConfig& c) { c.dpo.epochs = s.dpo.epochs; });
        opt("--dpo-batch", s.dpo.batch_size, "DPO batch size",
            [&s](ExperimentConfig& c) { c.dpo.batch_size = s.dpo.batch_size; });
        opt("--beta", s.dpo.beta, "DPO beta",
            [&s](ExperimentConfig& c) { c.dpo.beta = s.dpo.beta; });
        opt("--iterations", s.iterations, "exploration-training iterations",
            [&s](ExperimentConfig& c) { c.iterations = s.iterations; });
        opt("--explore-temperature", s.explore_temperature, "exploration temperature",
            [&s](ExperimentConfig& c) { c.explore_temperature = s.explore_temperature; });
        opt("--n", s.best_of_n, "samples for best-of-n",
            [&s](ExperimentConfig& c) { c.best_of_n = s.best_of_n; });
        opt("--rft-threshold", s.rft.success_threshold, "RFT reward threshold",
            [&s](ExperimentConfig& c) { c.rft.success_threshold = s.rft.success_threshold; });
        opt("--rft-samples", s.rft.samples_per_instruction, "RFT samples per instruction",
            [&s](ExperimentConfig& c) {
                c.rft.samples_per_instruction = s.rft.samples_per_instruction;
            });
        opt("--rft-epochs", s.rft.epochs, "RFT SFT epochs",
            [&s](ExperimentConfig& c) { c.rft.epochs = s.rft.epochs; });
        opt("--pg-lr", s.pg.learning_rate, "policy-gradient learning rate",
            [&s](ExperimentConfig& c) { c.pg.learning_rate = s.pg.learning_rate; });
        opt("--pg-beta", s.pg.beta, "policy-gradient KL weight",
            [&s](ExperimentConfig& c) { c.pg.beta = s.pg.beta; });
        opt("--pg-epochs", s.pg.epochs, "policy-gradient epochs",
            [&s](ExperimentConfig& c) { c.pg.epochs = s.pg.epochs; });
        opt("--self-play-samples", s.self_play.samples_per_instruction,
            "self-play samples per instruction", [&s](ExperimentConfig& c) {
                c.self_play.samples_per_instruction = s.self_play.samples_per_instruction;
            });
        env_opt = cmd->add_option("--env", s.env, "toyshop | toylab | toyhouse");
        method_opt = cmd->add_option("--method", s.method, "training method");
    }

    ExperimentConfig build() const {
        std::string file_text;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw etolab::harness::ConfigError("cannot open " + config_path);
            std::stringstream ss;
            ss << in.rdbuf();
            file_text = ss.str();
        }
        std::string env_name = "toyshop";
        std::string method_name = "eto";
        if (!file_text.empty()) {
            nlohmann::json j = nlohmann::json::parse(file_text);
            if (j.contains("env")) env_name = j["env"].get<std::string>();
            if (j.contains("method")) method_name = j["method"].get<std::string>();
        }
        if (env_opt->count()) env_name = staged.env;
        if (method_opt->count()) method_name = staged.method;
        ExperimentConfig cfg = ExperimentConfig::defaults(env_name, method_name);
        if (!file_text.empty()) {
            cfg.merge_json(file_text);
            cfg.env = env_name;
            cfg.method = method_name;
        }
        for (const auto& [option, apply] : overrides)
            if (option->count()) apply(cfg);
        return cfg;
    }

    CLI::Option* env_opt = nullptr;
    CLI::Option* method_opt = nullptr;
};

int run_grad_check(std::uint64_t seed) {
    using namespace etolab;
    core::Vocabulary vocab = core::Vocabulary::build({"a", "b", "c", "d", "e", "f"});
    policy::Arch arch{vocab.size(), 4, 8, 8};
    Rng rng(derive_seed(seed, "cli-grad-check"));
    double worst_sft = 0.0, worst_dpo = 0.0, worst_step = 0.0;
    for (int round = 0; round < 20; ++round) {
        policy::PolicyParams params = policy::init_params(arch, rng.next());
        auto make_traj = [&](std::int64_t traj_seed) {
            Rng trng(derive_seed(static_cast<std::uint64_t>(traj_seed), "traj"));
            core::Trajectory t;
            t.instruction.id = "fixture";
            t.instruction.env_name = "fixture";
            t.instruction.tokens = {vocab.lookup("a"), vocab.lookup("b")};
            int steps = 1 + trng.index(3);
            for (int s = 0; s < steps; ++s) {
                core::Step step;
                int len = 1 + trng.index(3);
                for (int k = 0; k < len; ++k) step.action_tokens.push_back(6 + trng.index(6));
                step.action_tokens.push_back(vocab.specials().action_end);
                if (s + 1 < steps) {
                    std::vector<int> obs;
                    for (int k = 0; k < 2; ++k) obs.push_back(6 + trng.index(6));
                    step.observation_tokens = obs;
                }
                t.steps.push_back(std::move(step));
            }
            t.reward = 1.0;
            return t;
        };
        core::Trajectory expert = make_traj(round * 2);
        core::Trajectory worse = make_traj(round * 2 + 1);
        worse.reward = 0.25;
        std::vector<core::FlatSequence> batch = {core::flatten(expert, vocab),
                                                 core::flatten(worse, vocab)};
        worst_sft = std::max(
            worst_sft,
            losses::grad_check(
                [&](const policy::PolicyParams& p) { return losses::sft_loss(p, batch, vocab); },
                params, 1e-5, 200, rng.next()));

        losses::DpoConfig dpo_cfg{0.1, policy::init_params(arch, rng.next())};
        std::vector<core::TrajectoryPair> pairs = {{expert.instruction, expert, worse}};
        worst_dpo = std::max(
            worst_dpo,
            losses::grad_check(
                [&](const policy::PolicyParams& p) {
                    return losses::dpo_loss(p, dpo_cfg, pairs, vocab);
                },
                params, 1e-5, 200, rng.next()));

        losses::StepwiseItem item;
        item.instruction = expert.instruction;
        item.prefix = {expert.steps.front()};
        item.prefix.front().observation_tokens = std::vector<int>{6, 7};
        item.winner_action = {6, 7, vocab.specials().action_end};
        item.loser_action = {8, vocab.specials().action_end};
        std::vector<losses::StepwiseItem> items = {item};
        worst_step = std::max(
            worst_step,
            losses::grad_check(
                [&](const policy::PolicyParams& p) {
                    return losses::stepwise_dpo_loss(p, dpo_cfg, items, vocab);
                },
                params, 1e-5, 200, rng.next()));
    }
    std::cout << "sft_loss        max rel err " << worst_sft << '\n';
    std::cout << "dpo_loss        max rel err " << worst_dpo << '\n';
    std::cout << "stepwise_dpo    max rel err " << worst_step << '\n';
    bool ok = worst_sft < 1e-4 && worst_dpo < 1e-4 && worst_step < 1e-4;
    std::cout << (ok ? "gradients verified" : "GRADIENT CHECK FAILED") << '\n';
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajectory-preference training on toy text environments"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate instruction splits and expert data");
    bool force = false;
    gen->add_flag("--force", force, "overwrite an existing dataset directory");
    ConfigFlags gen_flags;
    gen_flags.attach(gen);

    auto* run_cmd = app.add_subcommand("run", "run one experiment end to end");
    ConfigFlags run_flags;
    run_flags.attach(run_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test splits");
    std::string checkpoint;
    eval_cmd->add_option("--checkpoint", checkpoint, "policy checkpoint")->required();
    ConfigFlags eval_flags;
    eval_flags.attach(eval_cmd);

    auto* tables = app.add_subcommand("emit-tables", "aggregate run reports into csv tables");
    std::vector<std::string> report_paths;
    std::string tables_out = "tables";
    tables->add_option("reports", report_paths, "metrics.json files")->required();
    tables->add_option("--out", tables_out, "output directory");

    auto* gc = app.add_subcommand("grad-check", "finite-difference check of the loss gradients");
    std::uint64_t gc_seed = 0;
    gc->add_option("--seed", gc_seed, "fixture seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            etolab::harness::gen_data(gen_flags.build(), force);
            return 0;
        }
        if (run_cmd->parsed()) {
            etolab::harness::MetricsReport report = etolab::harness::run(run_flags.build());
            const auto& fin = report.final_phase();
            std::cout << report.method << " on " << report.env << ": seen avg reward "
                      << fin.seen.avg_reward << ", unseen avg reward " << fin.unseen.avg_reward
                      << '\n';
            return 0;
        }
        if (eval_cmd->parsed()) {
            etolab::harness::MetricsReport report =
                etolab::harness::eval_checkpoint(checkpoint, eval_flags.build());
            std::cout << report.to_json() << '\n';
            return 0;
        }
        if (tables->parsed()) {
            std::vector<etolab::harness::MetricsReport> reports;
            for (const auto& path : report_paths) {
                std::ifstream in(path);
                if (!in) throw etolab::harness::ConfigError("cannot open " + path);
                std::stringstream ss;
                ss << in.rdbuf();
                reports.push_back(etolab::harness::MetricsReport::from_json(ss.str()));
            }
            etolab::harness::emit_tables(reports, tables_out);
            return 0;
        }
        if (gc->parsed()) return run_grad_check(gc_seed);
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = e.what();
        std::cerr << err.dump() << '\n';
        return 1;
    }
    return 0;
}
