#include "etolab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "etolab/rng.hpp"
#include "json.hpp"

namespace etolab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << text;
}

json sizes_to_json(const DatasetSizes& s) {
    return {{"train", s.train}, {"test_seen", s.test_seen}, {"test_unseen", s.test_unseen}};
}

json sft_to_json(const algorithms::SftConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
            {"warmup_fraction", c.warmup_fraction}, {"batch_size", c.batch_size},
            {"epochs", c.epochs}};
}

json dpo_to_json(const algorithms::DpoTrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
            {"warmup_fraction", c.warmup_fraction}, {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"beta", c.beta}};
}

template <typename T>
void maybe(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void sft_from_json(const json& j, algorithms::SftConfig& c) {
    maybe(j, "learning_rate", c.learning_rate);
    maybe(j, "weight_decay", c.weight_decay);
    maybe(j, "warmup_fraction", c.warmup_fraction);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "epochs", c.epochs);
}

void dpo_from_json(const json& j, algorithms::DpoTrainConfig& c) {
    maybe(j, "learning_rate", c.learning_rate);
    maybe(j, "weight_decay", c.weight_decay);
    maybe(j, "warmup_fraction", c.warmup_fraction);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "epochs", c.epochs);
    maybe(j, "beta", c.beta);
}

json split_to_json(const SplitMetrics& m) {
    json records = json::array();
    for (const auto& r : m.records)
        records.push_back({{"id", r.id}, {"reward", r.reward}, {"success", r.success},
                           {"steps", r.steps}});
    return {{"avg_reward", m.avg_reward}, {"success_rate", m.success_rate},
            {"records", std::move(records)}};
}

SplitMetrics split_from_json(const json& j) {
    SplitMetrics m;
    m.avg_reward = j.at("avg_reward").get<double>();
    m.success_rate = j.at("success_rate").get<double>();
    for (const auto& r : j.at("records")) {
        InstructionMetric rec;
        rec.id = r.at("id").get<std::string>();
        rec.reward = r.at("reward").get<double>();
        rec.success = r.at("success").get<bool>();
        rec.steps = r.at("steps").get<int>();
        m.records.push_back(std::move(rec));
    }
    return m;
}

std::string instruction_line(const core::Instruction& instr, const core::Vocabulary& vocab,
                             std::int64_t seed) {
    json j;
    j["id"] = instr.id;
    j["env"] = instr.env_name;
    j["variation"] = core::to_string(instr.variation);
    j["seed"] = seed;
    j["text"] = vocab.detokenize(instr.tokens);
    return j.dump();
}

std::vector<core::Instruction> load_instructions(const envs::EnvSpec& spec,
                                                 const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path + " (run gen-data first)");
    std::vector<core::Instruction> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        out.push_back(envs::instruction_from_id(spec, j.at("id").get<std::string>()));
    }
    return out;
}

policy::Arch arch_for(const ExperimentConfig& config, const envs::EnvSpec& spec) {
    policy::Arch arch;
    arch.vocab_size = spec.vocab.size();
    arch.embed_dim = config.arch.embed_dim;
    arch.window = config.arch.window;
    arch.hidden = config.arch.hidden;
    return arch;
}

std::string env_data_dir(const ExperimentConfig& config) {
    return resolve_output_path(config.data_dir) + "/" + config.env;
}

void write_trajectories(const std::string& path, std::span<const core::Trajectory> trajectories,
                        const core::Vocabulary& vocab) {
    std::vector<core::TrajectoryRecord> records;
    records.reserve(trajectories.size());
    for (const auto& t : trajectories) records.push_back(core::to_record(t, vocab));
    core::write_records(path, records);
}

}  // namespace

std::string resolve_output_path(const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    const char* root = std::getenv("ETOLAB_OUT");
    if (root == nullptr || *root == '\0') return path;
    return std::string(root) + "/" + path;
}

const std::vector<std::string>& ExperimentConfig::method_names() {
    static const std::vector<std::string> names = {
        "sft",          "eto",           "rft",
        "best_of_n",    "pg",            "self_play_eto",
        "self_play_rft", "self_play_rft_eto", "stepwise",
        "mixture"};
    return names;
}

ExperimentConfig ExperimentConfig::defaults(const std::string& env, const std::string& method) {
    const auto& names = method_names();
    if (std::find(names.begin(), names.end(), method) == names.end())
        throw ConfigError("unknown method: " + method);
    ExperimentConfig c;
    c.env = env;
    c.method = method;
    c.sft.learning_rate = 2e-3;
    c.sft.batch_size = 64;
    c.dpo.epochs = 3;
    c.dpo.batch_size = 32;
    if (env == "toyshop") {
        c.sft.epochs = 60;
        c.dpo.learning_rate = 3e-4;
        c.dpo.beta = 0.1;
        c.iterations = 2;
        c.rft.success_threshold = 0.7;
    } else if (env == "toylab") {
        c.sft.epochs = 60;
        c.dpo.learning_rate = 1.5e-4;
        c.dpo.beta = 0.1;
        c.iterations = 2;
        c.rft.success_threshold = 0.7;
    } else if (env == "toyhouse") {
        c.sft.epochs = 60;
        c.dpo.learning_rate = 1.5e-4;
        c.dpo.beta = 0.5;
        c.iterations = 1;
        c.rft.success_threshold = 1.0;
    } else {
        throw ConfigError("unknown environment: " + env);
    }
    c.pg.beta = c.dpo.beta;
    c.self_play.success_threshold = c.rft.success_threshold;
    return c;
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["env"] = env;
    j["method"] = method;
    j["sizes"] = sizes_to_json(sizes);
    j["arch"] = {{"embed_dim", arch.embed_dim}, {"window", arch.window}, {"hidden", arch.hidden}};
    j["sft"] = sft_to_json(sft);
    j["dpo"] = dpo_to_json(dpo);
    j["iterations"] = iterations;
    j["explore_temperature"] = explore_temperature;
    j["rollouts_per_instruction"] = rollouts_per_instruction;
    j["accumulate_pairs"] = accumulate_pairs;
    j["stepwise_lr_scale"] = stepwise_lr_scale;
    j["stepwise_beta"] = stepwise_beta;
    j["rft"] = {{"samples_per_instruction", rft.samples_per_instruction},
                {"temperature", rft.temperature},
                {"success_threshold", rft.success_threshold},
                {"epochs", rft.epochs}};
    j["pg"] = {{"learning_rate", pg.learning_rate}, {"beta", pg.beta},
               {"clip_norm", pg.clip_norm},         {"batch_size", pg.batch_size},
               {"epochs", pg.epochs},               {"temperature", pg.temperature}};
    j["self_play"] = {{"samples_per_instruction", self_play.samples_per_instruction},
                      {"temperature", self_play.temperature},
                      {"success_threshold", self_play.success_threshold}};
    j["best_of_n"] = best_of_n;
    j["master_seed"] = master_seed;
    j["data_dir"] = data_dir;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

void ExperimentConfig::merge_json(const std::string& text) {
    json j = json::parse(text);
    maybe(j, "env", env);
    maybe(j, "method", method);
    if (j.contains("sizes")) {
        maybe(j["sizes"], "train", sizes.train);
        maybe(j["sizes"], "test_seen", sizes.test_seen);
        maybe(j["sizes"], "test_unseen", sizes.test_unseen);
    }
    if (j.contains("arch")) {
        maybe(j["arch"], "embed_dim", arch.embed_dim);
        maybe(j["arch"], "window", arch.window);
        maybe(j["arch"], "hidden", arch.hidden);
    }
    if (j.contains("sft")) sft_from_json(j["sft"], sft);
    if (j.contains("dpo")) dpo_from_json(j["dpo"], dpo);
    maybe(j, "iterations", iterations);
    maybe(j, "explore_temperature", explore_temperature);
    maybe(j, "rollouts_per_instruction", rollouts_per_instruction);
    maybe(j, "accumulate_pairs", accumulate_pairs);
    maybe(j, "stepwise_lr_scale", stepwise_lr_scale);
    maybe(j, "stepwise_beta", stepwise_beta);
    if (j.contains("rft")) {
        maybe(j["rft"], "samples_per_instruction", rft.samples_per_instruction);
        maybe(j["rft"], "temperature", rft.temperature);
        maybe(j["rft"], "success_threshold", rft.success_threshold);
        maybe(j["rft"], "epochs", rft.epochs);
    }
    if (j.contains("pg")) {
        maybe(j["pg"], "learning_rate", pg.learning_rate);
        maybe(j["pg"], "beta", pg.beta);
        maybe(j["pg"], "clip_norm", pg.clip_norm);
        maybe(j["pg"], "batch_size", pg.batch_size);
        maybe(j["pg"], "epochs", pg.epochs);
        maybe(j["pg"], "temperature", pg.temperature);
    }
    if (j.contains("self_play")) {
        maybe(j["self_play"], "samples_per_instruction", self_play.samples_per_instruction);
        maybe(j["self_play"], "temperature", self_play.temperature);
        maybe(j["self_play"], "success_threshold", self_play.success_threshold);
    }
    maybe(j, "best_of_n", best_of_n);
    maybe(j, "master_seed", master_seed);
    maybe(j, "data_dir", data_dir);
    maybe(j, "out_dir", out_dir);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    std::string env = j.value("env", "toyshop");
    std::string method = j.value("method", "eto");
    ExperimentConfig c = defaults(env, method);
    c.merge_json(text);
    return c;
}

const PhaseMetrics& MetricsReport::final_phase() const {
    if (phases.empty()) throw ConfigError("report has no phases");
    return phases.back();
}

std::string MetricsReport::to_json() const {
    json j;
    j["env"] = env;
    j["method"] = method;
    j["master_seed"] = master_seed;
    json phase_array = json::array();
    for (const auto& p : phases)
        phase_array.push_back({{"phase", p.phase},
                               {"iteration", p.iteration},
                               {"seen", split_to_json(p.seen)},
                               {"unseen", split_to_json(p.unseen)}});
    j["phases"] = std::move(phase_array);
    json curve_array = json::array();
    for (const auto& c : curves) curve_array.push_back({{"id", c.id}, {"values", c.values}});
    j["curves"] = std::move(curve_array);
    j["pair_counts"] = pair_counts;
    j["first_batch_losses"] = first_batch_losses;
    j["notes"] = notes;
    return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    json j = json::parse(text);
    MetricsReport r;
    r.env = j.at("env").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& p : j.at("phases")) {
        PhaseMetrics pm;
        pm.phase = p.at("phase").get<std::string>();
        pm.iteration = p.at("iteration").get<int>();
        pm.seen = split_from_json(p.at("seen"));
        pm.unseen = split_from_json(p.at("unseen"));
        r.phases.push_back(std::move(pm));
    }
    for (const auto& c : j.at("curves")) {
        CurveData cd;
        cd.id = c.at("id").get<std::string>();
        cd.values = c.at("values").get<std::vector<double>>();
        r.curves.push_back(std::move(cd));
    }
    r.pair_counts = j.at("pair_counts").get<std::vector<int>>();
    r.first_batch_losses = j.at("first_batch_losses").get<std::vector<double>>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
}

void gen_data(const ExperimentConfig& config, bool force) {
    envs::EnvSpec spec = envs::make_spec(config.env);
    std::string dir = env_data_dir(config);
    if (fs::exists(dir)) {
        if (!force) throw ConfigError(dir + " already exists; pass --force to regenerate");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);

    std::vector<core::Trajectory> experts;
    auto write_split = [&](const std::string& name, core::Split split, std::int64_t first_seed,
                           int count, bool with_experts) {
        std::ofstream out(dir + "/" + name);
        for (int i = 0; i < count; ++i) {
            std::int64_t seed = first_seed + i;
            auto [instr, goal] = envs::generate_instruction(spec, split, seed);
            out << instruction_line(instr, spec.vocab, seed) << '\n';
            if (with_experts) experts.push_back(envs::oracle_expert(spec, instr, goal));
        }
    };

    write_split("instructions_train.jsonl", core::Split::seen, 0, config.sizes.train, true);
    write_split("instructions_test_seen.jsonl", core::Split::seen, config.sizes.train,
                config.sizes.test_seen, false);
    write_split("instructions_test_unseen.jsonl", core::Split::unseen, spec.unseen_seeds.lo,
                config.sizes.test_unseen, false);
    write_trajectories(dir + "/expert_train.jsonl", experts, spec.vocab);
}

Dataset load_dataset(const envs::EnvSpec& spec, const ExperimentConfig& config) {
    std::string dir = env_data_dir(config);
    Dataset data;
    data.train = load_instructions(spec, dir + "/instructions_train.jsonl");
    data.test_seen = load_instructions(spec, dir + "/instructions_test_seen.jsonl");
    data.test_unseen = load_instructions(spec, dir + "/instructions_test_unseen.jsonl");

    std::set<std::string> train_ids;
    for (const auto& i : data.train) train_ids.insert(i.id);
    for (const auto& i : data.test_seen)
        if (train_ids.count(i.id))
            throw ConfigError("test instruction " + i.id + " overlaps the training split");
    for (const auto& i : data.test_unseen)
        if (train_ids.count(i.id))
            throw ConfigError("test instruction " + i.id + " overlaps the training split");

    for (const auto& record : core::read_records(dir + "/expert_train.jsonl"))
        data.experts.push_back(envs::load_and_verify(spec, record));
    return data;
}

SplitMetrics evaluate(const policy::PolicyParams& params, const envs::EnvSpec& spec,
                      std::span<const core::Instruction> instructions,
                      std::vector<CurveData>* curves) {
    SplitMetrics metrics;
    double reward_sum = 0.0;
    int successes = 0;
    for (const auto& instr : instructions) {
        policy::RolloutConfig rc;  // greedy, temperature 0
        core::Trajectory rolled = policy::rollout(params, spec, instr, rc);
        envs::ReplayOutcome outcome = envs::replay(spec, rolled);
        InstructionMetric m;
        m.id = instr.id;
        m.reward = outcome.reward;
        m.success = outcome.success;
        m.steps = static_cast<int>(rolled.steps.size());
        reward_sum += m.reward;
        successes += m.success ? 1 : 0;
        metrics.records.push_back(std::move(m));
        if (curves) curves->push_back({instr.id, outcome.curve});
    }
    if (!instructions.empty()) {
        metrics.avg_reward = reward_sum / static_cast<double>(instructions.size());
        metrics.success_rate = static_cast<double>(successes) /
                               static_cast<double>(instructions.size());
    }
    return metrics;
}

MetricsReport run(const ExperimentConfig& config) {
    envs::EnvSpec spec = envs::make_spec(config.env);
    Dataset data = load_dataset(spec, config);

    std::string out_dir = resolve_output_path(config.out_dir);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        fs::create_directories(out_dir + "/checkpoints");
        fs::create_directories(out_dir + "/trajectories");
        write_text(out_dir + "/config.json", config.to_json());
    }
    auto started = std::chrono::steady_clock::now();

    MetricsReport report;
    report.env = config.env;
    report.method = config.method;
    report.master_seed = config.master_seed;

    auto record_phase = [&](const std::string& phase, int iteration,
                            const policy::PolicyParams& params) {
        PhaseMetrics pm;
        pm.phase = phase;
        pm.iteration = iteration;
        pm.seen = evaluate(params, spec, data.test_seen);
        pm.unseen = evaluate(params, spec, data.test_unseen);
        report.phases.push_back(std::move(pm));
        if (!out_dir.empty())
            policy::save_checkpoint(out_dir + "/checkpoints/" + phase + "-" +
                                        std::to_string(iteration) + ".ckpt",
                                    params, spec.vocab.hash());
    };

    algorithms::SftConfig sft_cfg = config.sft;
    sft_cfg.seed = derive_seed(config.master_seed, "sft");
    algorithms::DpoTrainConfig dpo_cfg = config.dpo;

    policy::PolicyParams params =
        policy::init_params(arch_for(config, spec), derive_seed(config.master_seed, "init"));
    record_phase("init", 0, params);

    const std::string& method = config.method;
    if (method == "sft") {
        params = algorithms::behavioral_cloning(params, data.experts, spec.vocab, sft_cfg);
        record_phase("bc", 0, params);
    } else if (method == "eto" || method == "stepwise" || method == "mixture") {
        algorithms::EtoConfig eto_cfg;
        eto_cfg.iterations = config.iterations;
        eto_cfg.bc = sft_cfg;
        eto_cfg.dpo = dpo_cfg;
        eto_cfg.explore_temperature = config.explore_temperature;
        eto_cfg.rollouts_per_instruction = config.rollouts_per_instruction;
        eto_cfg.accumulate_pairs = config.accumulate_pairs;
        eto_cfg.seed = derive_seed(config.master_seed, "eto");
        if (method == "stepwise") {
            eto_cfg.level = algorithms::PairLevel::stepwise;
            eto_cfg.dpo.learning_rate = config.dpo.learning_rate * config.stepwise_lr_scale;
            eto_cfg.dpo.beta = config.stepwise_beta;
        } else if (method == "mixture") {
            eto_cfg.level = algorithms::PairLevel::mixture;
        }
        algorithms::EtoResult result =
            algorithms::eto(params, data.experts, spec, eto_cfg, record_phase);
        params = std::move(result.params);
        report.pair_counts = result.pair_counts;
        report.first_batch_losses = result.first_batch_losses;
        if (result.stopped_early) report.notes.push_back(result.note);
        if (!out_dir.empty())
            write_trajectories(out_dir + "/trajectories/explore_rollouts.jsonl",
                               result.explore_rollouts, spec.vocab);
    } else if (method == "rft") {
        params = algorithms::behavioral_cloning(params, data.experts, spec.vocab, sft_cfg);
        record_phase("bc", 0, params);
        algorithms::RftConfig rft_cfg;
        rft_cfg.samples_per_instruction = config.rft.samples_per_instruction;
        rft_cfg.temperature = config.rft.temperature;
        rft_cfg.success_threshold = config.rft.success_threshold;
        rft_cfg.sft = sft_cfg;
        rft_cfg.sft.epochs = config.rft.epochs;
        rft_cfg.sft.seed = derive_seed(config.master_seed, "rft-sft");
        rft_cfg.seed = derive_seed(config.master_seed, "rft");
        algorithms::RftResult result = algorithms::rft(params, data.experts, spec, rft_cfg);
        params = std::move(result.params);
        report.notes.push_back("rft kept " + std::to_string(result.kept.size()) +
                               " rollouts; augmented size " +
                               std::to_string(result.augmented_size));
        record_phase("rft", 1, params);
        if (!out_dir.empty())
            write_trajectories(out_dir + "/trajectories/rft_kept.jsonl", result.kept, spec.vocab);
    } else if (method == "best_of_n") {
        params = algorithms::behavioral_cloning(params, data.experts, spec.vocab, sft_cfg);
        record_phase("bc", 0, params);
        // best-of-n evaluation phase: sampled selection instead of greedy
        PhaseMetrics pm;
        pm.phase = "best_of_n";
        pm.iteration = 1;
        auto bofn_eval = [&](std::span<const core::Instruction> instructions) {
            SplitMetrics metrics;
            double reward_sum = 0.0;
            int successes = 0;
            for (std::size_t i = 0; i < instructions.size(); ++i) {
                core::Trajectory best = algorithms::best_of_n(
                    params, spec, instructions[i], config.best_of_n,
                    derive_seed(config.master_seed, "bofn-eval", i));
                envs::ReplayOutcome outcome = envs::replay(spec, best);
                InstructionMetric m{instructions[i].id, outcome.reward, outcome.success,
                                    static_cast<int>(best.steps.size())};
                reward_sum += m.reward;
                successes += m.success ? 1 : 0;
                metrics.records.push_back(std::move(m));
            }
            if (!instructions.empty()) {
                metrics.avg_reward = reward_sum / static_cast<double>(instructions.size());
                metrics.success_rate =
                    static_cast<double>(successes) / static_cast<double>(instructions.size());
            }
            return metrics;
        };
        pm.seen = bofn_eval(data.test_seen);
        pm.unseen = bofn_eval(data.test_unseen);
        report.phases.push_back(std::move(pm));
    } else if (method == "pg") {
        params = algorithms::behavioral_cloning(params, data.experts, spec.vocab, sft_cfg);
        record_phase("bc", 0, params);
        algorithms::PgConfig pg_cfg;
        pg_cfg.learning_rate = config.pg.learning_rate;
        pg_cfg.beta = config.pg.beta;
        pg_cfg.clip_norm = config.pg.clip_norm;
        pg_cfg.batch_size = config.pg.batch_size;
        pg_cfg.epochs = config.pg.epochs;
        pg_cfg.temperature = config.pg.temperature;
        pg_cfg.seed = derive_seed(config.master_seed, "pg");
        std::vector<core::Instruction> train_instructions;
        for (const auto& e : data.experts) train_instructions.push_back(e.instruction);
        algorithms::TrainStats stats;
        params = algorithms::pg_baseline(params, train_instructions, spec, pg_cfg, &stats);
        if (stats.aborted) report.notes.push_back("pg aborted: " + stats.diagnostic);
        record_phase("pg", 1, params);
    } else if (method == "self_play_eto" || method == "self_play_rft" ||
               method == "self_play_rft_eto") {
        algorithms::SelfPlayConfig sp_cfg;
        sp_cfg.mode = method == "self_play_eto"
                          ? algorithms::SelfPlayMode::eto_only
                          : (method == "self_play_rft" ? algorithms::SelfPlayMode::rft_only
                                                       : algorithms::SelfPlayMode::rft_then_eto);
        sp_cfg.samples_per_instruction = config.self_play.samples_per_instruction;
        sp_cfg.temperature = config.self_play.temperature;
        sp_cfg.success_threshold = config.self_play.success_threshold;
        sp_cfg.sft = sft_cfg;
        sp_cfg.sft.seed = derive_seed(config.master_seed, "selfplay-sft");
        sp_cfg.dpo = dpo_cfg;
        sp_cfg.seed = derive_seed(config.master_seed, "selfplay");
        std::vector<core::Instruction> train_instructions;
        for (const auto& e : data.experts) train_instructions.push_back(e.instruction);
        algorithms::SelfPlayResult result =
            algorithms::self_play(params, train_instructions, spec, sp_cfg, record_phase);
        params = std::move(result.params);
        if (result.empty_training_set)
            report.notes.push_back("self-play produced an empty training set");
        report.notes.push_back("self-play kept=" + std::to_string(result.kept_count) +
                               " pairs=" + std::to_string(result.pair_count));
    } else {
        throw ConfigError("unknown method: " + method);
    }

    // reward-vs-step curves for the final policy on the seen test set
    if (config.env == "toylab") {
        std::vector<CurveData> curves;
        evaluate(params, spec, data.test_seen, &curves);
        report.curves = std::move(curves);
    }

    if (!out_dir.empty()) {
        policy::save_checkpoint(out_dir + "/checkpoints/final.ckpt", params, spec.vocab.hash());
        write_text(out_dir + "/metrics.json", report.to_json());
        auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
        json timing;
        timing["wall_clock_seconds"] = elapsed.count();
        write_text(out_dir + "/timing.json", timing.dump(2));
    }
    return report;
}

MetricsReport eval_checkpoint(const std::string& checkpoint_path,
                              const ExperimentConfig& config) {
    envs::EnvSpec spec = envs::make_spec(config.env);
    Dataset data = load_dataset(spec, config);
    policy::PolicyParams params = policy::load_checkpoint(checkpoint_path, spec.vocab.hash());
    MetricsReport report;
    report.env = config.env;
    report.method = "eval";
    report.master_seed = config.master_seed;
    PhaseMetrics pm;
    pm.phase = "eval";
    pm.iteration = 0;
    pm.seen = evaluate(params, spec, data.test_seen);
    pm.unseen = evaluate(params, spec, data.test_unseen);
    report.phases.push_back(std::move(pm));
    if (config.env == "toylab") {
        std::vector<CurveData> curves;
        evaluate(params, spec, data.test_seen, &curves);
        report.curves = std::move(curves);
    }
    return report;
}

void emit_tables(std::span<const MetricsReport> reports, const std::string& out_dir_in) {
    if (reports.empty()) throw ConfigError("emit_tables needs at least one report");
    const std::string& env = reports.front().env;
    for (const auto& r : reports)
        if (r.env != env)
            throw ConfigError("emit_tables refuses mixed environments (" + env + " vs " + r.env +
                              ")");
    std::string out_dir = resolve_output_path(out_dir_in);
    fs::create_directories(out_dir);

    // per-method aggregation preserving first-appearance order
    std::vector<std::string> methods;
    for (const auto& r : reports)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
            methods.push_back(r.method);

    auto write_table = [&](const std::string& name, auto field) {
        std::ofstream out(out_dir + "/" + name);
        out << "method,seed,seen,unseen\n";
        for (const auto& m : methods) {
            double seen_sum = 0.0, unseen_sum = 0.0;
            int count = 0;
            for (const auto& r : reports) {
                if (r.method != m) continue;
                const PhaseMetrics& fin = r.final_phase();
                out << m << ',' << r.master_seed << ',' << field(fin.seen) << ','
                    << field(fin.unseen) << '\n';
                seen_sum += field(fin.seen);
                unseen_sum += field(fin.unseen);
                ++count;
            }
            out << m << ",mean," << seen_sum / count << ',' << unseen_sum / count << '\n';
        }
    };
    write_table("rewards.csv", [](const SplitMetrics& m) { return m.avg_reward; });
    write_table("success.csv", [](const SplitMetrics& m) { return m.success_rate; });

    {
        std::ofstream out(out_dir + "/iterations.csv");
        out << "method,seed,phase,iteration,seen,unseen\n";
        for (const auto& r : reports)
            for (const auto& p : r.phases)
                out << r.method << ',' << r.master_seed << ',' << p.phase << ',' << p.iteration
                    << ',' << p.seen.avg_reward << ',' << p.unseen.avg_reward << '\n';
    }

    // one reward-vs-step file per instruction that has curve data
    std::vector<std::string> curve_ids;
    for (const auto& r : reports)
        for (const auto& c : r.curves)
            if (std::find(curve_ids.begin(), curve_ids.end(), c.id) == curve_ids.end())
                curve_ids.push_back(c.id);
    if (!curve_ids.empty()) fs::create_directories(out_dir + "/curves");
    for (const auto& id : curve_ids) {
        std::ofstream out(out_dir + "/curves/" + id + ".csv");
        out << "method,seed,step,value\n";
        for (const auto& r : reports)
            for (const auto& c : r.curves)
                if (c.id == id)
                    for (std::size_t s = 0; s < c.values.size(); ++s)
                        out << r.method << ',' << r.master_seed << ',' << (s + 1) << ','
                            << c.values[s] << '\n';
    }
}

}  // namespace etolab::harness
