#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "etolab/algorithms.hpp"
#include "etolab/core.hpp"
#include "etolab/envs.hpp"
#include "etolab/policy.hpp"

namespace etolab::harness {

struct ConfigError : core::Error {
    using core::Error::Error;
};

struct DatasetSizes {
    int train = 300;
    int test_seen = 60;
    int test_unseen = 60;
};

struct ArchConfig {
    int embed_dim = 16;
    int window = 24;
    int hidden = 64;
};

struct RftSettings {
    int samples_per_instruction = 4;
    double temperature = 1.0;
    double success_threshold = 0.7;
    int epochs = 10;
};

struct PgSettings {
    double learning_rate = 1e-4;
    double beta = 0.1;
    double clip_norm = 1.0;
    int batch_size = 32;
    int epochs = 3;
    double temperature = 1.0;
};

struct SelfPlaySettings {
    int samples_per_instruction = 4;
    double temperature = 1.0;
    double success_threshold = 0.7;
};

/// Everything a run needs, serializable to JSON; a persisted config reruns
/// to identical outputs.
struct ExperimentConfig {
    std::string env = "toyshop";
    std::string method = "eto";
    DatasetSizes sizes;
    ArchConfig arch;
    algorithms::SftConfig sft;
    algorithms::DpoTrainConfig dpo;
    int iterations = 2;
    double explore_temperature = 0.0;
    int rollouts_per_instruction = 1;
    bool accumulate_pairs = false;
    double stepwise_lr_scale = 0.1;  // step-wise runs use lr * scale and stepwise_beta
    double stepwise_beta = 0.5;
    RftSettings rft;
    PgSettings pg;
    SelfPlaySettings self_play;
    int best_of_n = 10;
    std::uint64_t master_seed = 0;
    std::string data_dir = "data";
    std::string out_dir = "";  // empty = no files written

    static ExperimentConfig defaults(const std::string& env, const std::string& method);
    static const std::vector<std::string>& method_names();

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    // Applies only the keys present in the JSON object on top of *this.
    void merge_json(const std::string& text);
};

struct InstructionMetric {
    std::string id;
    double reward = 0.0;
    bool success = false;
    int steps = 0;
};

struct SplitMetrics {
    double avg_reward = 0.0;
    double success_rate = 0.0;
    std::vector<InstructionMetric> records;
};

struct CurveData {
    std::string id;
    std::vector<double> values;  // cumulative reward after each action
};

struct PhaseMetrics {
    std::string phase;
    int iteration = 0;
    SplitMetrics seen;
    SplitMetrics unseen;
};

struct MetricsReport {
    std::string env;
    std::string method;
    std::uint64_t master_seed = 0;
    std::vector<PhaseMetrics> phases;
    std::vector<CurveData> curves;  // final-phase seen-test curves (toylab)
    std::vector<int> pair_counts;
    std::vector<double> first_batch_losses;
    std::vector<std::string> notes;

    const PhaseMetrics& final_phase() const;
    std::string to_json() const;  // deterministic; excludes wall-clock
    static MetricsReport from_json(const std::string& text);
};

/// The generated dataset for one environment: instruction splits plus the
/// experts for the training split.
struct Dataset {
    std::vector<core::Instruction> train;
    std::vector<core::Instruction> test_seen;
    std::vector<core::Instruction> test_unseen;
    std::vector<core::Trajectory> experts;
};

// Writes instruction files and expert trajectories under
// <data_dir>/<env>/; refuses to overwrite an existing directory unless
// force is set.
void gen_data(const ExperimentConfig& config, bool force = false);

// Loads (and replay-verifies) a generated dataset.
Dataset load_dataset(const envs::EnvSpec& spec, const ExperimentConfig& config);

// Greedy evaluation of one split; fills curves when requested (toylab).
SplitMetrics evaluate(const policy::PolicyParams& params, const envs::EnvSpec& spec,
                      std::span<const core::Instruction> instructions,
                      std::vector<CurveData>* curves = nullptr);

// Executes the configured method end to end, evaluating after every phase;
// writes config/metrics/checkpoints/trajectories under out_dir when set.
MetricsReport run(const ExperimentConfig& config);

// Evaluates a stored checkpoint on the test splits.
MetricsReport eval_checkpoint(const std::string& checkpoint_path, const ExperimentConfig& config);

// Writes rewards.csv, success.csv, iterations.csv, and per-instruction curve
// files; all reports must belong to one environment.
void emit_tables(std::span<const MetricsReport> reports, const std::string& out_dir);

// Prefixes relative paths with $ETOLAB_OUT when it is set.
std::string resolve_output_path(const std::string& path);

}  // namespace etolab::harness
