#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "etolab/core.hpp"
#include "etolab/envs.hpp"
#include "etolab/losses.hpp"
#include "etolab/policy.hpp"

namespace etolab::algorithms {

/// Supervised fine-tuning loop settings (used by BC, RFT, and self-play RFT).
struct SftConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double warmup_fraction = 0.03;
    int batch_size = 64;
    int epochs = 3;
    std::uint64_t seed = 0;
};

/// Preference-training loop settings for one ETO iteration.
struct DpoTrainConfig {
    double learning_rate = 3e-4;
    double weight_decay = 0.0;
    double warmup_fraction = 0.03;
    int batch_size = 32;
    int epochs = 3;
    double beta = 0.1;
};

enum class PairLevel { trajectory, stepwise, mixture };

struct EtoConfig {
    int iterations = 2;
    SftConfig bc;
    DpoTrainConfig dpo;
    double explore_temperature = 0.0;
    int rollouts_per_instruction = 1;
    PairLevel level = PairLevel::trajectory;
    bool accumulate_pairs = false;  // train only on the newest pairs by default
    std::uint64_t seed = 0;
};

struct TrainStats {
    std::int64_t steps = 0;
    std::vector<double> epoch_losses;
    bool aborted = false;
    std::string diagnostic;
};

/// Called after each finished phase with the phase name, iteration index
/// (0 = the BC phase), and the parameters at that point.
using EvalHook = std::function<void(const std::string& phase, int iteration,
                                    const policy::PolicyParams& params)>;

// T1-epoch SFT on expert trajectories. On a non-finite loss the loop stops
// and returns the last finite state with stats.aborted set.
policy::PolicyParams behavioral_cloning(const policy::PolicyParams& initial,
                                        std::span<const core::Trajectory> dataset,
                                        const core::Vocabulary& vocab, const SftConfig& cfg,
                                        TrainStats* stats = nullptr);

struct ExploreResult {
    std::vector<core::TrajectoryPair> pairs;
    std::vector<core::Trajectory> rollouts;
    int skipped = 0;  // instructions dropped due to rollout/replay failures
};

// Rolls the policy out once (or cfg-many times) per expert instruction and
// pairs differing-reward outcomes against the expert.
ExploreResult explore_and_pair(const policy::PolicyParams& params,
                               std::span<const core::Trajectory> experts,
                               const envs::EnvSpec& spec, double temperature,
                               std::uint64_t seed, int rollouts_per_instruction = 1);

// One step-wise item per expert trajectory: teacher-force a random prefix,
// let the policy act from there, and keep the (expert, policy) action pair
// when the rewards differ and the actions are distinct.
std::vector<losses::StepwiseItem> explore_stepwise(const policy::PolicyParams& params,
                                                   std::span<const core::Trajectory> experts,
                                                   const envs::EnvSpec& spec, double temperature,
                                                   std::uint64_t seed);

struct EtoResult {
    policy::PolicyParams params;
    std::vector<int> pair_counts;                 // per iteration
    std::vector<double> first_batch_losses;       // first DPO batch loss per iteration
    std::vector<core::Trajectory> explore_rollouts;  // all iterations, in order
    bool stopped_early = false;
    std::string note;
};

// Full loop: BC, then per iteration freeze the reference, explore, and run
// preference training at the configured pair level. Skips BC when the
// dataset should be cloned elsewhere (pass bc.epochs = 0 to reuse params).
EtoResult eto(const policy::PolicyParams& initial, std::span<const core::Trajectory> dataset,
              const envs::EnvSpec& spec, const EtoConfig& cfg, const EvalHook& hook = {});

struct RftConfig {
    int samples_per_instruction = 4;
    double temperature = 1.0;
    double success_threshold = 0.7;
    SftConfig sft;
    std::uint64_t seed = 0;
};

struct RftResult {
    policy::PolicyParams params;
    std::vector<core::Trajectory> kept;  // rollouts that met the threshold
    int augmented_size = 0;
};

// Rejection-sampling fine-tuning: sample, keep rollouts at or above the
// threshold, and run a fresh SFT pass on experts + kept rollouts.
RftResult rft(const policy::PolicyParams& params, std::span<const core::Trajectory> experts,
              const envs::EnvSpec& spec, const RftConfig& cfg);

// N independent temperature-1 rollouts; returns the best by reward with ties
// broken toward the lowest sample index.
core::Trajectory best_of_n(const policy::PolicyParams& params, const envs::EnvSpec& spec,
                           const core::Instruction& instruction, int n, std::uint64_t seed);

struct PgConfig {
    double learning_rate = 1e-4;
    double beta = 0.1;          // KL-to-reference weight
    double clip_norm = 1.0;
    int batch_size = 32;
    int epochs = 3;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

// Score-function ascent on the KL-regularized return with a running-mean
// baseline and global-norm clipping.
policy::PolicyParams pg_baseline(const policy::PolicyParams& params,
                                 std::span<const core::Instruction> instructions,
                                 const envs::EnvSpec& spec, const PgConfig& cfg,
                                 TrainStats* stats = nullptr);

enum class SelfPlayMode { eto_only, rft_only, rft_then_eto };

struct SelfPlayConfig {
    SelfPlayMode mode = SelfPlayMode::rft_then_eto;
    int samples_per_instruction = 4;
    double temperature = 1.0;
    double success_threshold = 0.7;
    SftConfig sft;
    DpoTrainConfig dpo;
    std::uint64_t seed = 0;
};

struct SelfPlayResult {
    policy::PolicyParams params;
    int pair_count = 0;
    int kept_count = 0;
    bool empty_training_set = false;
};

// Expert-free training: per instruction the best sampled rollout is paired
// against every strictly worse one (ETO stages) or thresholded rollouts are
// cloned (RFT stages).
SelfPlayResult self_play(const policy::PolicyParams& initial,
                         std::span<const core::Instruction> instructions,
                         const envs::EnvSpec& spec, const SelfPlayConfig& cfg,
                         const EvalHook& hook = {});

}  // namespace etolab::algorithms
