#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "etolab/core.hpp"
#include "etolab/envs.hpp"

namespace etolab::policy {

struct PolicyError : core::Error {
    using core::Error::Error;
};

/// Network shape: token embeddings of dimension d over a fixed context
/// window of W tokens, concatenated into one vector, a tanh hidden layer of
/// width h, and a linear readout over the vocabulary.
struct Arch {
    int vocab_size = 0;
    int embed_dim = 16;
    int window = 24;
    int hidden = 64;

    // Parameter layout (flat, in order):
    //   embeddings  V*d
    //   hidden W1   (W*d)*h
    //   hidden b1   h
    //   output W2   h*V
    //   output b2   V
    std::int64_t param_count() const {
        std::int64_t v = vocab_size, d = embed_dim, w = window, h = hidden;
        return v * d + (w * d) * h + h + h * v + v;
    }
    bool operator==(const Arch&) const = default;
};

struct PolicyParams {
    Arch arch;
    std::vector<double> theta;
};

PolicyParams zero_params(const Arch& arch);
// Gaussian weights scaled per layer, zero biases.
PolicyParams init_params(const Arch& arch, std::uint64_t seed);

struct RolloutConfig {
    double temperature = 0.0;  // 0 = greedy argmax (ties to the lowest id)
    int action_token_budget = 16;
    std::uint64_t seed = 0;
};

// Logits for the next token given the trailing context (shorter contexts are
// left-padded with the pad token; longer ones are truncated to the last W).
std::vector<double> token_logits(const PolicyParams& params, std::span<const int> context,
                                 const core::Vocabulary& vocab);

// Sum of log-probabilities at masked positions only; unmasked positions
// contribute exactly zero. When per_position is given it receives one entry
// per flat position (zero where unmasked).
double trajectory_logprob(const PolicyParams& params, const core::FlatSequence& flat,
                          const core::Vocabulary& vocab,
                          std::vector<double>* per_position = nullptr);

// Exact reverse-mode gradient of trajectory_logprob with respect to theta.
// When logprob_out is given it receives the forward value.
std::vector<double> trajectory_logprob_grad(const PolicyParams& params,
                                            const core::FlatSequence& flat,
                                            const core::Vocabulary& vocab,
                                            double* logprob_out = nullptr);
// Accumulates scale * gradient into grad (same layout as theta); returns the
// forward value. The workhorse behind the loss functions.
double accumulate_logprob_grad(const PolicyParams& params, const core::FlatSequence& flat,
                               const core::Vocabulary& vocab, double scale,
                               std::span<double> grad);

// Plays one episode: autoregressively samples an action until the
// end-of-action marker (or the token budget forces one), submits it, and
// repeats until the environment reports done. Deterministic in
// (params, instruction, cfg).
core::Trajectory rollout(const PolicyParams& params, const envs::EnvSpec& spec,
                         const core::Instruction& instruction, const RolloutConfig& cfg);

// Same, but the given steps are teacher-forced into the environment and the
// context before sampling begins; they become the head of the returned
// trajectory.
core::Trajectory rollout_with_prefix(const PolicyParams& params, const envs::EnvSpec& spec,
                                     const core::Instruction& instruction,
                                     std::span<const core::Step> forced_prefix,
                                     const RolloutConfig& cfg);

/// Per-position logit-gradient provider for custom objectives: receives the
/// position, its logits, log-normalizer, and probabilities, and must fill
/// dlogits (same length as logits).
using LogitGradFn =
    std::function<void(std::size_t position, const std::vector<double>& logits, double log_z,
                       const std::vector<double>& probs, std::vector<double>& dlogits)>;

// Runs the forward pass at every masked position, asks the provider for the
// logit gradients, and backpropagates them into grad (accumulating).
void backprop_logit_grads(const PolicyParams& params, const core::FlatSequence& flat,
                          const core::Vocabulary& vocab, const LogitGradFn& provider,
                          std::span<double> grad);

// Flat binary checkpoint: header (arch + vocab hash) then theta as doubles.
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     std::uint64_t vocab_hash);
PolicyParams load_checkpoint(const std::string& path, std::uint64_t expected_vocab_hash);

}  // namespace etolab::policy
