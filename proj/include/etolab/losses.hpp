#pragma once

#include <functional>
#include <span>
#include <vector>

#include "etolab/core.hpp"
#include "etolab/policy.hpp"

namespace etolab::losses {

struct TrainingError : core::Error {
    using core::Error::Error;
};

/// DPO settings: the KL weight and the frozen reference policy.
struct DpoConfig {
    double beta = 0.1;
    policy::PolicyParams reference;
};

struct LossValue {
    double value = 0.0;
    std::vector<double> grad;
};

/// A preference pair in flat form, ready for log-probability queries.
struct FlatPair {
    core::FlatSequence winner;
    core::FlatSequence loser;
    double winner_reward = 1.0;
    double loser_reward = 0.0;
};

FlatPair flatten_pair(const core::TrajectoryPair& pair, const core::Vocabulary& vocab);

/// Step-wise contrastive item: an expert prefix plus two alternative actions
/// for the next step, ordered by the final reward they led to.
struct StepwiseItem {
    core::Instruction instruction;
    std::vector<core::Step> prefix;       // expert steps 1..t-1
    std::vector<int> winner_action;       // includes the end-of-action marker
    std::vector<int> loser_action;
};

// Mean of -trajectory_logprob over the batch, with its exact gradient.
LossValue sft_loss(const policy::PolicyParams& params,
                   std::span<const core::FlatSequence> batch, const core::Vocabulary& vocab);

// Mean of -log sigmoid(beta * ((logp_w - logp_l) - (ref_w - ref_l))) over the
// batch; the gradient is with respect to params only.
LossValue dpo_loss(const policy::PolicyParams& params, const DpoConfig& cfg,
                   std::span<const FlatPair> batch, const core::Vocabulary& vocab);
LossValue dpo_loss(const policy::PolicyParams& params, const DpoConfig& cfg,
                   std::span<const core::TrajectoryPair> batch, const core::Vocabulary& vocab);

// Bradley-Terry win probability from two raw rewards.
double bt_preference_prob(double reward_w, double reward_l);

// DPO over action-level log-probabilities conditioned on (instruction,
// expert prefix); items with identical actions are a contract violation.
LossValue stepwise_dpo_loss(const policy::PolicyParams& params, const DpoConfig& cfg,
                            std::span<const StepwiseItem> batch, const core::Vocabulary& vocab);

// r(u,e) - beta * sum over action positions of (logp_theta - logp_ref).
double kl_regularized_return(const policy::PolicyParams& params,
                             const policy::PolicyParams& reference,
                             const core::Trajectory& trajectory, double beta,
                             const core::Vocabulary& vocab);

/// AdamW with decoupled weight decay and a linear-warmup + cosine-decay
/// learning-rate schedule over a fixed horizon.
class AdamW {
public:
    AdamW(std::size_t param_count, double learning_rate, double weight_decay = 0.0,
          double warmup_fraction = 0.0, std::int64_t horizon = 0, double beta1 = 0.9,
          double beta2 = 0.999, double epsilon = 1e-8);

    // Learning rate the next step() call will use.
    double current_lr() const;
    std::int64_t step_count() const { return step_; }

    // Applies one update in place. Throws TrainingError on non-finite
    // gradient entries.
    void step(policy::PolicyParams& params, std::span<const double> grad);

private:
    std::vector<double> m_, v_;
    double lr_, weight_decay_, warmup_fraction_, beta1_, beta2_, epsilon_;
    std::int64_t horizon_;
    std::int64_t step_ = 0;
};

// Scales grad in place so its l2 norm is at most max_norm; returns the norm
// before clipping.
double clip_global_norm(std::span<double> grad, double max_norm);

using LossFn = std::function<LossValue(const policy::PolicyParams&)>;

// Central finite differences on a random coordinate subset (or explicit
// coordinates); returns the maximum relative error against the analytic
// gradient.
double grad_check(const LossFn& fn, const policy::PolicyParams& params, double epsilon,
                  int coordinate_count, std::uint64_t seed,
                  std::span<const std::int64_t> explicit_coords = {});

}  // namespace etolab::losses
