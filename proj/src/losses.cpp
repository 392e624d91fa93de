#include "etolab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "etolab/rng.hpp"

namespace etolab::losses {

namespace {

// -log sigmoid(x), computed without overflow on either tail.
double neg_log_sigmoid(double x) { return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

core::FlatSequence stepwise_flat(const StepwiseItem& item, std::span<const int> action,
                                 const core::Vocabulary& vocab) {
    const auto& sp = vocab.specials();
    core::FlatSequence flat;
    auto push = [&flat](int id, bool masked) {
        flat.token_ids.push_back(id);
        flat.action_mask.push_back(masked ? 1 : 0);
    };
    push(sp.instruction_start, false);
    for (int id : item.instruction.tokens) push(id, false);
    for (const core::Step& step : item.prefix) {
        push(sp.action_start, false);
        for (int id : step.action_tokens) push(id, false);  // teacher-forced context
        if (step.observation_tokens) {
            push(sp.observation_start, false);
            for (int id : *step.observation_tokens) push(id, false);
        }
    }
    push(sp.action_start, false);
    for (int id : action) push(id, true);
    return flat;
}

}  // namespace

FlatPair flatten_pair(const core::TrajectoryPair& pair, const core::Vocabulary& vocab) {
    if (!(pair.winner.reward > pair.loser.reward))
        throw TrainingError("pair violates the reward ordering for " + pair.instruction.id);
    FlatPair flat;
    flat.winner = core::flatten(pair.winner, vocab);
    flat.loser = core::flatten(pair.loser, vocab);
    flat.winner_reward = pair.winner.reward;
    flat.loser_reward = pair.loser.reward;
    return flat;
}

LossValue sft_loss(const policy::PolicyParams& params,
                   std::span<const core::FlatSequence> batch, const core::Vocabulary& vocab) {
    if (batch.empty()) throw TrainingError("sft_loss on an empty batch");
    LossValue out;
    out.grad.assign(params.theta.size(), 0.0);
    const double scale = -1.0 / static_cast<double>(batch.size());
    for (const auto& flat : batch) {
        double lp = policy::accumulate_logprob_grad(params, flat, vocab, scale, out.grad);
        out.value += scale * lp;
    }
    return out;
}

LossValue dpo_loss(const policy::PolicyParams& params, const DpoConfig& cfg,
                   std::span<const FlatPair> batch, const core::Vocabulary& vocab) {
    if (batch.empty()) throw TrainingError("dpo_loss on an empty batch");
    if (cfg.beta <= 0.0) throw TrainingError("beta must be positive");
    LossValue out;
    out.grad.assign(params.theta.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& pair : batch) {
        if (!(pair.winner_reward > pair.loser_reward))
            throw TrainingError("pair violates the reward ordering");
        double lw = policy::trajectory_logprob(params, pair.winner, vocab);
        double ll = policy::trajectory_logprob(params, pair.loser, vocab);
        double rw = policy::trajectory_logprob(cfg.reference, pair.winner, vocab);
        double rl = policy::trajectory_logprob(cfg.reference, pair.loser, vocab);
        double margin = cfg.beta * ((lw - ll) - (rw - rl));
        out.value += inv_n * neg_log_sigmoid(margin);
        // d/d margin of -log sigmoid = -(1 - sigmoid(margin)) = -sigmoid(-margin)
        double dmargin = -sigmoid(-margin) * inv_n;
        double coeff = dmargin * cfg.beta;
        policy::accumulate_logprob_grad(params, pair.winner, vocab, coeff, out.grad);
        policy::accumulate_logprob_grad(params, pair.loser, vocab, -coeff, out.grad);
    }
    return out;
}

LossValue dpo_loss(const policy::PolicyParams& params, const DpoConfig& cfg,
                   std::span<const core::TrajectoryPair> batch, const core::Vocabulary& vocab) {
    std::vector<FlatPair> flats;
    flats.reserve(batch.size());
    for (const auto& pair : batch) flats.push_back(flatten_pair(pair, vocab));
    return dpo_loss(params, cfg, flats, vocab);
}

double bt_preference_prob(double reward_w, double reward_l) {
    return sigmoid(reward_w - reward_l);
}

LossValue stepwise_dpo_loss(const policy::PolicyParams& params, const DpoConfig& cfg,
                            std::span<const StepwiseItem> batch, const core::Vocabulary& vocab) {
    if (batch.empty()) throw TrainingError("stepwise_dpo_loss on an empty batch");
    if (cfg.beta <= 0.0) throw TrainingError("beta must be positive");
    LossValue out;
    out.grad.assign(params.theta.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& item : batch) {
        if (item.winner_action == item.loser_action)
            throw TrainingError("step-wise pair with identical actions");
        core::FlatSequence win = stepwise_flat(item, item.winner_action, vocab);
        core::FlatSequence lose = stepwise_flat(item, item.loser_action, vocab);
        double lw = policy::trajectory_logprob(params, win, vocab);
        double ll = policy::trajectory_logprob(params, lose, vocab);
        double rw = policy::trajectory_logprob(cfg.reference, win, vocab);
        double rl = policy::trajectory_logprob(cfg.reference, lose, vocab);
        double margin = cfg.beta * ((lw - ll) - (rw - rl));
        out.value += inv_n * neg_log_sigmoid(margin);
        double coeff = -sigmoid(-margin) * inv_n * cfg.beta;
        policy::accumulate_logprob_grad(params, win, vocab, coeff, out.grad);
        policy::accumulate_logprob_grad(params, lose, vocab, -coeff, out.grad);
    }
    return out;
}

double kl_regularized_return(const policy::PolicyParams& params,
                             const policy::PolicyParams& reference,
                             const core::Trajectory& trajectory, double beta,
                             const core::Vocabulary& vocab) {
    core::FlatSequence flat = core::flatten(trajectory, vocab);
    double lp = policy::trajectory_logprob(params, flat, vocab);
    double ref = policy::trajectory_logprob(reference, flat, vocab);
    return trajectory.reward - beta * (lp - ref);
}

AdamW::AdamW(std::size_t param_count, double learning_rate, double weight_decay,
             double warmup_fraction, std::int64_t horizon, double beta1, double beta2,
             double epsilon)
    : m_(param_count, 0.0),
      v_(param_count, 0.0),
      lr_(learning_rate),
      weight_decay_(weight_decay),
      warmup_fraction_(warmup_fraction),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      horizon_(horizon) {}

double AdamW::current_lr() const {
    if (horizon_ <= 0) return lr_;
    auto warmup_steps = static_cast<std::int64_t>(std::ceil(warmup_fraction_ * static_cast<double>(horizon_)));
    if (step_ < warmup_steps)
        return lr_ * static_cast<double>(step_) / static_cast<double>(warmup_steps);
    if (step_ >= horizon_) return 0.0;
    double progress = static_cast<double>(step_ - warmup_steps) /
                      static_cast<double>(horizon_ - warmup_steps);
    return lr_ * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void AdamW::step(policy::PolicyParams& params, std::span<const double> grad) {
    if (grad.size() != params.theta.size() || grad.size() != m_.size())
        throw TrainingError("gradient length does not match the optimizer state");
    for (double g : grad) {
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient at optimizer step " +
                                                   std::to_string(step_));
    }
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        double mhat = m_[i] / bc1;
        double vhat = v_[i] / bc2;
        params.theta[i] -= lr * (mhat / (std::sqrt(vhat) + epsilon_) + weight_decay_ * params.theta[i]);
    }
}

double clip_global_norm(std::span<double> grad, double max_norm) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double scale = max_norm / norm;
        for (double& g : grad) g *= scale;
    }
    return norm;
}

double grad_check(const LossFn& fn, const policy::PolicyParams& params, double epsilon,
                  int coordinate_count, std::uint64_t seed,
                  std::span<const std::int64_t> explicit_coords) {
    if (epsilon <= 0.0) throw TrainingError("epsilon must be positive");
    LossValue analytic = fn(params);
    std::vector<std::int64_t> coords(explicit_coords.begin(), explicit_coords.end());
    if (coords.empty()) {
        Rng rng(derive_seed(seed, "grad-check"));
        int n = std::min<std::int64_t>(coordinate_count,
                                       static_cast<std::int64_t>(params.theta.size()));
        for (int i = 0; i < n; ++i)
            coords.push_back(static_cast<std::int64_t>(rng.bounded(params.theta.size())));
    }
    policy::PolicyParams probe = params;
    double max_rel = 0.0;
    for (std::int64_t c : coords) {
        auto i = static_cast<std::size_t>(c);
        double saved = probe.theta[i];
        probe.theta[i] = saved + epsilon;
        double up = fn(probe).value;
        probe.theta[i] = saved - epsilon;
        double down = fn(probe).value;
        probe.theta[i] = saved;
        double numeric = (up - down) / (2.0 * epsilon);
        double a = analytic.grad[i];
        double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        double rel = std::abs(a - numeric) / denom;
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace etolab::losses
