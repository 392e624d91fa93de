#include "etolab/algorithms.hpp"

#include <algorithm>
#include <cmath>

#include "etolab/rng.hpp"

namespace etolab::algorithms {

namespace {

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
    for (std::size_t i = indices.size(); i > 1; --i)
        std::swap(indices[i - 1], indices[rng.bounded(i)]);
}

std::int64_t batches_per_epoch(std::size_t n, int batch_size) {
    return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch_size) - 1) /
                                     static_cast<std::size_t>(batch_size));
}

// Shared SFT loop over pre-flattened sequences. Stops on a non-finite loss
// and hands back the last finite parameters.
policy::PolicyParams sft_train(policy::PolicyParams params,
                               const std::vector<core::FlatSequence>& flats,
                               const core::Vocabulary& vocab, const SftConfig& cfg,
                               TrainStats* stats) {
    if (cfg.epochs <= 0 || flats.empty()) return params;
    std::int64_t horizon = cfg.epochs * batches_per_epoch(flats.size(), cfg.batch_size);
    losses::AdamW opt(params.theta.size(), cfg.learning_rate, cfg.weight_decay,
                      cfg.warmup_fraction, horizon);
    Rng shuffle_rng(derive_seed(cfg.seed, "sft-shuffle"));
    std::vector<std::size_t> order(flats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<core::FlatSequence> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        double epoch_loss = 0.0;
        std::int64_t epoch_batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            batch.clear();
            for (std::size_t i = at; i < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size)); ++i)
                batch.push_back(flats[order[i]]);
            losses::LossValue loss = losses::sft_loss(params, batch, vocab);
            if (!std::isfinite(loss.value)) {
                if (stats) {
                    stats->aborted = true;
                    stats->diagnostic = "non-finite SFT loss at step " + std::to_string(opt.step_count());
                }
                return params;
            }
            policy::PolicyParams before = params;
            try {
                opt.step(params, loss.grad);
            } catch (const losses::TrainingError& e) {
                if (stats) {
                    stats->aborted = true;
                    stats->diagnostic = e.what();
                }
                return before;
            }
            epoch_loss += loss.value;
            ++epoch_batches;
            if (stats) ++stats->steps;
        }
        if (stats) stats->epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_batches));
    }
    return params;
}

struct DpoTrainResult {
    policy::PolicyParams params;
    double first_batch_loss = 0.0;
    bool have_first = false;
};

DpoTrainResult dpo_train(policy::PolicyParams params, const policy::PolicyParams& reference,
                         const std::vector<losses::FlatPair>& pairs,
                         const std::vector<losses::StepwiseItem>& stepwise,
                         const core::Vocabulary& vocab, const DpoTrainConfig& cfg,
                         std::uint64_t seed, TrainStats* stats) {
    DpoTrainResult out;
    std::size_t total = pairs.size() + stepwise.size();
    if (cfg.epochs <= 0 || total == 0) {
        out.params = std::move(params);
        return out;
    }
    losses::DpoConfig dpo_cfg{cfg.beta, reference};
    std::int64_t horizon =
        cfg.epochs * (batches_per_epoch(pairs.size(), cfg.batch_size) +
                      batches_per_epoch(stepwise.size(), cfg.batch_size));
    losses::AdamW opt(params.theta.size(), cfg.learning_rate, cfg.weight_decay,
                      cfg.warmup_fraction, horizon);
    Rng shuffle_rng(derive_seed(seed, "dpo-shuffle"));
    std::vector<std::size_t> pair_order(pairs.size());
    for (std::size_t i = 0; i < pair_order.size(); ++i) pair_order[i] = i;
    std::vector<std::size_t> step_order(stepwise.size());
    for (std::size_t i = 0; i < step_order.size(); ++i) step_order[i] = i;

    std::vector<losses::FlatPair> pair_batch;
    std::vector<losses::StepwiseItem> step_batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(pair_order, shuffle_rng);
        shuffle_indices(step_order, shuffle_rng);
        std::size_t pair_at = 0, step_at = 0;
        bool take_pairs = !pairs.empty();
        double epoch_loss = 0.0;
        std::int64_t epoch_batches = 0;
        while (pair_at < pair_order.size() || step_at < step_order.size()) {
            // alternate kinds; fall back to whichever pool still has data
            bool use_pairs = take_pairs;
            if (pair_at >= pair_order.size()) use_pairs = false;
            if (step_at >= step_order.size()) use_pairs = true;
            losses::LossValue loss;
            if (use_pairs) {
                pair_batch.clear();
                for (std::size_t i = pair_at;
                     i < std::min(pair_order.size(), pair_at + static_cast<std::size_t>(cfg.batch_size)); ++i)
                    pair_batch.push_back(pairs[pair_order[i]]);
                pair_at += pair_batch.size();
                loss = losses::dpo_loss(params, dpo_cfg, pair_batch, vocab);
            } else {
                step_batch.clear();
                for (std::size_t i = step_at;
                     i < std::min(step_order.size(), step_at + static_cast<std::size_t>(cfg.batch_size)); ++i)
                    step_batch.push_back(stepwise[step_order[i]]);
                step_at += step_batch.size();
                loss = losses::stepwise_dpo_loss(params, dpo_cfg, step_batch, vocab);
            }
            // 1:1 interleave when both kinds are present
            if (!pairs.empty() && !stepwise.empty()) take_pairs = !take_pairs;
            if (!out.have_first) {
                out.first_batch_loss = loss.value;
                out.have_first = true;
            }
            if (!std::isfinite(loss.value)) {
                if (stats) {
                    stats->aborted = true;
                    stats->diagnostic = "non-finite DPO loss at step " + std::to_string(opt.step_count());
                }
                out.params = std::move(params);
                return out;
            }
            opt.step(params, loss.grad);
            epoch_loss += loss.value;
            ++epoch_batches;
            if (stats) ++stats->steps;
        }
        if (stats) stats->epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_batches));
    }
    out.params = std::move(params);
    return out;
}

std::vector<core::FlatSequence> flatten_all(std::span<const core::Trajectory> dataset,
                                            const core::Vocabulary& vocab) {
    std::vector<core::FlatSequence> flats;
    flats.reserve(dataset.size());
    for (const auto& t : dataset) flats.push_back(core::flatten(t, vocab));
    return flats;
}

}  // namespace

policy::PolicyParams behavioral_cloning(const policy::PolicyParams& initial,
                                        std::span<const core::Trajectory> dataset,
                                        const core::Vocabulary& vocab, const SftConfig& cfg,
                                        TrainStats* stats) {
    if (dataset.empty()) throw losses::TrainingError("behavioral cloning needs a dataset");
    return sft_train(initial, flatten_all(dataset, vocab), vocab, cfg, stats);
}

ExploreResult explore_and_pair(const policy::PolicyParams& params,
                               std::span<const core::Trajectory> experts,
                               const envs::EnvSpec& spec, double temperature,
                               std::uint64_t seed, int rollouts_per_instruction) {
    ExploreResult result;
    for (std::size_t i = 0; i < experts.size(); ++i) {
        for (int s = 0; s < rollouts_per_instruction; ++s) {
            policy::RolloutConfig cfg;
            cfg.temperature = temperature;
            cfg.seed = derive_seed(seed, "explore",
                                   i * static_cast<std::size_t>(rollouts_per_instruction) +
                                       static_cast<std::size_t>(s));
            try {
                core::Trajectory rolled = policy::rollout(params, spec, experts[i].instruction, cfg);
                auto pair = core::pair_from_rollout(experts[i], rolled);
                result.rollouts.push_back(std::move(rolled));
                if (pair) result.pairs.push_back(std::move(*pair));
            } catch (const core::Error&) {
                ++result.skipped;
            }
        }
    }
    return result;
}

std::vector<losses::StepwiseItem> explore_stepwise(const policy::PolicyParams& params,
                                                   std::span<const core::Trajectory> experts,
                                                   const envs::EnvSpec& spec, double temperature,
                                                   std::uint64_t seed) {
    std::vector<losses::StepwiseItem> items;
    Rng cut_rng(derive_seed(seed, "stepwise-cuts"));
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const core::Trajectory& expert = experts[i];
        std::size_t n = expert.steps.size();
        auto t = static_cast<std::size_t>(1 + cut_rng.bounded(n));  // cut point 1..n
        std::span<const core::Step> prefix(expert.steps.data(), t - 1);
        policy::RolloutConfig cfg;
        cfg.temperature = temperature;
        cfg.seed = derive_seed(seed, "stepwise-rollout", i);
        core::Trajectory continued;
        try {
            continued = policy::rollout_with_prefix(params, spec, expert.instruction, prefix, cfg);
        } catch (const core::Error&) {
            continue;
        }
        if (continued.reward == expert.reward) continue;  // tie, discard
        if (continued.steps.size() < t) continue;         // episode ended inside the prefix
        const auto& agent_action = continued.steps[t - 1].action_tokens;
        const auto& expert_action = expert.steps[t - 1].action_tokens;
        if (agent_action == expert_action) continue;  // no contrast in the cut action
        losses::StepwiseItem item;
        item.instruction = expert.instruction;
        item.prefix.assign(prefix.begin(), prefix.end());
        if (expert.reward > continued.reward) {
            item.winner_action = expert_action;
            item.loser_action = agent_action;
        } else {
            item.winner_action = agent_action;
            item.loser_action = expert_action;
        }
        items.push_back(std::move(item));
    }
    return items;
}

EtoResult eto(const policy::PolicyParams& initial, std::span<const core::Trajectory> dataset,
              const envs::EnvSpec& spec, const EtoConfig& cfg, const EvalHook& hook) {
    EtoResult result;
    TrainStats bc_stats;
    result.params = behavioral_cloning(initial, dataset, spec.vocab, cfg.bc, &bc_stats);
    if (hook) hook("bc", 0, result.params);

    std::vector<losses::FlatPair> pair_pool;
    std::vector<losses::StepwiseItem> stepwise_pool;
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        policy::PolicyParams reference = result.params;
        std::uint64_t iter_seed = derive_seed(cfg.seed, "eto-iter", static_cast<std::uint64_t>(iter));

        std::vector<losses::FlatPair> fresh_pairs;
        std::vector<losses::StepwiseItem> fresh_stepwise;
        if (cfg.level != PairLevel::stepwise) {
            ExploreResult explored = explore_and_pair(result.params, dataset, spec,
                                                      cfg.explore_temperature, iter_seed,
                                                      cfg.rollouts_per_instruction);
            for (const auto& pair : explored.pairs)
                fresh_pairs.push_back(losses::flatten_pair(pair, spec.vocab));
            for (auto& rolled : explored.rollouts)
                result.explore_rollouts.push_back(std::move(rolled));
        }
        if (cfg.level != PairLevel::trajectory) {
            fresh_stepwise = explore_stepwise(result.params, dataset, spec,
                                              cfg.explore_temperature, iter_seed);
        }
        result.pair_counts.push_back(static_cast<int>(fresh_pairs.size() + fresh_stepwise.size()));
        if (!cfg.accumulate_pairs) {
            pair_pool = std::move(fresh_pairs);
            stepwise_pool = std::move(fresh_stepwise);
        } else {
            for (auto& p : fresh_pairs) pair_pool.push_back(std::move(p));
            for (auto& s : fresh_stepwise) stepwise_pool.push_back(std::move(s));
        }
        if (pair_pool.empty() && stepwise_pool.empty()) {
            result.stopped_early = true;
            result.note = "iteration " + std::to_string(iter) +
                          " produced no contrastive data; stopping early";
            break;
        }
        TrainStats iter_stats;
        DpoTrainResult trained = dpo_train(std::move(result.params), reference, pair_pool,
                                           stepwise_pool, spec.vocab, cfg.dpo, iter_seed,
                                           &iter_stats);
        result.params = std::move(trained.params);
        if (trained.have_first) result.first_batch_losses.push_back(trained.first_batch_loss);
        if (hook) hook("iter", iter, result.params);
    }
    return result;
}

RftResult rft(const policy::PolicyParams& params, std::span<const core::Trajectory> experts,
              const envs::EnvSpec& spec, const RftConfig& cfg) {
    if (cfg.success_threshold <= 0.0 || cfg.success_threshold > 1.0)
        throw losses::TrainingError("success threshold must lie in (0,1]");
    RftResult result;
    for (std::size_t i = 0; i < experts.size(); ++i) {
        for (int s = 0; s < cfg.samples_per_instruction; ++s) {
            policy::RolloutConfig rc;
            rc.temperature = cfg.temperature;
            rc.seed = derive_seed(cfg.seed, "rft",
                                  i * static_cast<std::size_t>(cfg.samples_per_instruction) +
                                      static_cast<std::size_t>(s));
            core::Trajectory rolled = policy::rollout(params, spec, experts[i].instruction, rc);
            if (rolled.reward >= cfg.success_threshold) result.kept.push_back(std::move(rolled));
        }
    }
    std::vector<core::Trajectory> augmented(experts.begin(), experts.end());
    for (const auto& t : result.kept) augmented.push_back(t);
    result.augmented_size = static_cast<int>(augmented.size());
    result.params = behavioral_cloning(params, augmented, spec.vocab, cfg.sft);
    return result;
}

core::Trajectory best_of_n(const policy::PolicyParams& params, const envs::EnvSpec& spec,
                           const core::Instruction& instruction, int n, std::uint64_t seed) {
    if (n < 1) throw losses::TrainingError("best_of_n needs n >= 1");
    core::Trajectory best;
    for (int i = 0; i < n; ++i) {
        policy::RolloutConfig rc;
        rc.temperature = 1.0;
        rc.seed = derive_seed(seed, "bofn", static_cast<std::uint64_t>(i));
        core::Trajectory rolled = policy::rollout(params, spec, instruction, rc);
        if (i == 0 || rolled.reward > best.reward) best = std::move(rolled);
    }
    return best;
}

policy::PolicyParams pg_baseline(const policy::PolicyParams& initial,
                                 std::span<const core::Instruction> instructions,
                                 const envs::EnvSpec& spec, const PgConfig& cfg,
                                 TrainStats* stats) {
    policy::PolicyParams params = initial;
    const policy::PolicyParams reference = initial;
    if (instructions.empty() || cfg.epochs <= 0) return params;
    std::int64_t horizon = cfg.epochs * batches_per_epoch(instructions.size(), cfg.batch_size);
    losses::AdamW opt(params.theta.size(), cfg.learning_rate, 0.0, 0.0, horizon);
    Rng shuffle_rng(derive_seed(cfg.seed, "pg-shuffle"));
    std::vector<std::size_t> order(instructions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double reward_mean = 0.0;
    std::int64_t reward_count = 0;
    std::vector<double> grad(params.theta.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        double epoch_return = 0.0;
        std::int64_t episodes = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = at; b < end; ++b) {
                policy::RolloutConfig rc;
                rc.temperature = cfg.temperature;
                rc.seed = derive_seed(cfg.seed, "pg-rollout",
                                      static_cast<std::uint64_t>(epoch) * instructions.size() +
                                          order[b]);
                core::Trajectory rolled =
                    policy::rollout(params, spec, instructions[order[b]], rc);
                core::FlatSequence flat = core::flatten(rolled, spec.vocab);
                double advantage = rolled.reward - reward_mean;
                ++reward_count;
                reward_mean += (rolled.reward - reward_mean) / static_cast<double>(reward_count);
                epoch_return += rolled.reward;
                ++episodes;

                // reference log-prob tables per masked position
                std::vector<std::vector<double>> ref_table;
                ref_table.reserve(flat.token_ids.size());
                for (std::size_t k = 0; k < flat.token_ids.size(); ++k) {
                    if (!flat.action_mask[k]) {
                        ref_table.emplace_back();
                        continue;
                    }
                    std::span<const int> prefix(flat.token_ids.data(), k);
                    std::vector<double> logits = policy::token_logits(reference, prefix, spec.vocab);
                    double m = *std::max_element(logits.begin(), logits.end());
                    double sum = 0.0;
                    for (double z : logits) sum += std::exp(z - m);
                    double log_z = m + std::log(sum);
                    for (double& z : logits) z -= log_z;
                    ref_table.push_back(std::move(logits));
                }

                // ascend: advantage * grad logp - beta * grad KL(pi || ref),
                // the KL taken over the full distribution at each visited
                // context; accumulate the descent direction into grad.
                const double scale = -1.0 / static_cast<double>(end - at);
                policy::backprop_logit_grads(
                    params, flat, spec.vocab,
                    [&](std::size_t k, const std::vector<double>& logits, double log_z,
                        const std::vector<double>& probs, std::vector<double>& dlogits) {
                        const auto& ref_lp = ref_table[k];
                        int target = flat.token_ids[k];
                        double kl = 0.0;
                        for (std::size_t tkn = 0; tkn < probs.size(); ++tkn) {
                            double lp = logits[tkn] - log_z;
                            kl += probs[tkn] * (lp - ref_lp[tkn]);
                        }
                        for (std::size_t tkn = 0; tkn < probs.size(); ++tkn) {
                            double lp = logits[tkn] - log_z;
                            double score = advantage * ((static_cast<int>(tkn) == target ? 1.0 : 0.0) - probs[tkn]);
                            double kl_grad = probs[tkn] * ((lp - ref_lp[tkn]) - kl);
                            dlogits[tkn] = scale * (score - cfg.beta * kl_grad);
                        }
                    },
                    grad);
            }
            losses::clip_global_norm(grad, cfg.clip_norm);
            try {
                opt.step(params, grad);
            } catch (const losses::TrainingError& e) {
                if (stats) {
                    stats->aborted = true;
                    stats->diagnostic = e.what();
                }
                return params;
            }
            if (stats) ++stats->steps;
        }
        if (stats) stats->epoch_losses.push_back(epoch_return / static_cast<double>(episodes));
    }
    return params;
}

SelfPlayResult self_play(const policy::PolicyParams& initial,
                         std::span<const core::Instruction> instructions,
                         const envs::EnvSpec& spec, const SelfPlayConfig& cfg,
                         const EvalHook& hook) {
    SelfPlayResult result;
    result.params = initial;
    int phase = 0;
    auto sample_all = [&](const policy::PolicyParams& params, std::string_view lane)
        -> std::vector<std::vector<core::Trajectory>> {
        std::vector<std::vector<core::Trajectory>> per_instruction(instructions.size());
        for (std::size_t i = 0; i < instructions.size(); ++i) {
            for (int s = 0; s < cfg.samples_per_instruction; ++s) {
                policy::RolloutConfig rc;
                rc.temperature = cfg.temperature;
                rc.seed = derive_seed(cfg.seed, lane,
                                      i * static_cast<std::size_t>(cfg.samples_per_instruction) +
                                          static_cast<std::size_t>(s));
                per_instruction[i].push_back(policy::rollout(params, spec, instructions[i], rc));
            }
        }
        return per_instruction;
    };

    if (cfg.mode == SelfPlayMode::rft_only || cfg.mode == SelfPlayMode::rft_then_eto) {
        auto sampled = sample_all(result.params, "selfplay-rft");
        std::vector<core::Trajectory> kept;
        for (auto& group : sampled)
            for (auto& t : group)
                if (t.reward >= cfg.success_threshold) kept.push_back(std::move(t));
        result.kept_count = static_cast<int>(kept.size());
        if (kept.empty()) {
            result.empty_training_set = true;
        } else {
            result.params = behavioral_cloning(result.params, kept, spec.vocab, cfg.sft);
        }
        ++phase;
        if (hook) hook("selfplay-rft", phase, result.params);
    }
    if (cfg.mode == SelfPlayMode::eto_only || cfg.mode == SelfPlayMode::rft_then_eto) {
        auto sampled = sample_all(result.params, "selfplay-eto");
        policy::PolicyParams reference = result.params;
        std::vector<losses::FlatPair> pairs;
        for (auto& group : sampled) {
            std::size_t best = 0;
            for (std::size_t s = 1; s < group.size(); ++s)
                if (group[s].reward > group[best].reward) best = s;
            for (std::size_t s = 0; s < group.size(); ++s) {
                if (group[s].reward < group[best].reward) {
                    core::TrajectoryPair pair;
                    pair.instruction = group[best].instruction;
                    pair.winner = group[best];
                    pair.loser = group[s];
                    pairs.push_back(losses::flatten_pair(pair, spec.vocab));
                }
            }
        }
        result.pair_count = static_cast<int>(pairs.size());
        if (pairs.empty()) {
            result.empty_training_set = true;
        } else {
            DpoTrainResult trained =
                dpo_train(std::move(result.params), reference, pairs, {}, spec.vocab, cfg.dpo,
                          derive_seed(cfg.seed, "selfplay-dpo"), nullptr);
            result.params = std::move(trained.params);
        }
        ++phase;
        if (hook) hook("selfplay-eto", phase, result.params);
    }
    return result;
}

}  // namespace etolab::algorithms
