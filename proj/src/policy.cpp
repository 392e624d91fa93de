#include "etolab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "etolab/rng.hpp"

namespace etolab::policy {

namespace {

struct Layout {
    std::int64_t emb, w1, b1, w2, b2, total;
    explicit Layout(const Arch& a) {
        std::int64_t v = a.vocab_size, d = a.embed_dim, w = a.window, h = a.hidden;
        emb = 0;
        w1 = emb + v * d;
        b1 = w1 + (w * d) * h;
        w2 = b1 + h;
        b2 = w2 + h * v;
        total = b2 + v;
    }
};

void check_params(const PolicyParams& params) {
    if (params.arch.vocab_size <= 0 || params.arch.embed_dim <= 0 || params.arch.window <= 0 ||
        params.arch.hidden <= 0)
        throw PolicyError("bad architecture descriptor");
    if (static_cast<std::int64_t>(params.theta.size()) != params.arch.param_count())
        throw PolicyError("parameter vector does not match the architecture");
}

// Fills ctx (length W) with the last W entries of prefix, left-padded.
void window_of(std::span<const int> prefix, int window, int pad, std::vector<int>& ctx) {
    ctx.assign(static_cast<std::size_t>(window), pad);
    std::size_t n = std::min<std::size_t>(prefix.size(), static_cast<std::size_t>(window));
    std::copy(prefix.end() - static_cast<std::ptrdiff_t>(n), prefix.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(n));
}

struct Forward {
    std::vector<double> hidden_pre;  // h
    std::vector<double> hidden;      // tanh
    std::vector<double> logits;      // V
};

void forward_pass(const PolicyParams& params, std::span<const int> ctx, Forward& f) {
    const Arch& a = params.arch;
    const Layout lay(a);
    const double* theta = params.theta.data();
    f.hidden_pre.assign(static_cast<std::size_t>(a.hidden), 0.0);
    // W1 is stored row-major as [input][hidden]; walk inputs (embeddings) and
    // accumulate into the hidden vector so the embedding gather is implicit.
    for (int p = 0; p < a.window; ++p) {
        const double* emb = theta + lay.emb + static_cast<std::int64_t>(ctx[static_cast<std::size_t>(p)]) * a.embed_dim;
        for (int e = 0; e < a.embed_dim; ++e) {
            const double x = emb[e];
            if (x == 0.0) continue;
            const double* row = theta + lay.w1 + static_cast<std::int64_t>(p * a.embed_dim + e) * a.hidden;
            for (int j = 0; j < a.hidden; ++j) f.hidden_pre[static_cast<std::size_t>(j)] += x * row[j];
        }
    }
    f.hidden.resize(static_cast<std::size_t>(a.hidden));
    for (int j = 0; j < a.hidden; ++j) {
        f.hidden_pre[static_cast<std::size_t>(j)] += theta[lay.b1 + j];
        f.hidden[static_cast<std::size_t>(j)] = std::tanh(f.hidden_pre[static_cast<std::size_t>(j)]);
    }
    f.logits.assign(static_cast<std::size_t>(a.vocab_size), 0.0);
    for (int j = 0; j < a.hidden; ++j) {
        const double z = f.hidden[static_cast<std::size_t>(j)];
        if (z == 0.0) continue;
        const double* row = theta + lay.w2 + static_cast<std::int64_t>(j) * a.vocab_size;
        for (int t = 0; t < a.vocab_size; ++t) f.logits[static_cast<std::size_t>(t)] += z * row[t];
    }
    for (int t = 0; t < a.vocab_size; ++t) f.logits[static_cast<std::size_t>(t)] += theta[lay.b2 + t];
}

// log softmax with max subtraction; returns log Z and writes probs.
double softmax_stats(const std::vector<double>& logits, std::vector<double>& probs) {
    double m = logits[0];
    for (double z : logits) m = std::max(m, z);
    double sum = 0.0;
    probs.resize(logits.size());
    for (std::size_t t = 0; t < logits.size(); ++t) {
        probs[t] = std::exp(logits[t] - m);
        sum += probs[t];
    }
    for (auto& p : probs) p /= sum;
    return m + std::log(sum);
}

void check_tokens(std::span<const int> ids, int vocab_size) {
    for (int id : ids) {
        if (id < 0 || id >= vocab_size)
            throw PolicyError("token id outside the policy vocabulary: " + std::to_string(id));
    }
}

}  // namespace

PolicyParams zero_params(const Arch& arch) {
    PolicyParams p;
    p.arch = arch;
    p.theta.assign(static_cast<std::size_t>(arch.param_count()), 0.0);
    return p;
}

PolicyParams init_params(const Arch& arch, std::uint64_t seed) {
    PolicyParams p = zero_params(arch);
    Layout lay(arch);
    Rng rng(derive_seed(seed, "policy-init"));
    const double emb_scale = 0.3;
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(arch.window * arch.embed_dim));
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    for (std::int64_t i = lay.emb; i < lay.w1; ++i) p.theta[static_cast<std::size_t>(i)] = emb_scale * rng.gaussian();
    for (std::int64_t i = lay.w1; i < lay.b1; ++i) p.theta[static_cast<std::size_t>(i)] = w1_scale * rng.gaussian();
    for (std::int64_t i = lay.w2; i < lay.b2; ++i) p.theta[static_cast<std::size_t>(i)] = w2_scale * rng.gaussian();
    return p;
}

std::vector<double> token_logits(const PolicyParams& params, std::span<const int> context,
                                 const core::Vocabulary& vocab) {
    check_params(params);
    check_tokens(context, params.arch.vocab_size);
    std::vector<int> ctx;
    window_of(context, params.arch.window, vocab.specials().pad, ctx);
    Forward f;
    forward_pass(params, ctx, f);
    return f.logits;
}

double trajectory_logprob(const PolicyParams& params, const core::FlatSequence& flat,
                          const core::Vocabulary& vocab, std::vector<double>* per_position) {
    check_params(params);
    check_tokens(flat.token_ids, params.arch.vocab_size);
    if (flat.token_ids.size() != flat.action_mask.size())
        throw PolicyError("mask length does not match token length");
    if (per_position) per_position->assign(flat.token_ids.size(), 0.0);
    double total = 0.0;
    std::vector<int> ctx;
    Forward f;
    std::vector<double> probs;
    for (std::size_t k = 0; k < flat.token_ids.size(); ++k) {
        if (!flat.action_mask[k]) continue;
        std::span<const int> prefix(flat.token_ids.data(), k);
        window_of(prefix, params.arch.window, vocab.specials().pad, ctx);
        forward_pass(params, ctx, f);
        double log_z = softmax_stats(f.logits, probs);
        double lp = f.logits[static_cast<std::size_t>(flat.token_ids[k])] - log_z;
        total += lp;
        if (per_position) (*per_position)[k] = lp;
    }
    return total;
}

void backprop_logit_grads(const PolicyParams& params, const core::FlatSequence& flat,
                          const core::Vocabulary& vocab, const LogitGradFn& provider,
                          std::span<double> grad) {
    check_params(params);
    check_tokens(flat.token_ids, params.arch.vocab_size);
    if (grad.size() != params.theta.size())
        throw PolicyError("gradient buffer does not match the parameter count");
    const Arch& a = params.arch;
    const Layout lay(a);
    const double* theta = params.theta.data();
    std::vector<int> ctx;
    Forward f;
    std::vector<double> probs;
    std::vector<double> dlogits(static_cast<std::size_t>(a.vocab_size));
    std::vector<double> dhidden(static_cast<std::size_t>(a.hidden));
    for (std::size_t k = 0; k < flat.token_ids.size(); ++k) {
        if (!flat.action_mask[k]) continue;
        std::span<const int> prefix(flat.token_ids.data(), k);
        window_of(prefix, a.window, vocab.specials().pad, ctx);
        forward_pass(params, ctx, f);
        double log_z = softmax_stats(f.logits, probs);
        provider(k, f.logits, log_z, probs, dlogits);
        // output layer
        for (int j = 0; j < a.hidden; ++j) {
            const double z = f.hidden[static_cast<std::size_t>(j)];
            const double* row = theta + lay.w2 + static_cast<std::int64_t>(j) * a.vocab_size;
            double* grow = grad.data() + lay.w2 + static_cast<std::int64_t>(j) * a.vocab_size;
            double acc = 0.0;
            for (int t = 0; t < a.vocab_size; ++t) {
                const double dl = dlogits[static_cast<std::size_t>(t)];
                grow[t] += z * dl;
                acc += row[t] * dl;
            }
            dhidden[static_cast<std::size_t>(j)] = acc * (1.0 - z * z);  // through tanh
        }
        for (int t = 0; t < a.vocab_size; ++t) grad[static_cast<std::size_t>(lay.b2 + t)] += dlogits[static_cast<std::size_t>(t)];
        // hidden layer and embeddings
        for (int j = 0; j < a.hidden; ++j) grad[static_cast<std::size_t>(lay.b1 + j)] += dhidden[static_cast<std::size_t>(j)];
        for (int p = 0; p < a.window; ++p) {
            const int tok = ctx[static_cast<std::size_t>(p)];
            const double* emb = theta + lay.emb + static_cast<std::int64_t>(tok) * a.embed_dim;
            double* gemb = grad.data() + lay.emb + static_cast<std::int64_t>(tok) * a.embed_dim;
            for (int e = 0; e < a.embed_dim; ++e) {
                const std::int64_t row_at = lay.w1 + static_cast<std::int64_t>(p * a.embed_dim + e) * a.hidden;
                const double* row = theta + row_at;
                double* grow = grad.data() + row_at;
                const double x = emb[e];
                double acc = 0.0;
                for (int j = 0; j < a.hidden; ++j) {
                    const double dh = dhidden[static_cast<std::size_t>(j)];
                    grow[j] += x * dh;
                    acc += row[j] * dh;
                }
                gemb[e] += acc;
            }
        }
    }
}

double accumulate_logprob_grad(const PolicyParams& params, const core::FlatSequence& flat,
                               const core::Vocabulary& vocab, double scale,
                               std::span<double> grad) {
    double total = 0.0;
    backprop_logit_grads(
        params, flat, vocab,
        [&](std::size_t k, const std::vector<double>& logits, double log_z,
            const std::vector<double>& probs, std::vector<double>& dlogits) {
            int target = flat.token_ids[k];
            total += logits[static_cast<std::size_t>(target)] - log_z;
            for (std::size_t t = 0; t < probs.size(); ++t)
                dlogits[t] = scale * ((static_cast<int>(t) == target ? 1.0 : 0.0) - probs[t]);
        },
        grad);
    return total;
}

std::vector<double> trajectory_logprob_grad(const PolicyParams& params,
                                            const core::FlatSequence& flat,
                                            const core::Vocabulary& vocab, double* logprob_out) {
    std::vector<double> grad(params.theta.size(), 0.0);
    double lp = accumulate_logprob_grad(params, flat, vocab, 1.0, grad);
    if (logprob_out) *logprob_out = lp;
    return grad;
}

core::Trajectory rollout_with_prefix(const PolicyParams& params, const envs::EnvSpec& spec,
                                     const core::Instruction& instruction,
                                     std::span<const core::Step> forced_prefix,
                                     const RolloutConfig& cfg) {
    check_params(params);
    if (params.arch.vocab_size != spec.vocab.size())
        throw PolicyError("policy vocabulary size does not match the environment");
    if (cfg.temperature < 0.0) throw PolicyError("negative temperature");
    const auto& sp = spec.vocab.specials();
    envs::Episode episode(spec, instruction);
    Rng rng(derive_seed(cfg.seed, "rollout"));

    std::vector<int> stream;
    stream.push_back(sp.instruction_start);
    stream.insert(stream.end(), instruction.tokens.begin(), instruction.tokens.end());

    core::Trajectory t;
    t.instruction = instruction;
    t.source = core::Source::rollout;
    t.seed = static_cast<std::int64_t>(cfg.seed);

    for (const core::Step& forced : forced_prefix) {
        if (episode.done()) throw PolicyError("forced prefix overruns the episode");
        stream.push_back(sp.action_start);
        stream.insert(stream.end(), forced.action_tokens.begin(), forced.action_tokens.end());
        core::Step step;
        step.action_tokens = forced.action_tokens;
        auto obs = episode.step(forced.action_tokens);
        if (!episode.done()) {
            step.observation_tokens = obs;
            stream.push_back(sp.observation_start);
            stream.insert(stream.end(), obs.begin(), obs.end());
        }
        t.steps.push_back(std::move(step));
    }

    std::vector<int> ctx;
    Forward f;
    std::vector<double> probs;
    while (!episode.done()) {
        stream.push_back(sp.action_start);
        core::Step step;
        for (int produced = 0; produced < cfg.action_token_budget; ++produced) {
            window_of(stream, params.arch.window, sp.pad, ctx);
            forward_pass(params, ctx, f);
            int tok;
            if (cfg.temperature == 0.0) {
                tok = 0;
                for (int i = 1; i < params.arch.vocab_size; ++i)
                    if (f.logits[static_cast<std::size_t>(i)] > f.logits[static_cast<std::size_t>(tok)]) tok = i;
            } else {
                for (auto& z : f.logits) z /= cfg.temperature;
                softmax_stats(f.logits, probs);
                double u = rng.uniform();
                double acc = 0.0;
                tok = params.arch.vocab_size - 1;
                for (int i = 0; i < params.arch.vocab_size; ++i) {
                    acc += probs[static_cast<std::size_t>(i)];
                    if (u < acc) {
                        tok = i;
                        break;
                    }
                }
            }
            step.action_tokens.push_back(tok);
            stream.push_back(tok);
            if (tok == sp.action_end) break;
        }
        if (step.action_tokens.back() != sp.action_end) {
            // budget exhausted: force-terminate the action
            step.action_tokens.push_back(sp.action_end);
            stream.push_back(sp.action_end);
        }
        auto obs = episode.step(step.action_tokens);
        if (!episode.done()) {
            step.observation_tokens = obs;
            stream.push_back(sp.observation_start);
            stream.insert(stream.end(), obs.begin(), obs.end());
        }
        t.steps.push_back(std::move(step));
    }
    t.reward = episode.final_reward();
    return t;
}

core::Trajectory rollout(const PolicyParams& params, const envs::EnvSpec& spec,
                         const core::Instruction& instruction, const RolloutConfig& cfg) {
    return rollout_with_prefix(params, spec, instruction, {}, cfg);
}

void save_checkpoint(const std::string& path, const PolicyParams& params,
                     std::uint64_t vocab_hash) {
    check_params(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PolicyError("cannot open " + path + " for writing");
    const char magic[8] = {'e', 't', 'o', 'c', 'k', 'p', 't', '1'};
    out.write(magic, sizeof magic);
    std::int64_t header[5] = {params.arch.vocab_size, params.arch.embed_dim, params.arch.window,
                              params.arch.hidden, static_cast<std::int64_t>(vocab_hash)};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(params.theta.data()),
              static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
    if (!out) throw PolicyError("short write to " + path);
}

PolicyParams load_checkpoint(const std::string& path, std::uint64_t expected_vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PolicyError("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, "etockpt1", 8) != 0)
        throw PolicyError(path + " is not a policy checkpoint");
    std::int64_t header[5];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in) throw PolicyError("truncated checkpoint header in " + path);
    PolicyParams params;
    params.arch.vocab_size = static_cast<int>(header[0]);
    params.arch.embed_dim = static_cast<int>(header[1]);
    params.arch.window = static_cast<int>(header[2]);
    params.arch.hidden = static_cast<int>(header[3]);
    if (static_cast<std::uint64_t>(header[4]) != expected_vocab_hash)
        throw PolicyError("checkpoint vocabulary hash does not match " + path);
    params.theta.resize(static_cast<std::size_t>(params.arch.param_count()));
    in.read(reinterpret_cast<char*>(params.theta.data()),
            static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
    if (!in) throw PolicyError("truncated checkpoint payload in " + path);
    return params;
}

}  // namespace etolab::policy
