#include <cmath>

#include "doctest.h"
#include "etolab/core.hpp"
#include "etolab/losses.hpp"
#include "etolab/policy.hpp"
#include "etolab/rng.hpp"
#include "test_util.hpp"

using namespace etolab;

namespace {

policy::Arch small_arch(const core::Vocabulary& v) { return {v.size(), 4, 8, 8}; }

core::TrajectoryPair random_pair(const core::Vocabulary& vocab, Rng& rng) {
    core::Trajectory expert = testutil::random_trajectory(vocab, rng);
    expert.reward = 1.0;
    expert.source = core::Source::expert;
    core::Trajectory worse = testutil::random_trajectory(vocab, rng);
    worse.instruction = expert.instruction;
    worse.reward = 0.25;
    return {expert.instruction, expert, worse};
}

}  // namespace

TEST_CASE("sft loss on a uniform policy equals the masked count times log V") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(21);
    policy::PolicyParams p = policy::zero_params(small_arch(v));
    std::vector<core::FlatSequence> batch;
    double expected = 0.0;
    for (int i = 0; i < 4; ++i) {
        core::Trajectory t = testutil::random_trajectory(v, rng);
        core::FlatSequence flat = core::flatten(t, v);
        int masked = 0;
        for (auto m : flat.action_mask) masked += m;
        expected += masked * std::log(static_cast<double>(v.size()));
        batch.push_back(std::move(flat));
    }
    expected /= 4.0;
    losses::LossValue loss = losses::sft_loss(p, batch, v);
    CHECK(loss.value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss.value >= 0.0);
}

TEST_CASE("sft loss gradient passes the finite-difference check") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(22);
    policy::PolicyParams p = policy::init_params(small_arch(v), rng.next());
    std::vector<core::FlatSequence> batch;
    for (int i = 0; i < 3; ++i)
        batch.push_back(core::flatten(testutil::random_trajectory(v, rng), v));
    double rel = losses::grad_check(
        [&](const policy::PolicyParams& q) { return losses::sft_loss(q, batch, v); }, p, 1e-5,
        250, rng.next());
    CHECK(rel < 1e-4);
}

TEST_CASE("dpo loss equals ln 2 when the policy is its own reference") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(23);
    policy::PolicyParams p = policy::init_params(small_arch(v), rng.next());
    std::vector<core::TrajectoryPair> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(random_pair(v, rng));
    for (double beta : {0.1, 0.5, 2.0}) {
        losses::DpoConfig cfg{beta, p};
        losses::LossValue loss = losses::dpo_loss(p, cfg, batch, v);
        CHECK(std::abs(loss.value - std::log(2.0)) < 1e-9);
    }
}

TEST_CASE("dpo closed forms at margin +-2") {
    CHECK(std::abs(-std::log(1.0 / (1.0 + std::exp(-2.0))) - 0.126928) < 1e-6);
    // the loss itself: construct a margin of exactly +-2 via output biases
    core::Vocabulary v = testutil::fuzz_vocab();
    policy::Arch arch = small_arch(v);
    const auto& sp = v.specials();

    core::Trajectory win;
    win.instruction.id = "m";
    win.instruction.env_name = "fuzz";
    win.instruction.tokens = {6};
    core::Step wstep;
    wstep.action_tokens = {7, sp.action_end};
    win.steps.push_back(wstep);
    win.reward = 1.0;
    core::Trajectory lose = win;
    lose.steps.front().action_tokens = {8, sp.action_end};
    lose.reward = 0.0;
    core::TrajectoryPair pair{win.instruction, win, lose};
    std::vector<core::TrajectoryPair> batch = {pair};

    // logit difference of 2 between the two action words; the end marker and
    // reference contributions cancel
    policy::PolicyParams p = policy::zero_params(arch);
    const std::int64_t b2_at = arch.param_count() - arch.vocab_size;
    p.theta[static_cast<std::size_t>(b2_at + 7)] = 1.0;
    p.theta[static_cast<std::size_t>(b2_at + 8)] = -1.0;
    losses::DpoConfig cfg{1.0, policy::zero_params(arch)};
    losses::LossValue loss = losses::dpo_loss(p, cfg, batch, v);
    CHECK(std::abs(loss.value - std::log(1.0 + std::exp(-2.0))) < 1e-9);

    std::swap(batch.front().winner, batch.front().loser);
    batch.front().winner.reward = 1.0;
    batch.front().loser.reward = 0.0;
    losses::LossValue flipped = losses::dpo_loss(p, cfg, batch, v);
    CHECK(std::abs(flipped.value - std::log(1.0 + std::exp(2.0))) < 1e-9);
}

TEST_CASE("dpo loss decreases when the winner margin grows") {
    core::Vocabulary v = testutil::fuzz_vocab();
    policy::Arch arch = small_arch(v);
    core::Trajectory win;
    win.instruction.id = "m";
    win.instruction.env_name = "fuzz";
    win.instruction.tokens = {6};
    core::Step step;
    step.action_tokens = {7, v.specials().action_end};
    win.steps.push_back(step);
    win.reward = 1.0;
    core::Trajectory lose = win;
    lose.steps.front().action_tokens = {8, v.specials().action_end};
    lose.reward = 0.0;
    std::vector<core::TrajectoryPair> batch = {{win.instruction, win, lose}};
    losses::DpoConfig cfg{0.5, policy::zero_params(arch)};

    const std::int64_t b2_at = arch.param_count() - arch.vocab_size;
    double prev = std::log(2.0) + 1.0;
    for (double bump : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        policy::PolicyParams p = policy::zero_params(arch);
        p.theta[static_cast<std::size_t>(b2_at + 7)] = bump;  // raise only the winner token
        losses::LossValue loss = losses::dpo_loss(p, cfg, batch, v);
        CHECK(loss.value < prev);
        prev = loss.value;
    }
}

TEST_CASE("dpo rejects pairs that violate the reward ordering") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(24);
    policy::PolicyParams p = policy::init_params(small_arch(v), rng.next());
    core::TrajectoryPair pair = random_pair(v, rng);
    std::swap(pair.winner, pair.loser);  // loser now outranks the winner
    std::vector<core::TrajectoryPair> batch = {pair};
    losses::DpoConfig cfg{0.1, p};
    CHECK_THROWS_AS((void)losses::dpo_loss(p, cfg, batch, v), losses::TrainingError);
}

TEST_CASE("dpo gradient passes the finite-difference check") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(25);
    policy::PolicyParams p = policy::init_params(small_arch(v), rng.next());
    std::vector<core::TrajectoryPair> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_pair(v, rng));
    losses::DpoConfig cfg{0.1, policy::init_params(small_arch(v), rng.next())};
    double rel = losses::grad_check(
        [&](const policy::PolicyParams& q) { return losses::dpo_loss(q, cfg, batch, v); }, p,
        1e-5, 250, rng.next());
    CHECK(rel < 1e-4);
}

TEST_CASE("bradley-terry preference probabilities") {
    CHECK(losses::bt_preference_prob(1.0, 0.0) ==
          doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-9));
    CHECK(losses::bt_preference_prob(1.0, 0.0) == doctest::Approx(0.731059).epsilon(1e-5));
    CHECK(losses::bt_preference_prob(0.4, 0.4) == 0.5);
    CHECK(losses::bt_preference_prob(0.9, 0.3) == doctest::Approx(0.645656).epsilon(1e-5));
    Rng rng(26);
    for (int i = 0; i < 100; ++i) {
        double a = rng.uniform(), b = rng.uniform();
        CHECK(losses::bt_preference_prob(a, b) + losses::bt_preference_prob(b, a) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("stepwise dpo equals ln 2 at the reference and hits the closed form") {
    core::Vocabulary v = testutil::fuzz_vocab();
    policy::Arch arch = small_arch(v);
    Rng rng(27);

    losses::StepwiseItem item;
    item.instruction.id = "s";
    item.instruction.env_name = "fuzz";
    item.instruction.tokens = {6, 9};
    core::Step prefix_step;
    prefix_step.action_tokens = {10, v.specials().action_end};
    prefix_step.observation_tokens = std::vector<int>{11, 6};
    item.prefix = {prefix_step};
    item.winner_action = {7, v.specials().action_end};
    item.loser_action = {8, v.specials().action_end};
    std::vector<losses::StepwiseItem> batch = {item};

    SUBCASE("reference identity") {
        policy::PolicyParams p = policy::init_params(arch, rng.next());
        losses::DpoConfig cfg{0.5, p};
        losses::LossValue loss = losses::stepwise_dpo_loss(p, cfg, batch, v);
        CHECK(std::abs(loss.value - std::log(2.0)) < 1e-9);
    }
    SUBCASE("hand-set logits give -log sigmoid(beta)") {
        // single-token margin of exactly 1 from the output biases
        policy::PolicyParams p = policy::zero_params(arch);
        const std::int64_t b2_at = arch.param_count() - arch.vocab_size;
        p.theta[static_cast<std::size_t>(b2_at + 7)] = 0.7;
        p.theta[static_cast<std::size_t>(b2_at + 8)] = -0.3;
        for (double beta : {0.25, 0.5, 1.0}) {
            losses::DpoConfig cfg{beta, policy::zero_params(arch)};
            losses::LossValue loss = losses::stepwise_dpo_loss(p, cfg, batch, v);
            double expected = -std::log(1.0 / (1.0 + std::exp(-beta)));
            CHECK(std::abs(loss.value - expected) < 1e-9);
        }
    }
    SUBCASE("identical actions are a contract violation") {
        batch.front().loser_action = batch.front().winner_action;
        policy::PolicyParams p = policy::init_params(arch, rng.next());
        losses::DpoConfig cfg{0.5, p};
        CHECK_THROWS_AS((void)losses::stepwise_dpo_loss(p, cfg, batch, v),
                        losses::TrainingError);
    }
    SUBCASE("gradient check") {
        policy::PolicyParams p = policy::init_params(arch, rng.next());
        losses::DpoConfig cfg{0.5, policy::init_params(arch, rng.next())};
        double rel = losses::grad_check(
            [&](const policy::PolicyParams& q) {
                return losses::stepwise_dpo_loss(q, cfg, batch, v);
            },
            p, 1e-5, 250, rng.next());
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("kl-regularized return reduces to the reward at the reference") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(28);
    policy::PolicyParams p = policy::init_params(small_arch(v), rng.next());
    policy::PolicyParams other = policy::init_params(small_arch(v), rng.next());
    core::Trajectory t = testutil::random_trajectory(v, rng);

    CHECK(losses::kl_regularized_return(p, p, t, 0.3, v) == doctest::Approx(t.reward));
    CHECK(losses::kl_regularized_return(p, other, t, 0.0, v) == doctest::Approx(t.reward));

    // straight-line recomputation of the token log-prob difference sum
    core::FlatSequence flat = core::flatten(t, v);
    std::vector<double> lp_policy, lp_ref;
    policy::trajectory_logprob(p, flat, v, &lp_policy);
    policy::trajectory_logprob(other, flat, v, &lp_ref);
    double kl_sum = 0.0;
    for (std::size_t k = 0; k < lp_policy.size(); ++k) kl_sum += lp_policy[k] - lp_ref[k];
    double beta = 0.7;
    CHECK(losses::kl_regularized_return(p, other, t, beta, v) ==
          doctest::Approx(t.reward - beta * kl_sum).epsilon(1e-12));
}

TEST_CASE("adamw first step and schedule behavior") {
    policy::Arch arch{12, 4, 8, 8};

    SUBCASE("zero gradient leaves parameters unchanged") {
        policy::PolicyParams p = policy::init_params(arch, 1);
        policy::PolicyParams before = p;
        losses::AdamW opt(p.theta.size(), 1e-3);
        std::vector<double> zero(p.theta.size(), 0.0);
        opt.step(p, zero);
        CHECK(p.theta == before.theta);
    }
    SUBCASE("first step moves by -lr sign(g)") {
        policy::PolicyParams p = policy::zero_params(arch);
        losses::AdamW opt(p.theta.size(), 1e-3);
        std::vector<double> grad(p.theta.size(), 0.0);
        grad[3] = 0.5;
        grad[7] = -2.0;
        opt.step(p, grad);
        CHECK(p.theta[3] == doctest::Approx(-1e-3).epsilon(1e-4));
        CHECK(p.theta[7] == doctest::Approx(1e-3).epsilon(1e-4));
        CHECK(p.theta[0] == 0.0);
    }
    SUBCASE("warmup starts at learning rate zero") {
        losses::AdamW opt(4, 1e-3, 0.0, 0.03, 100);
        CHECK(opt.current_lr() == 0.0);
        policy::PolicyParams p = policy::zero_params({1, 1, 1, 1});
        p.theta.assign(4, 1.0);
        std::vector<double> grad(4, 1.0);
        opt.step(p, grad);
        for (double w : p.theta) CHECK(w == 1.0);
        CHECK(opt.current_lr() > 0.0);
    }
    SUBCASE("cosine schedule decays to zero at the horizon") {
        losses::AdamW opt(1, 1.0, 0.0, 0.0, 10);
        policy::PolicyParams p = policy::zero_params({1, 1, 1, 1});
        p.theta.assign(1, 0.0);
        std::vector<double> grad(1, 1.0);
        CHECK(opt.current_lr() == doctest::Approx(1.0));
        for (int i = 0; i < 10; ++i) opt.step(p, grad);
        CHECK(opt.current_lr() == 0.0);
    }
    SUBCASE("non-finite gradients abort") {
        policy::PolicyParams p = policy::zero_params(arch);
        losses::AdamW opt(p.theta.size(), 1e-3);
        std::vector<double> grad(p.theta.size(), 0.0);
        grad[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(opt.step(p, grad), losses::TrainingError);
    }
}

TEST_CASE("global-norm clipping") {
    std::vector<double> grad = {3.0, 4.0};  // norm 5
    double norm = losses::clip_global_norm(grad, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(grad[0] == doctest::Approx(0.6));
    CHECK(grad[1] == doctest::Approx(0.8));
    std::vector<double> small = {0.1, 0.1};
    losses::clip_global_norm(small, 1.0);
    CHECK(small[0] == 0.1);
}

TEST_CASE("grad_check flags a corrupted gradient") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(29);
    policy::PolicyParams p = policy::init_params(small_arch(v), rng.next());
    std::vector<core::FlatSequence> batch = {
        core::flatten(testutil::random_trajectory(v, rng), v)};

    // find a coordinate with a solidly nonzero gradient, then corrupt it
    losses::LossValue healthy = losses::sft_loss(p, batch, v);
    std::int64_t worst = 0;
    for (std::size_t i = 0; i < healthy.grad.size(); ++i)
        if (std::abs(healthy.grad[i]) > std::abs(healthy.grad[static_cast<std::size_t>(worst)]))
            worst = static_cast<std::int64_t>(i);
    std::vector<std::int64_t> coords = {worst};

    auto corrupted = [&](const policy::PolicyParams& q) {
        losses::LossValue out = losses::sft_loss(q, batch, v);
        out.grad[static_cast<std::size_t>(worst)] *= 2.0;
        return out;
    };
    CHECK(losses::grad_check(corrupted, p, 1e-5, 1, 0, coords) > 1e-2);
    auto clean = [&](const policy::PolicyParams& q) { return losses::sft_loss(q, batch, v); };
    CHECK(losses::grad_check(clean, p, 1e-5, 1, 0, coords) < 1e-4);
}
