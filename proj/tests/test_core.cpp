#include <set>

#include "doctest.h"
#include "etolab/core.hpp"
#include "etolab/envs.hpp"
#include "etolab/rng.hpp"
#include "test_util.hpp"

using namespace etolab;

TEST_CASE("vocabulary ids are dense and round-trip") {
    core::Vocabulary v = testutil::fuzz_vocab();
    for (int id = 0; id < v.size(); ++id) CHECK(v.lookup(v.token(id)) == id);
    std::set<int> specials = {v.specials().pad,        v.specials().instruction_start,
                              v.specials().action_start, v.specials().action_end,
                              v.specials().observation_start, v.specials().end_of_episode};
    CHECK(specials.size() == 6);
    for (int id : specials) CHECK(v.contains(id));
    CHECK(v.find("zzz") == -1);
    CHECK_THROWS_AS((void)v.lookup("zzz"), core::InvalidTrajectoryError);
}

TEST_CASE("duplicate vocabulary words are rejected") {
    CHECK_THROWS_AS(core::Vocabulary::build({"a", "b", "a"}), core::Error);
}

TEST_CASE("flatten layout and mask counting") {
    core::Vocabulary v = testutil::fuzz_vocab();
    const auto& sp = v.specials();
    core::Trajectory t;
    t.instruction.id = "x";
    t.instruction.env_name = "fuzz";
    t.instruction.tokens = {6, 7};  // u is two tokens
    core::Step step;
    step.action_tokens = {8, 9, 10, sp.action_end};  // three payload tokens
    t.steps.push_back(step);
    t.reward = 1.0;

    core::FlatSequence flat = core::flatten(t, v);
    // ins + u(2) + act + payload(3) + end marker
    CHECK(flat.token_ids.size() == 1 + 2 + 1 + 4);
    int true_count = 0;
    for (auto m : flat.action_mask) true_count += m;
    CHECK(true_count == 3 + 1);
    CHECK(flat.token_ids.front() == sp.instruction_start);
    CHECK(flat.action_mask.front() == 0);
    CHECK(flat.token_ids.back() == sp.action_end);
    CHECK(flat.action_mask.back() == 1);
}

TEST_CASE("flatten mask count matches the toyshop fixture") {
    envs::EnvSpec spec = envs::make_spec(envs::EnvName::toyshop);
    auto [instr, goal] = envs::generate_instruction(spec, core::Split::seen, 0);
    core::Trajectory expert = envs::oracle_expert(spec, instr, goal);
    core::FlatSequence flat = core::flatten(expert, spec.vocab);
    // oracle: brute-force count over the fixture's steps
    std::size_t expected = 0;
    for (const auto& step : expert.steps) expected += step.action_tokens.size();
    std::size_t got = 0;
    for (auto m : flat.action_mask) got += m;
    CHECK(got == expected);
}

TEST_CASE("flatten rejects malformed trajectories") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(7);
    core::Trajectory t = testutil::random_trajectory(v, rng);

    SUBCASE("empty action") {
        t.steps.front().action_tokens.clear();
        CHECK_THROWS_AS(core::flatten(t, v), core::InvalidTrajectoryError);
    }
    SUBCASE("missing end-of-action marker") {
        t.steps.back().action_tokens.pop_back();
        t.steps.back().action_tokens.push_back(6);
        CHECK_THROWS_AS(core::flatten(t, v), core::InvalidTrajectoryError);
    }
    SUBCASE("marker inside the action body") {
        t.steps.back().action_tokens.insert(t.steps.back().action_tokens.begin(),
                                            v.specials().action_end);
        CHECK_THROWS_AS(core::flatten(t, v), core::InvalidTrajectoryError);
    }
    SUBCASE("unknown token id") {
        t.steps.front().action_tokens.front() = v.size() + 3;
        CHECK_THROWS_AS(core::flatten(t, v), core::InvalidTrajectoryError);
    }
    SUBCASE("reward out of range") {
        t.reward = 1.5;
        CHECK_THROWS_AS(core::flatten(t, v), core::InvalidTrajectoryError);
    }
    SUBCASE("observation on the final step") {
        t.steps.back().observation_tokens = std::vector<int>{6};
        CHECK_THROWS_AS(core::flatten(t, v), core::InvalidTrajectoryError);
    }
}

TEST_CASE("flatten round-trips the action segments") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        core::Trajectory t = testutil::random_trajectory(v, rng);
        core::FlatSequence flat = core::flatten(t, v);
        auto segments = core::masked_segments(flat);
        REQUIRE(segments.size() == t.steps.size());
        for (std::size_t s = 0; s < segments.size(); ++s)
            CHECK(segments[s] == t.steps[s].action_tokens);
    }
}

TEST_CASE("pair_from_rollout orders by reward and discards ties") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(13);
    core::Trajectory expert = testutil::random_trajectory(v, rng);
    expert.source = core::Source::expert;
    core::Trajectory rollout = testutil::random_trajectory(v, rng);
    rollout.instruction = expert.instruction;

    SUBCASE("expert wins") {
        expert.reward = 1.0;
        rollout.reward = 0.5;
        auto pair = core::pair_from_rollout(expert, rollout);
        REQUIRE(pair.has_value());
        CHECK(pair->winner.reward == 1.0);
        CHECK(pair->loser.reward == 0.5);
        CHECK(pair->winner.source == core::Source::expert);
    }
    SUBCASE("tie is discarded") {
        expert.reward = 1.0;
        rollout.reward = 1.0;
        CHECK_FALSE(core::pair_from_rollout(expert, rollout).has_value());
    }
    SUBCASE("zero-reward tie is discarded") {
        expert.reward = 0.0;
        rollout.reward = 0.0;
        CHECK_FALSE(core::pair_from_rollout(expert, rollout).has_value());
    }
    SUBCASE("rollout can win") {
        expert.reward = 0.6;
        rollout.reward = 0.9;
        auto pair = core::pair_from_rollout(expert, rollout);
        REQUIRE(pair.has_value());
        CHECK(pair->winner.source == core::Source::rollout);
        CHECK(pair->loser.source == core::Source::expert);
    }
    SUBCASE("mismatched instructions throw") {
        rollout.instruction.id = "other";
        CHECK_THROWS_AS((void)core::pair_from_rollout(expert, rollout), core::PairingError);
    }
}

TEST_CASE("pair_from_rollout agrees with a brute-force reference") {
    core::Vocabulary v = testutil::fuzz_vocab();
    Rng rng(17);
    for (int i = 0; i < 500; ++i) {
        core::Trajectory expert = testutil::random_trajectory(v, rng);
        expert.source = core::Source::expert;
        expert.reward = static_cast<double>(rng.index(5)) / 4.0;
        core::Trajectory rollout = testutil::random_trajectory(v, rng);
        rollout.instruction = expert.instruction;
        rollout.reward = static_cast<double>(rng.index(5)) / 4.0;
        auto pair = core::pair_from_rollout(expert, rollout);
        if (expert.reward == rollout.reward) {
            CHECK_FALSE(pair.has_value());
        } else {
            REQUIRE(pair.has_value());
            double hi = expert.reward > rollout.reward ? expert.reward : rollout.reward;
            double lo = expert.reward < rollout.reward ? expert.reward : rollout.reward;
            CHECK(pair->winner.reward == hi);
            CHECK(pair->loser.reward == lo);
            CHECK(pair->winner.reward > pair->loser.reward);
            CHECK(pair->instruction.id == expert.instruction.id);
        }
    }
}

TEST_CASE("trajectory records round-trip through json lines") {
    envs::EnvSpec spec = envs::make_spec(envs::EnvName::toylab);
    auto [instr, goal] = envs::generate_instruction(spec, core::Split::seen, 3);
    core::Trajectory expert = envs::oracle_expert(spec, instr, goal);

    core::TrajectoryRecord record = core::to_record(expert, spec.vocab);
    CHECK(record.instruction_id == instr.id);
    CHECK(record.env == "toylab");
    CHECK(record.steps.back().observation.has_value() == false);

    std::string line = core::to_json_line(record);
    core::TrajectoryRecord parsed = core::record_from_json_line(line);
    core::Trajectory back = core::from_record(parsed, spec.vocab, instr);
    REQUIRE(back.steps.size() == expert.steps.size());
    for (std::size_t s = 0; s < back.steps.size(); ++s) {
        CHECK(back.steps[s].action_tokens == expert.steps[s].action_tokens);
        CHECK(back.steps[s].observation_tokens == expert.steps[s].observation_tokens);
    }
    CHECK(back.reward == expert.reward);
    CHECK(back.source == expert.source);
}
