#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "etolab/core.hpp"

namespace etolab::envs {

struct EnvError : core::Error {
    using core::Error::Error;
};

enum class EnvName { toyshop, toylab, toyhouse };
enum class RewardKind { dense_match, dense_subgoal, binary };

std::string to_string(EnvName name);
EnvName env_from_string(std::string_view name);

/// Half-open seed interval.
struct SeedRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    bool contains(std::int64_t s) const { return s >= lo && s < hi; }
};

// --- static world data ---------------------------------------------------

struct ShopItem {
    std::string id;
    int category = 0;          // index into catalog categories
    int material = 0;          // vocab id
    int price = 0;             // dollars, multiple of 10
    std::array<int, 2> colors{};  // vocab ids, the purchasable variants
    std::array<int, 2> sizes{};
};

struct ShopCatalog {
    std::vector<std::string> categories;  // seen first, then unseen
    int seen_categories = 0;
    std::vector<ShopItem> items;  // grouped by category, 5 per category
};

/// Environment parameters: vocabulary, step cap, reward family, seed split
/// ranges, and the fixed world tables the instances are drawn from.
struct EnvSpec {
    EnvName name = EnvName::toyshop;
    int max_steps = 0;
    RewardKind reward_kind = RewardKind::dense_match;
    core::Vocabulary vocab;
    SeedRange seen_seeds;
    SeedRange unseen_seeds;
    ShopCatalog catalog;  // toyshop only
};

EnvSpec make_spec(EnvName name);
inline EnvSpec make_spec(std::string_view name) { return make_spec(env_from_string(name)); }

// --- goals ----------------------------------------------------------------

struct ShopGoal {
    int item_index = 0;  // target in the catalog
    int color = 0;       // required option values (vocab ids)
    int size = 0;
    int material = 0;
    int price_bound = 0;  // dollars
};

struct LabGoal {
    int task = 0;      // task word id; also selects the instrument
    int object = 0;    // sample word id
    int object_room = 0;  // 0 = lab, 1 = store
    int start_room = 0;
};

struct HouseGoal {
    int task = 0;        // 0 = put, 1 = clean, 2 = heat
    int object = 0;      // vocab id
    int object_room = 0; // room index
    int in_receptacle = 0;  // 1 if the object starts inside the room's receptacle
    int target_room = 0;
    int start_room = 0;
};

using Goal = std::variant<ShopGoal, LabGoal, HouseGoal>;

// Deterministic instance generator. The unseen split draws its goal
// components (categories, attribute values, sample objects) from pools
// disjoint from the seen split. Seeds outside the split's configured range
// are rejected.
std::pair<core::Instruction, Goal> generate_instruction(const EnvSpec& spec, core::Split split,
                                                        std::int64_t seed);

// Rebuilds the instruction (and internally its goal) from an id of the form
// "<env>-<split>-<seed>"; used when loading persisted trajectories.
core::Instruction instruction_from_id(const EnvSpec& spec, std::string_view id);

// --- episodes ---------------------------------------------------------------

/// A single running episode: owns the latent state, applies action token
/// sequences, and reports the final reward once done. Instances are
/// single-owner; create one per rollout.
class Episode {
public:
    Episode(const EnvSpec& spec, const core::Instruction& instruction);

    const std::vector<int>& observation() const { return observation_; }
    bool done() const { return done_; }
    int steps_taken() const { return steps_; }

    // Applies one action (with or without its trailing end-of-action marker)
    // and returns the new observation tokens. Unknown or ill-formed actions
    // leave the latent state unchanged and observe "nothing". Throws
    // EnvError when called on a finished episode.
    const std::vector<int>& step(std::span<const int> action_tokens);

    // Defined once done() is true; throws otherwise.
    double final_reward() const;
    // Terminal-success flag: toylab = all subgoals complete, toyhouse = goal
    // satisfied, toyshop = reward 1.0.
    bool success() const;
    // Cumulative reward after each action taken so far (non-decreasing for
    // subgoal environments, jump-at-the-end otherwise).
    const std::vector<double>& reward_curve() const { return curve_; }

    const EnvSpec& spec() const { return *spec_; }
    const Goal& goal() const { return goal_; }

private:
    struct ShopState {
        enum class Page { search, results, product };
        Page page = Page::search;
        int results_category = -1;  // category listed on the results page
        int product = -1;           // catalog index currently viewed
        int chosen_color = -1;      // -1 = unselected
        int chosen_size = -1;
        int bought = -1;  // catalog index bought, -1 if none
        int bought_color = -1;
        int bought_size = -1;
    };
    struct LabState {
        int room = 0;
        bool container_open[2] = {false, false};
        bool gloves_present[2] = {true, true};
        int held = -1;  // -1 none, -2 gloves, otherwise the sample's vocab id
        bool gloved = false;
        bool rinsed = false;
        bool object_in_container = true;
        bool object_in_machine = false;
        bool machine_running = false;
        int run_ticks = 0;
        int subgoals = 0;  // ordered count 0..4
    };
    struct HouseState {
        int room = 0;
        bool rec_open[6] = {false, false, false, false, false, false};
        int object_room = 0;
        bool object_inside = false;  // inside its room's receptacle
        bool object_held = false;
        int object_in_rec = -1;  // receptacle room index if placed, -1 otherwise
        int prep = 0;            // 0 raw, 1 washed, 2 heated
        bool achieved = false;
    };

    void rebuild_observation();
    void apply(std::span<const int> words);
    double current_progress() const;

    const EnvSpec* spec_;
    core::Instruction instruction_;
    Goal goal_;
    std::variant<std::monostate, ShopState, LabState, HouseState> state_;
    std::vector<int> observation_;
    std::vector<double> curve_;
    bool done_ = false;
    bool nothing_happened_ = false;
    int steps_ = 0;
};

// Runs the hidden-goal-aware expert and returns its trajectory (reward 1.0).
core::Trajectory oracle_expert(const EnvSpec& spec, const core::Instruction& instruction,
                               const Goal& goal);

// Re-executes a stored trajectory's actions and returns the reward the
// environment reproduces; used for replay-soundness checks.
double replay_reward(const EnvSpec& spec, const core::Trajectory& trajectory);

struct ReplayOutcome {
    double reward = 0.0;
    bool success = false;
    std::vector<double> curve;  // cumulative reward after each action
};

// Replays a trajectory and reports reward, terminal success, and the
// per-step cumulative reward curve.
ReplayOutcome replay(const EnvSpec& spec, const core::Trajectory& trajectory);

// Loads a persisted trajectory, regenerating its instruction from the id and
// verifying that replay reproduces the stored reward exactly.
core::Trajectory load_and_verify(const EnvSpec& spec, const core::TrajectoryRecord& record);

}  // namespace etolab::envs
