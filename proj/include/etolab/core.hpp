#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace etolab::core {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidTrajectoryError : Error {
    using Error::Error;
};
struct PairingError : Error {
    using Error::Error;
};

enum class Split { seen, unseen };
enum class Source { expert, rollout };

std::string to_string(Split s);
std::string to_string(Source s);
Split split_from_string(std::string_view s);
Source source_from_string(std::string_view s);

/// Token table with dense ids 0..size()-1 plus the structural markers every
/// sequence layout uses: padding, instruction start, action start/end,
/// observation start, end of episode.
class Vocabulary {
public:
    struct Specials {
        int pad = 0;
        int instruction_start = 1;
        int action_start = 2;
        int action_end = 3;
        int observation_start = 4;
        int end_of_episode = 5;
    };

    // Builds a vocabulary from domain words; the six markers are prepended.
    static Vocabulary build(std::vector<std::string> words);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const;
    // Returns the id of a token string, or -1 if absent.
    int find(std::string_view word) const;
    // Like find() but throws InvalidTrajectoryError on unknown words.
    int lookup(std::string_view word) const;
    bool contains(int id) const { return id >= 0 && id < size(); }

    const Specials& specials() const { return specials_; }
    bool is_special(int id) const { return id >= 0 && id < 6; }

    // FNV-1a over the ordered token list; pins checkpoint compatibility.
    std::uint64_t hash() const { return hash_; }

    // Splits on single spaces and maps each word; throws on unknown words.
    std::vector<int> tokenize(std::string_view text) const;
    // Joins tokens with single spaces.
    std::string detokenize(std::span<const int> ids) const;

private:
    std::vector<std::string> tokens_;
    Specials specials_;
    std::uint64_t hash_ = 0;
};

struct Instruction {
    std::string id;
    std::vector<int> tokens;
    std::string env_name;
    Split variation = Split::seen;
};

/// One interaction turn: the agent's action tokens (terminated by the
/// end-of-action marker) and the environment's reply. The final step of an
/// episode has no observation.
struct Step {
    std::vector<int> action_tokens;
    std::optional<std::vector<int>> observation_tokens;
};

struct Trajectory {
    Instruction instruction;
    std::vector<Step> steps;
    double reward = 0.0;
    Source source = Source::rollout;
    std::int64_t seed = 0;
};

/// Contrastive training unit; winner.reward > loser.reward strictly.
struct TrajectoryPair {
    Instruction instruction;
    Trajectory winner;
    Trajectory loser;
};

/// A trajectory rendered as one token stream with a mask that is true exactly
/// at agent-emitted positions (action tokens and their end markers).
struct FlatSequence {
    std::vector<int> token_ids;
    std::vector<std::uint8_t> action_mask;
};

// Throws InvalidTrajectoryError if the trajectory violates the data model:
// empty instruction, step without tokens, missing/misplaced end-of-action
// marker, out-of-range token id, or reward outside [0,1].
void validate(const Trajectory& trajectory, const Vocabulary& vocab);

// Renders [ins, u, (act, a_j, obs, o_j)*, act, a_n]; the mask is true on
// every action token including its end marker and false everywhere else.
FlatSequence flatten(const Trajectory& trajectory, const Vocabulary& vocab);

// Recovers the per-step action token runs from a flat sequence (inverse of
// flatten on the masked subsequence).
std::vector<std::vector<int>> masked_segments(const FlatSequence& flat);

// Orders (expert, rollout) into a preference pair by final reward; equal
// rewards yield no pair. Mismatched instruction ids throw PairingError.
std::optional<TrajectoryPair> pair_from_rollout(const Trajectory& expert, const Trajectory& rollout);

// --- line-delimited persistence ----------------------------------------

/// Text form of a step; the action string has no end-of-action marker.
struct StepText {
    std::string action;
    std::optional<std::string> observation;
};

/// Wire form of a trajectory. Token ids are recomputed on load from the
/// owning vocabulary, so records carry only strings.
struct TrajectoryRecord {
    std::string instruction_id;
    std::string env;
    std::string variation;
    std::int64_t seed = 0;
    double reward = 0.0;
    std::string source;
    std::vector<StepText> steps;
};

std::string to_json_line(const TrajectoryRecord& record);
TrajectoryRecord record_from_json_line(const std::string& line);

TrajectoryRecord to_record(const Trajectory& trajectory, const Vocabulary& vocab);
// Rebuilds a trajectory from its record; the instruction is supplied by the
// caller (regenerated from the record's instruction id).
Trajectory from_record(const TrajectoryRecord& record, const Vocabulary& vocab,
                       const Instruction& instruction);

std::vector<TrajectoryRecord> read_records(const std::string& path);
void write_records(const std::string& path, std::span<const TrajectoryRecord> records);

}  // namespace etolab::core
