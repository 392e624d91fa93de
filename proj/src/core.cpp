#include "etolab/core.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "etolab/rng.hpp"
#include "json.hpp"

namespace etolab::core {

namespace {

const char* kSpecialNames[6] = {"<pad>", "<ins>", "<act>", "</act>", "<obs>", "<eoe>"};

struct VocabIndex {
    std::unordered_map<std::string, int> by_word;
};

}  // namespace

std::string to_string(Split s) { return s == Split::seen ? "seen" : "unseen"; }
std::string to_string(Source s) { return s == Source::expert ? "expert" : "rollout"; }

Split split_from_string(std::string_view s) {
    if (s == "seen") return Split::seen;
    if (s == "unseen") return Split::unseen;
    throw Error("unknown split: " + std::string(s));
}

Source source_from_string(std::string_view s) {
    if (s == "expert") return Source::expert;
    if (s == "rollout") return Source::rollout;
    throw Error("unknown source: " + std::string(s));
}

Vocabulary Vocabulary::build(std::vector<std::string> words) {
    Vocabulary v;
    v.tokens_.reserve(words.size() + 6);
    for (const char* name : kSpecialNames) v.tokens_.emplace_back(name);
    for (auto& w : words) {
        if (w.empty()) throw Error("empty vocabulary word");
        v.tokens_.push_back(std::move(w));
    }
    std::string joined;
    for (const auto& t : v.tokens_) {
        joined += t;
        joined += '\n';
    }
    v.hash_ = fnv1a(joined);
    // duplicate detection
    for (int i = 0; i < v.size(); ++i) {
        if (v.find(v.tokens_[i]) != i) throw Error("duplicate vocabulary word: " + v.tokens_[i]);
    }
    return v;
}

const std::string& Vocabulary::token(int id) const {
    if (!contains(id)) throw InvalidTrajectoryError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::find(std::string_view word) const {
    for (int i = 0; i < size(); ++i) {
        if (tokens_[static_cast<std::size_t>(i)] == word) return i;
    }
    return -1;
}

int Vocabulary::lookup(std::string_view word) const {
    int id = find(word);
    if (id < 0) throw InvalidTrajectoryError("unknown token: " + std::string(word));
    return id;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find(' ', pos);
        if (end == std::string_view::npos) end = text.size();
        if (end > pos) ids.push_back(lookup(text.substr(pos, end - pos)));
        pos = end + 1;
    }
    return ids;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

void validate(const Trajectory& trajectory, const Vocabulary& vocab) {
    const int act_end = vocab.specials().action_end;
    if (trajectory.instruction.tokens.empty())
        throw InvalidTrajectoryError("instruction has no tokens");
    for (int id : trajectory.instruction.tokens) {
        if (!vocab.contains(id))
            throw InvalidTrajectoryError("instruction token out of range");
    }
    if (trajectory.steps.empty()) throw InvalidTrajectoryError("trajectory has no steps");
    if (trajectory.reward < 0.0 || trajectory.reward > 1.0)
        throw InvalidTrajectoryError("reward outside [0,1]");
    for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
        const Step& step = trajectory.steps[i];
        if (step.action_tokens.empty())
            throw InvalidTrajectoryError("empty action at step " + std::to_string(i));
        if (step.action_tokens.back() != act_end)
            throw InvalidTrajectoryError("action not terminated by end-of-action marker");
        for (std::size_t k = 0; k + 1 < step.action_tokens.size(); ++k) {
            if (step.action_tokens[k] == act_end)
                throw InvalidTrajectoryError("end-of-action marker inside action body");
            if (!vocab.contains(step.action_tokens[k]))
                throw InvalidTrajectoryError("action token out of range");
        }
        bool last = (i + 1 == trajectory.steps.size());
        if (last && step.observation_tokens.has_value())
            throw InvalidTrajectoryError("final step carries an observation");
        if (!last && !step.observation_tokens.has_value())
            throw InvalidTrajectoryError("non-final step missing its observation");
        if (step.observation_tokens) {
            for (int id : *step.observation_tokens) {
                if (!vocab.contains(id))
                    throw InvalidTrajectoryError("observation token out of range");
            }
        }
    }
}

FlatSequence flatten(const Trajectory& trajectory, const Vocabulary& vocab) {
    validate(trajectory, vocab);
    const auto& sp = vocab.specials();
    FlatSequence flat;
    auto push = [&flat](int id, bool masked) {
        flat.token_ids.push_back(id);
        flat.action_mask.push_back(masked ? 1 : 0);
    };
    push(sp.instruction_start, false);
    for (int id : trajectory.instruction.tokens) push(id, false);
    for (const Step& step : trajectory.steps) {
        push(sp.action_start, false);
        for (int id : step.action_tokens) push(id, true);
        if (step.observation_tokens) {
            push(sp.observation_start, false);
            for (int id : *step.observation_tokens) push(id, false);
        }
    }
    return flat;
}

std::vector<std::vector<int>> masked_segments(const FlatSequence& flat) {
    std::vector<std::vector<int>> segments;
    bool in_run = false;
    for (std::size_t i = 0; i < flat.token_ids.size(); ++i) {
        if (flat.action_mask[i]) {
            if (!in_run) {
                segments.emplace_back();
                in_run = true;
            }
            segments.back().push_back(flat.token_ids[i]);
        } else {
            in_run = false;
        }
    }
    return segments;
}

std::optional<TrajectoryPair> pair_from_rollout(const Trajectory& expert, const Trajectory& rollout) {
    if (expert.instruction.id != rollout.instruction.id)
        throw PairingError("instruction mismatch: " + expert.instruction.id + " vs " +
                           rollout.instruction.id);
    if (expert.reward == rollout.reward) return std::nullopt;
    TrajectoryPair pair;
    pair.instruction = expert.instruction;
    if (expert.reward > rollout.reward) {
        pair.winner = expert;
        pair.loser = rollout;
    } else {
        pair.winner = rollout;
        pair.loser = expert;
    }
    return pair;
}

std::string to_json_line(const TrajectoryRecord& record) {
    nlohmann::json j;
    j["instruction_id"] = record.instruction_id;
    j["env"] = record.env;
    j["variation"] = record.variation;
    j["seed"] = record.seed;
    j["reward"] = record.reward;
    j["source"] = record.source;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : record.steps) {
        nlohmann::json step;
        step["action"] = s.action;
        if (s.observation)
            step["observation"] = *s.observation;
        else
            step["observation"] = nullptr;
        steps.push_back(std::move(step));
    }
    j["steps"] = std::move(steps);
    return j.dump();
}

TrajectoryRecord record_from_json_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    TrajectoryRecord r;
    r.instruction_id = j.at("instruction_id").get<std::string>();
    r.env = j.at("env").get<std::string>();
    r.variation = j.at("variation").get<std::string>();
    r.seed = j.at("seed").get<std::int64_t>();
    r.reward = j.at("reward").get<double>();
    r.source = j.at("source").get<std::string>();
    for (const auto& step : j.at("steps")) {
        StepText s;
        s.action = step.at("action").get<std::string>();
        if (!step.at("observation").is_null())
            s.observation = step.at("observation").get<std::string>();
        r.steps.push_back(std::move(s));
    }
    return r;
}

TrajectoryRecord to_record(const Trajectory& trajectory, const Vocabulary& vocab) {
    TrajectoryRecord r;
    r.instruction_id = trajectory.instruction.id;
    r.env = trajectory.instruction.env_name;
    r.variation = to_string(trajectory.instruction.variation);
    r.seed = trajectory.seed;
    r.reward = trajectory.reward;
    r.source = to_string(trajectory.source);
    for (const Step& step : trajectory.steps) {
        StepText s;
        // strip the end-of-action marker; it is reattached on load
        std::span<const int> body(step.action_tokens.data(), step.action_tokens.size() - 1);
        s.action = vocab.detokenize(body);
        if (step.observation_tokens) s.observation = vocab.detokenize(*step.observation_tokens);
        r.steps.push_back(std::move(s));
    }
    return r;
}

Trajectory from_record(const TrajectoryRecord& record, const Vocabulary& vocab,
                       const Instruction& instruction) {
    if (instruction.id != record.instruction_id)
        throw Error("instruction id mismatch while loading record");
    Trajectory t;
    t.instruction = instruction;
    t.reward = record.reward;
    t.source = source_from_string(record.source);
    t.seed = record.seed;
    for (const StepText& s : record.steps) {
        Step step;
        step.action_tokens = vocab.tokenize(s.action);
        step.action_tokens.push_back(vocab.specials().action_end);
        if (s.observation) step.observation_tokens = vocab.tokenize(*s.observation);
        t.steps.push_back(std::move(step));
    }
    validate(t, vocab);
    return t;
}

std::vector<TrajectoryRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::vector<TrajectoryRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json_line(line));
    }
    return records;
}

void write_records(const std::string& path, std::span<const TrajectoryRecord> records) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    for (const auto& r : records) out << to_json_line(r) << '\n';
}

}  // namespace etolab::core
