#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "etolab/algorithms.hpp"
#include "etolab/core.hpp"
#include "etolab/envs.hpp"
#include "etolab/harness.hpp"
#include "etolab/losses.hpp"
#include "etolab/policy.hpp"

namespace py = pybind11;
using namespace etolab;

PYBIND11_MODULE(_core, m) {
    m.doc() = "trajectory-preference training on toy text environments";

    py::register_exception<core::Error>(m, "EtolabError");

    py::enum_<core::Split>(m, "Split")
        .value("seen", core::Split::seen)
        .value("unseen", core::Split::unseen);
    py::enum_<core::Source>(m, "Source")
        .value("expert", core::Source::expert)
        .value("rollout", core::Source::rollout);

    py::class_<core::Vocabulary>(m, "Vocabulary")
        .def_static("build", &core::Vocabulary::build, py::arg("words"))
        .def("__len__", &core::Vocabulary::size)
        .def("token", &core::Vocabulary::token)
        .def("find", &core::Vocabulary::find)
        .def("lookup", &core::Vocabulary::lookup)
        .def("tokenize", &core::Vocabulary::tokenize)
        .def("detokenize",
             [](const core::Vocabulary& v, const std::vector<int>& ids) {
                 return v.detokenize(ids);
             })
        .def_property_readonly("hash", &core::Vocabulary::hash)
        .def_property_readonly("pad", [](const core::Vocabulary& v) { return v.specials().pad; })
        .def_property_readonly("action_end",
                               [](const core::Vocabulary& v) { return v.specials().action_end; });

    py::class_<core::Instruction>(m, "Instruction")
        .def(py::init<>())
        .def_readwrite("id", &core::Instruction::id)
        .def_readwrite("tokens", &core::Instruction::tokens)
        .def_readwrite("env_name", &core::Instruction::env_name)
        .def_readwrite("variation", &core::Instruction::variation);

    py::class_<core::Step>(m, "Step")
        .def(py::init<>())
        .def_readwrite("action_tokens", &core::Step::action_tokens)
        .def_readwrite("observation_tokens", &core::Step::observation_tokens);

    py::class_<core::Trajectory>(m, "Trajectory")
        .def(py::init<>())
        .def_readwrite("instruction", &core::Trajectory::instruction)
        .def_readwrite("steps", &core::Trajectory::steps)
        .def_readwrite("reward", &core::Trajectory::reward)
        .def_readwrite("source", &core::Trajectory::source)
        .def_readwrite("seed", &core::Trajectory::seed);

    py::class_<core::TrajectoryPair>(m, "TrajectoryPair")
        .def(py::init<>())
        .def_readwrite("instruction", &core::TrajectoryPair::instruction)
        .def_readwrite("winner", &core::TrajectoryPair::winner)
        .def_readwrite("loser", &core::TrajectoryPair::loser);

    py::class_<core::FlatSequence>(m, "FlatSequence")
        .def(py::init<>())
        .def_readwrite("token_ids", &core::FlatSequence::token_ids)
        .def_property_readonly("action_mask", [](const core::FlatSequence& f) {
            std::vector<bool> mask(f.action_mask.begin(), f.action_mask.end());
            return mask;
        });

    m.def("flatten", &core::flatten, py::arg("trajectory"), py::arg("vocab"));
    m.def("pair_from_rollout", &core::pair_from_rollout, py::arg("expert"), py::arg("rollout"));

    py::class_<envs::EnvSpec>(m, "EnvSpec")
        .def_property_readonly("name",
                               [](const envs::EnvSpec& s) { return envs::to_string(s.name); })
        .def_readonly("max_steps", &envs::EnvSpec::max_steps)
        .def_readonly("vocab", &envs::EnvSpec::vocab);

    m.def("make_spec", [](const std::string& name) { return envs::make_spec(name); },
          py::arg("name"));
    m.def(
        "generate_instruction",
        [](const envs::EnvSpec& spec, const std::string& split, std::int64_t seed) {
            return envs::generate_instruction(spec, core::split_from_string(split), seed).first;
        },
        py::arg("spec"), py::arg("split"), py::arg("seed"));
    m.def(
        "oracle_expert",
        [](const envs::EnvSpec& spec, const core::Instruction& instruction) {
            auto goal = envs::generate_instruction(spec, instruction.variation,
                                                   std::stoll(instruction.id.substr(
                                                       instruction.id.rfind('-') + 1)))
                            .second;
            return envs::oracle_expert(spec, instruction, goal);
        },
        py::arg("spec"), py::arg("instruction"));
    m.def("replay_reward", &envs::replay_reward, py::arg("spec"), py::arg("trajectory"));

    py::class_<envs::Episode>(m, "Episode")
        .def(py::init<const envs::EnvSpec&, const core::Instruction&>(), py::arg("spec"),
             py::arg("instruction"), py::keep_alive<1, 2>())
        .def("step",
             [](envs::Episode& e, const std::vector<int>& action) { return e.step(action); })
        .def_property_readonly("observation", &envs::Episode::observation)
        .def_property_readonly("done", &envs::Episode::done)
        .def_property_readonly("steps_taken", &envs::Episode::steps_taken)
        .def("final_reward", &envs::Episode::final_reward)
        .def("success", &envs::Episode::success)
        .def_property_readonly("reward_curve", &envs::Episode::reward_curve);

    py::class_<policy::Arch>(m, "Arch")
        .def(py::init([](int vocab_size, int embed_dim, int window, int hidden) {
                 return policy::Arch{vocab_size, embed_dim, window, hidden};
             }),
             py::arg("vocab_size"), py::arg("embed_dim") = 16, py::arg("window") = 24,
             py::arg("hidden") = 64)
        .def_readwrite("vocab_size", &policy::Arch::vocab_size)
        .def_readwrite("embed_dim", &policy::Arch::embed_dim)
        .def_readwrite("window", &policy::Arch::window)
        .def_readwrite("hidden", &policy::Arch::hidden)
        .def("param_count", &policy::Arch::param_count);

    py::class_<policy::PolicyParams>(m, "PolicyParams")
        .def(py::init<>())
        .def_readwrite("arch", &policy::PolicyParams::arch)
        .def_readwrite("theta", &policy::PolicyParams::theta);

    m.def("zero_params", &policy::zero_params, py::arg("arch"));
    m.def("init_params", &policy::init_params, py::arg("arch"), py::arg("seed"));

    py::class_<policy::RolloutConfig>(m, "RolloutConfig")
        .def(py::init<>())
        .def_readwrite("temperature", &policy::RolloutConfig::temperature)
        .def_readwrite("action_token_budget", &policy::RolloutConfig::action_token_budget)
        .def_readwrite("seed", &policy::RolloutConfig::seed);

    m.def(
        "token_logits",
        [](const policy::PolicyParams& params, const std::vector<int>& context,
           const core::Vocabulary& vocab) { return policy::token_logits(params, context, vocab); },
        py::arg("params"), py::arg("context"), py::arg("vocab"));
    m.def(
        "trajectory_logprob",
        [](const policy::PolicyParams& params, const core::FlatSequence& flat,
           const core::Vocabulary& vocab) { return policy::trajectory_logprob(params, flat, vocab); },
        py::arg("params"), py::arg("flat"), py::arg("vocab"));
    m.def(
        "trajectory_logprob_grad",
        [](const policy::PolicyParams& params, const core::FlatSequence& flat,
           const core::Vocabulary& vocab) {
            return policy::trajectory_logprob_grad(params, flat, vocab);
        },
        py::arg("params"), py::arg("flat"), py::arg("vocab"));
    m.def("rollout", &policy::rollout, py::arg("params"), py::arg("spec"), py::arg("instruction"),
          py::arg("cfg"));

    py::class_<losses::DpoConfig>(m, "DpoConfig")
        .def(py::init([](double beta, const policy::PolicyParams& reference) {
                 return losses::DpoConfig{beta, reference};
             }),
             py::arg("beta"), py::arg("reference"))
        .def_readwrite("beta", &losses::DpoConfig::beta)
        .def_readwrite("reference", &losses::DpoConfig::reference);

    m.def(
        "sft_loss",
        [](const policy::PolicyParams& params, const std::vector<core::FlatSequence>& batch,
           const core::Vocabulary& vocab) {
            losses::LossValue v = losses::sft_loss(params, batch, vocab);
            return py::make_tuple(v.value, v.grad);
        },
        py::arg("params"), py::arg("batch"), py::arg("vocab"));
    m.def(
        "dpo_loss",
        [](const policy::PolicyParams& params, const losses::DpoConfig& cfg,
           const std::vector<core::TrajectoryPair>& batch, const core::Vocabulary& vocab) {
            losses::LossValue v = losses::dpo_loss(params, cfg, batch, vocab);
            return py::make_tuple(v.value, v.grad);
        },
        py::arg("params"), py::arg("cfg"), py::arg("batch"), py::arg("vocab"));
    m.def("bt_preference_prob", &losses::bt_preference_prob, py::arg("reward_w"),
          py::arg("reward_l"));
    m.def("kl_regularized_return", &losses::kl_regularized_return, py::arg("params"),
          py::arg("reference"), py::arg("trajectory"), py::arg("beta"), py::arg("vocab"));

    m.def(
        "best_of_n",
        [](const policy::PolicyParams& params, const envs::EnvSpec& spec,
           const core::Instruction& instruction, int n, std::uint64_t seed) {
            return algorithms::best_of_n(params, spec, instruction, n, seed);
        },
        py::arg("params"), py::arg("spec"), py::arg("instruction"), py::arg("n"), py::arg("seed"));

    // harness entry points exchange JSON strings
    m.def("default_config",
          [](const std::string& env, const std::string& method) {
              return harness::ExperimentConfig::defaults(env, method).to_json();
          },
          py::arg("env"), py::arg("method"));
    m.def(
        "gen_data",
        [](const std::string& config_json, bool force) {
            harness::gen_data(harness::ExperimentConfig::from_json(config_json), force);
        },
        py::arg("config_json"), py::arg("force") = false);
    m.def(
        "run",
        [](const std::string& config_json) {
            return harness::run(harness::ExperimentConfig::from_json(config_json)).to_json();
        },
        py::arg("config_json"));
}
