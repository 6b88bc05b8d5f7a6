#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "elemental/envs.hpp"
#include "elemental/error.hpp"
#include "elemental/irl.hpp"
#include "elemental/pipeline.hpp"
#include "elemental/render.hpp"

namespace py = pybind11;
using namespace elemental;
using json = nlohmann::json;

namespace {

// Structured results cross the boundary as JSON text; the Python package
// decodes them.
std::string counts_json(const FeatureCounts& c) { return c.to_json().dump(); }

EnvPtr env_with(const std::string& id, const std::vector<std::string>& variants) {
  EnvPtr env = make_environment(id);
  for (const auto& v : variants) env = make_variant(env, VariantSpec::parse(v));
  return env;
}

IrlHyper hyper_from(int m, double alpha, int k, int eval_episodes, double temperature, bool no_grad_norm,
                    bool no_weight_norm) {
  IrlHyper h;
  h.m = m;
  h.alpha = alpha;
  h.budget.steps = k;
  h.eval_episodes = eval_episodes;
  h.temperature = temperature;
  h.ablate_grad_norm = no_grad_norm;
  h.ablate_weight_norm = no_weight_norm;
  return h;
}

}  // namespace

PYBIND11_MODULE(_elemental, m) {
  m.doc() = "Feature-program MaxEnt IRL core";

  auto base = py::register_exception<Error>(m, "ElementalError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ConfigurationError>(m, "ConfigurationError", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());
  py::register_exception<DegenerateWeightsError>(m, "DegenerateWeightsError", base.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<GenerationFailed>(m, "GenerationFailed", base.ptr());

  py::class_<FeatureProgram>(m, "FeatureProgram")
      .def_property_readonly("names", &FeatureProgram::names)
      .def_property_readonly("source", &FeatureProgram::source_text)
      .def("__len__", &FeatureProgram::size)
      .def("evaluate", [](const FeatureProgram& p, const std::vector<double>& obs) { return evaluate_features(p, obs); })
      .def("__str__", [](const FeatureProgram& p) { return print_feature_program(p); });
  m.def("parse_program", &parse_feature_program, py::arg("source"));
  m.def("identity_program", &identity_program, py::arg("obs_dim"));

  py::class_<Environment, std::shared_ptr<Environment>>(m, "Environment")
      .def_property_readonly("id", &Environment::id)
      .def_property_readonly("obs_dim", [](const Environment& e) { return e.spec().obs_dim; })
      .def_property_readonly("horizon", [](const Environment& e) { return e.spec().horizon; })
      .def_property_readonly("description", [](const Environment& e) { return e.spec().source_text; })
      .def_property_readonly("gt_program", &Environment::gt_program)
      .def_property_readonly("gt_theta", &Environment::gt_theta)
      .def("ground_truth_reward",
           [](const Environment& e, const std::vector<double>& obs) { return e.ground_truth_reward(obs); });
  m.def(
      "make_environment",
      [](const std::string& id, const std::vector<std::string>& variants) {
        return std::const_pointer_cast<Environment>(env_with(id, variants));
      },
      py::arg("env_id"), py::arg("variants") = std::vector<std::string>{});

  py::class_<DemonstrationSet>(m, "Demonstrations")
      .def("__len__", [](const DemonstrationSet& d) { return d.trajectories.size(); })
      .def_property_readonly("observations",
                             [](const DemonstrationSet& d) {
                               std::vector<std::vector<Observation>> out;
                               for (const auto& t : d.trajectories) out.push_back(t.observations);
                               return out;
                             })
      .def("save", [](const DemonstrationSet& d, const std::filesystem::path& p) { save_demonstrations(d, p); });
  m.def("load_demonstrations", &load_demonstrations, py::arg("path"));
  m.def(
      "generate_demonstrations",
      [](const Environment& env, int count, double temperature, std::uint64_t seed, int k) {
        DemoGenOptions o;
        o.count = count;
        o.temperature = temperature;
        o.seed = seed;
        o.budget.steps = k;
        py::gil_scoped_release release;
        return generate_demonstrations(env, o);
      },
      py::arg("env"), py::arg("count") = 100, py::arg("temperature") = 0.1, py::arg("seed") = 0,
      py::arg("k") = 500);

  m.def(
      "feature_expectation_json",
      [](const DemonstrationSet& d, const FeatureProgram& p) { return counts_json(feature_expectation(d.trajectories, p)); },
      py::arg("demos"), py::arg("program"));

  m.def(
      "run_irl_json",
      [](const Environment& env, const DemonstrationSet& demos, const FeatureProgram& program, int m_iters,
         double alpha, int k, int eval_episodes, double temperature, std::uint64_t seed, bool no_grad_norm,
         bool no_weight_norm) {
        const IrlHyper h =
            hyper_from(m_iters, alpha, k, eval_episodes, temperature, no_grad_norm, no_weight_norm);
        py::gil_scoped_release release;
        const IrlOutcome out = approximate_maxent_irl(env, demos, program, h, RngStream(seed, 0));
        json j;
        j["reward"] = out.reward.to_json();
        j["status"] = out.trace.status;
        j["demo_counts"] = out.trace.demo_counts.to_json();
        j["iterations"] = json::array();
        for (const auto& it : out.trace.iterations) j["iterations"].push_back(it.to_json());
        j["policy"] = out.policy.to_json();
        return j.dump();
      },
      py::arg("env"), py::arg("demos"), py::arg("program"), py::arg("m") = 5, py::arg("alpha") = 1.0,
      py::arg("k") = 500, py::arg("eval_episodes") = 32, py::arg("temperature") = 1.0, py::arg("seed") = 0,
      py::arg("no_grad_norm") = false, py::arg("no_weight_norm") = false);

  m.def(
      "exact_irl_gradient",
      [](const Environment& env, const std::vector<double>& theta, const FeatureProgram& program,
         const std::vector<double>& demo_phi, int horizon, bool enumerate) {
        const TabularMdp* mdp = env.tabular();
        if (mdp == nullptr) throw ConfigurationError(env.id() + " is not tabular");
        FeatureCounts demo;
        demo.phi = demo_phi;
        return exact_irl_gradient(*mdp, theta, program, demo, horizon,
                                  enumerate ? ExactMode::kEnumeration : ExactMode::kOccupancyDp);
      },
      py::arg("env"), py::arg("theta"), py::arg("program"), py::arg("demo_phi"), py::arg("horizon"),
      py::arg("enumerate") = true);

  m.def(
      "reward_correlation",
      [](const Environment& env, const FeatureProgram& program, const std::vector<double>& theta, int states,
         std::uint64_t seed) {
        RngStream rng(seed, 0);
        std::vector<Observation> obs;
        for (int i = 0; i < states; ++i) obs.push_back(env.sample_observation(rng));
        return reward_correlation(RewardModel(theta, program), env, obs);
      },
      py::arg("env"), py::arg("program"), py::arg("theta"), py::arg("states") = 500, py::arg("seed") = 0);

  m.def("task_success_metric", [](const std::vector<double>& s, int window) { return task_success_metric(s, window); },
        py::arg("per_step_success"), py::arg("window") = 100);
  m.def("aggregate_json", [](const std::vector<double>& v) { return aggregate(v).to_json().dump(); },
        py::arg("values"));
  m.def("keyframe_indices", &keyframe_indices, py::arg("episode_length"), py::arg("count") = 4);
  m.def(
      "render_superimposed_png",
      [](const Environment& env, const DemonstrationSet& demos) {
        const auto bytes = encode_png(render_superimposed(demos.trajectories, env));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("env"), py::arg("demos"));

  m.def(
      "run_experiment_json",
      [](const std::string& config_json, const std::filesystem::path& base_dir) {
        const RunConfig config = RunConfig::from_json(json::parse(config_json), base_dir);
        py::gil_scoped_release release;
        return run_elemental(config).to_json().dump();
      },
      py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{});

  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "elemental");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
