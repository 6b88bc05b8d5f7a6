#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "elemental/error.hpp"
#include "elemental/pipeline.hpp"
#include "elemental/render.hpp"

namespace elemental {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

EnvPtr env_with_variants(const std::string& id, const std::vector<std::string>& variants) {
  EnvPtr env = make_environment(id);
  for (const auto& v : variants) env = make_variant(env, VariantSpec::parse(v));
  return env;
}

FeatureProgram load_program(const std::string& arg, const Environment& env) {
  if (arg == "identity") return identity_program(env.spec().obs_dim);
  if (arg == "gt") return env.gt_program();
  return parse_feature_program(read_file(arg));
}

struct DemoGenArgs {
  std::string env = "gridworld-5x5";
  std::vector<std::string> variants;
  int count = 100;
  std::uint64_t seed = 0;
  double temperature = 0.1;
  int k = 500;
  std::string out = "demos.jsonl";
  std::string images;
  int keyframes = 4;
};

int cmd_demo_gen(const DemoGenArgs& a) {
  const EnvPtr env = env_with_variants(a.env, a.variants);
  DemoGenOptions opt;
  opt.count = a.count;
  opt.seed = a.seed;
  opt.temperature = a.temperature;
  opt.budget.steps = a.k;
  DemonstrationSet demos = generate_demonstrations(*env, opt);
  save_demonstrations(demos, a.out);
  const fs::path image_dir = a.images.empty() ? fs::path(a.out).parent_path() : fs::path(a.images);
  const Trajectory& first = demos.trajectories.front();
  const Image sup = render_superimposed(demos.trajectories, *env);
  write_file(image_dir / "demo_superimposed.png", encode_png(sup));
  write_file(image_dir / "demo_superimposed.ppm", encode_ppm(sup));
  const int count = std::min<int>(a.keyframes, static_cast<int>(first.observations.size()));
  if (count >= 2) {
    const auto frames = render_keyframes(first, *env, count);
    for (std::size_t k = 0; k < frames.frames.size(); ++k) {
      write_file(image_dir / ("demo_" + std::to_string(k) + ".png"), encode_png(frames.frames[k]));
    }
  }
  const auto counts = feature_expectation(demos.trajectories, env->gt_program());
  double gt_return = 0.0;
  for (std::size_t i = 0; i < counts.phi.size(); ++i) gt_return += env->gt_theta()[i] * counts.phi[i];
  std::cout << "wrote " << demos.trajectories.size() << " demonstrations of " << env->id() << " to "
            << a.out << " (mean length " << counts.mean_episode_length << ", mean GT return "
            << gt_return << ")\n";
  return 0;
}

struct RunArgs {
  std::string config;
  std::string mock;
  std::string out;
  std::vector<std::int64_t> seeds;
  int outer = 0;
  int samples = 0;
  bool no_reflection = false;
  bool no_grad_norm = false;
  bool no_weight_norm = false;
  bool no_visual_input = false;
  bool text_demo = false;
  std::string selection;
};

int cmd_run(const RunArgs& a) {
  json j;
  try {
    j = json::parse(read_file(a.config));
  } catch (const json::parse_error& e) {
    throw ConfigurationError(a.config + ": " + e.what());
  }
  // Flags override config keys.
  if (!a.mock.empty()) j["llm"]["mock_script"] = fs::absolute(a.mock).string();
  if (!a.out.empty()) j["output_dir"] = fs::absolute(a.out).string();
  if (!a.seeds.empty()) j["seeds"] = a.seeds;
  if (a.outer > 0) j["outer_iterations"] = a.outer;
  if (a.samples > 0) j["samples_per_iteration"] = a.samples;
  if (!a.selection.empty()) j["selection_criterion"] = a.selection;
  if (a.no_reflection) j["ablations"]["no_reflection"] = true;
  if (a.no_grad_norm) j["ablations"]["no_grad_norm"] = true;
  if (a.no_weight_norm) j["ablations"]["no_weight_norm"] = true;
  if (a.no_visual_input) j["ablations"]["no_visual_input"] = true;
  if (a.text_demo) j["ablations"]["text_demo"] = true;
  const RunConfig config = RunConfig::from_json(j, fs::path(a.config).parent_path());
  try {
    const ExperimentResult r = run_elemental(config);
    std::cout << "run " << r.label << " finished: success max " << r.success.max << ", mean "
              << r.success.mean << " ± " << r.success.std << "\n";
    std::cout << "artifacts: " << config.output_dir.string() << "\n";
    return 0;
  } catch (const RunFailed& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    std::cerr << "artifacts: " << config.output_dir.string() << "\n";
    return 1;
  }
}

struct IrlArgs {
  std::string program;
  std::string env = "gridworld-5x5";
  std::vector<std::string> variants;
  std::string demos;
  std::string out = ".";
  std::uint64_t seed = 0;
  int m = 5;
  double alpha = 1.0;
  int k = 500;
  int eval_episodes = 32;
  double temperature = 1.0;
  bool no_grad_norm = false;
  bool no_weight_norm = false;
};

int cmd_irl(const IrlArgs& a) {
  const EnvPtr env = env_with_variants(a.env, a.variants);
  const FeatureProgram program = load_program(a.program, *env);
  const DemonstrationSet demos = load_demonstrations(a.demos);
  IrlHyper h;
  h.m = a.m;
  h.alpha = a.alpha;
  h.budget.steps = a.k;
  h.eval_episodes = a.eval_episodes;
  h.temperature = a.temperature;
  h.ablate_grad_norm = a.no_grad_norm;
  h.ablate_weight_norm = a.no_weight_norm;
  const IrlOutcome out = approximate_maxent_irl(*env, demos, program, h, RngStream(a.seed, 0));
  const fs::path dir(a.out);
  write_file_text(dir / "reward.json", out.reward.to_json().dump(2) + "\n");
  write_file_text(dir / "trace.jsonl", out.trace.to_jsonl());
  write_file_text(dir / "policy.json", out.policy.to_json().dump() + "\n");
  const auto& last = out.trace.iterations.back();
  std::cout << "irl " << out.trace.status << " after " << out.trace.iterations.size()
            << " iteration(s); relative error " << last.relative_error << "; theta "
            << format_weights(program.names(), out.reward.theta()) << "\n";
  return 0;
}

struct EvalArgs {
  std::string env = "gridworld-5x5";
  std::vector<std::string> variants;
  std::string reward;
  std::string policy;
  int episodes = 100;
  int states = 500;
  int window = 100;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

int cmd_eval(const EvalArgs& a) {
  const EnvPtr env = env_with_variants(a.env, a.variants);
  const RewardModel reward = RewardModel::from_json(json::parse(read_file(a.reward)));
  const RngStream rng(a.seed, 0);
  PolicyModel policy;
  if (!a.policy.empty()) {
    policy = PolicyModel::from_json(json::parse(read_file(a.policy)));
  } else if (const TabularMdp* mdp = env->tabular()) {
    policy = finite_horizon_soft_vi(*mdp, reward, env->spec().horizon, a.temperature).policy;
  } else {
    throw ConfigurationError("continuous environments need --policy");
  }
  policy.check_compatible(env->spec());
  const auto evals = rollout_batch(*env, policy, rng.derive(1), a.episodes);
  std::vector<double> success;
  for (const auto& t : evals) success.push_back(env->success(t.observations.back()) ? 1.0 : 0.0);
  json result;
  result["success_metric"] = task_success_metric(success, a.window);
  RngStream srng = rng.derive(2);
  std::vector<Observation> states;
  for (int i = 0; i < a.states; ++i) states.push_back(env->sample_observation(srng));
  try {
    result["reward_correlation"] = reward_correlation(reward, *env, states);
  } catch (const Error& e) {
    result["reward_correlation"] = nullptr;
    result["reward_correlation_error"] = e.what();
  }
  std::cout << result.dump(2) << "\n";
  return 0;
}

int cmd_variant_list() {
  std::cout << "environments:\n";
  for (const auto& e : list_base_environments()) std::cout << "  " << e << "\n";
  std::cout << "  gridworld-<W>x<H>\nvariants:\n";
  for (const auto& v : list_variants()) std::cout << "  " << v << "\n";
  return 0;
}

int cmd_variant_show(const std::string& env_id, const std::vector<std::string>& variants) {
  const EnvPtr env = env_with_variants(env_id, variants);
  std::cout << "id: " << env->id() << "\nobs_dim: " << env->spec().obs_dim
            << "\nhorizon: " << env->spec().horizon << "\n\n"
            << env->spec().source_text << "\nground-truth features:\n"
            << print_feature_program(env->gt_program());
  return 0;
}

struct ReportArgs {
  std::vector<std::string> dirs;
  std::string csv;
  std::string markdown;
};

int cmd_report(const ReportArgs& a) {
  std::vector<fs::path> dirs(a.dirs.begin(), a.dirs.end());
  const auto rows = build_report(dirs);
  const std::string md = report_markdown(rows);
  const std::string csv = report_csv(rows);
  std::cout << md;
  if (!a.markdown.empty()) write_file_text(a.markdown, md);
  if (!a.csv.empty()) {
    write_file_text(a.csv, csv);
  } else {
    std::cout << "\n" << csv;
  }
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Feature-program inverse reinforcement learning with language-model feedback"};
  app.require_subcommand(1);
  app.name("elemental");

  DemoGenArgs dg;
  auto* demo_gen = app.add_subcommand("demo-gen", "Record demonstrations from a soft-optimal expert");
  demo_gen->add_option("--env", dg.env, "Environment id")->capture_default_str();
  demo_gen->add_option("--variant", dg.variants, "Variant token (repeatable)");
  demo_gen->add_option("--count", dg.count, "Number of episodes")->capture_default_str();
  demo_gen->add_option("--seed", dg.seed, "Random seed")->capture_default_str();
  demo_gen->add_option("--temperature", dg.temperature, "Tabular expert temperature")
      ->capture_default_str();
  demo_gen->add_option("-k,--k", dg.k, "Policy updates for continuous experts")->capture_default_str();
  demo_gen->add_option("--out", dg.out, "Output JSONL")->capture_default_str();
  demo_gen->add_option("--images", dg.images, "Image directory (default: next to --out)");
  demo_gen->add_option("--keyframes", dg.keyframes, "Keyframe count")->capture_default_str();

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run the full loop from a config file");
  run->add_option("--config", ra.config, "RunConfig JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--mock-llm", ra.mock, "Offline mock script (JSONL)")->check(CLI::ExistingFile);
  run->add_option("--out", ra.out, "Output directory");
  run->add_option("--seeds", ra.seeds, "Seeds")->delimiter(',');
  run->add_option("--outer-iterations", ra.outer, "Outer iterations");
  run->add_option("--samples", ra.samples, "Candidate programs per iteration");
  run->add_option("--selection", ra.selection, "feature_match or gt_success")
      ->check(CLI::IsMember({"feature_match", "gt_success"}));
  run->add_flag("--no-reflection", ra.no_reflection);
  run->add_flag("--no-grad-norm", ra.no_grad_norm);
  run->add_flag("--no-weight-norm", ra.no_weight_norm);
  run->add_flag("--no-visual-input", ra.no_visual_input);
  run->add_flag("--text-demo", ra.text_demo);

  IrlArgs ia;
  auto* irl = app.add_subcommand("irl", "Run IRL with a fixed feature program");
  irl->add_option("--program", ia.program, "Feature program file, 'identity' or 'gt'")->required();
  irl->add_option("--env", ia.env, "Environment id")->capture_default_str();
  irl->add_option("--variant", ia.variants, "Variant token (repeatable)");
  irl->add_option("--demos", ia.demos, "Demonstration JSONL")->required()->check(CLI::ExistingFile);
  irl->add_option("--out", ia.out, "Output directory")->capture_default_str();
  irl->add_option("--seed", ia.seed)->capture_default_str();
  irl->add_option("-m,--m", ia.m, "IRL iterations")->capture_default_str();
  irl->add_option("--alpha", ia.alpha, "Learning rate")->capture_default_str();
  irl->add_option("-k,--k", ia.k, "Policy updates per iteration")->capture_default_str();
  irl->add_option("--eval-episodes", ia.eval_episodes)->capture_default_str();
  irl->add_option("--temperature", ia.temperature, "Tabular soft-VI temperature")->capture_default_str();
  irl->add_flag("--no-grad-norm", ia.no_grad_norm);
  irl->add_flag("--no-weight-norm", ia.no_weight_norm);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Success metric and reward correlation of a saved reward");
  eval->add_option("--env", ea.env)->capture_default_str();
  eval->add_option("--variant", ea.variants);
  eval->add_option("--reward", ea.reward, "reward.json")->required()->check(CLI::ExistingFile);
  eval->add_option("--policy", ea.policy, "policy.json (tabular: solved from the reward if omitted)")
      ->check(CLI::ExistingFile);
  eval->add_option("--episodes", ea.episodes)->capture_default_str();
  eval->add_option("--states", ea.states, "States for reward correlation")->capture_default_str();
  eval->add_option("--window", ea.window)->capture_default_str();
  eval->add_option("--seed", ea.seed)->capture_default_str();
  eval->add_option("--temperature", ea.temperature)->capture_default_str();

  auto* variant = app.add_subcommand("variant", "List or inspect environments and variants");
  variant->require_subcommand(1);
  auto* vlist = variant->add_subcommand("list", "List environments and variant tokens");
  std::string show_env;
  std::vector<std::string> show_variants;
  auto* vshow = variant->add_subcommand("show", "Describe one environment");
  vshow->add_option("env", show_env, "Environment id")->required();
  vshow->add_option("--variant", show_variants);

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Aggregate run directories into a table");
  report->add_option("dirs", rp.dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--csv", rp.csv, "CSV output path (default: stdout)");
  report->add_option("--markdown", rp.markdown, "Also write the Markdown table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*demo_gen) return cmd_demo_gen(dg);
    if (*run) return cmd_run(ra);
    if (*irl) return cmd_irl(ia);
    if (*eval) return cmd_eval(ea);
    if (*vlist) return cmd_variant_list();
    if (*vshow) return cmd_variant_show(show_env, show_variants);
    if (*report) return cmd_report(rp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace elemental
