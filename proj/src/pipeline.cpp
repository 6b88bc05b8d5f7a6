#include "elemental/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "elemental/error.hpp"
#include "elemental/render.hpp"

namespace elemental {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigurationError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigurationError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config key '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

const char* criterion_name(SelectionCriterion c) {
  return c == SelectionCriterion::kFeatureMatch ? "feature_match" : "gt_success";
}

const char* presentation_name(DemoPresentation p) {
  switch (p) {
    case DemoPresentation::kKeyframes: return "keyframes";
    case DemoPresentation::kSuperimposed: return "superimposed";
    case DemoPresentation::kText: return "text";
    case DemoPresentation::kNone: return "none";
  }
  return "keyframes";
}

void read_budget(const json& j, TrainBudget& b) {
  read(j, "k", b.steps);
  read(j, "batch_episodes", b.batch_episodes);
  read(j, "learning_rate", b.learning_rate);
  read(j, "clip", b.clip);
  read(j, "epochs", b.epochs);
}

json budget_json(const TrainBudget& b) {
  return {{"k", b.steps},
          {"batch_episodes", b.batch_episodes},
          {"learning_rate", b.learning_rate},
          {"clip", b.clip},
          {"epochs", b.epochs}};
}

void read_neural(const json& j, NeuralConfig& n) {
  read(j, "hidden", n.hidden);
  if (j.contains("activation")) {
    const auto a = j["activation"].get<std::string>();
    if (a == "relu") n.activation = Activation::kRelu;
    else if (a == "tanh") n.activation = Activation::kTanh;
    else throw ConfigurationError("activation must be relu or tanh");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double mean_gt_return(const Environment& env, std::span<const Trajectory> trajs) {
  double total = 0.0;
  for (const auto& t : trajs) {
    for (const auto& o : t.observations) total += env.ground_truth_reward(o);
  }
  return total / static_cast<double>(trajs.size());
}

}  // namespace

// ---- config ----

void RunConfig::validate() const {
  if (outer_iterations < 1) throw ConfigurationError("outer_iterations must be >= 1");
  if (samples_per_iteration < 1) throw ConfigurationError("samples_per_iteration must be >= 1");
  if (seeds.empty()) throw ConfigurationError("seeds must be nonempty");
  if (keyframe_count < 2) throw ConfigurationError("keyframe_count must be >= 2");
  if (eval_window < 1) throw ConfigurationError("eval_window must be >= 1");
  if (feedback_episodes < 1) throw ConfigurationError("feedback_episodes must be >= 1");
  if (correlation_states < 2) throw ConfigurationError("correlation_states must be >= 2");
  if (demo_gen.count < 1) throw ConfigurationError("demo_gen.count must be >= 1");
  if (task_description.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ConfigurationError("task_description is empty");
  }
  irl.validate();
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, "config",
             {"label", "env", "variants", "demos", "demo_gen", "task_description", "llm", "irl",
              "outer_iterations", "samples_per_iteration", "seeds", "ablations",
              "selection_criterion", "demo_presentation", "keyframe_count", "superimpose_all_demos",
              "eval_window",
              "feedback_episodes", "correlation_states", "output_dir"});
  RunConfig c;
  read(j, "label", c.label);
  if (j.contains("env")) c.env = j["env"];
  if (j.contains("variants")) {
    if (j["variants"].is_string()) c.variants = {j["variants"].get<std::string>()};
    else read(j, "variants", c.variants);
  }
  if (j.contains("demos") && !j["demos"].is_null()) {
    c.demos = resolve(base_dir, j["demos"].get<std::string>());
  }
  if (j.contains("demo_gen")) {
    const auto& d = j["demo_gen"];
    check_keys(d, "demo_gen", {"count", "temperature", "seed", "k", "batch_episodes",
                               "learning_rate", "clip", "epochs", "hidden", "activation"});
    read(d, "count", c.demo_gen.count);
    read(d, "temperature", c.demo_gen.temperature);
    read(d, "seed", c.demo_gen.seed);
    read_budget(d, c.demo_gen.budget);
    read_neural(d, c.demo_gen.neural);
  }
  read(j, "task_description", c.task_description);
  if (j.contains("llm")) {
    const auto& l = j["llm"];
    check_keys(l, "llm", {"model", "temperature", "max_tokens", "max_retries", "endpoint",
                          "api_key_env", "timeout_seconds", "http_retries", "mock_script"});
    read(l, "model", c.llm.generation.model);
    read(l, "temperature", c.llm.generation.temperature);
    read(l, "max_tokens", c.llm.generation.max_tokens);
    read(l, "max_retries", c.llm.generation.max_retries);
    read(l, "endpoint", c.llm.http.endpoint);
    read(l, "api_key_env", c.llm.http.api_key_env);
    read(l, "timeout_seconds", c.llm.http.timeout_seconds);
    read(l, "http_retries", c.llm.http.max_retries);
    if (l.contains("mock_script") && !l["mock_script"].is_null()) {
      c.llm.mock_script = resolve(base_dir, l["mock_script"].get<std::string>());
    }
  }
  if (j.contains("irl")) {
    const auto& i = j["irl"];
    check_keys(i, "irl", {"alpha", "m", "k", "batch_episodes", "learning_rate", "clip", "epochs",
                          "eval_episodes", "temperature", "hidden", "activation"});
    read(i, "alpha", c.irl.alpha);
    read(i, "m", c.irl.m);
    read(i, "eval_episodes", c.irl.eval_episodes);
    read(i, "temperature", c.irl.temperature);
    read_budget(i, c.irl.budget);
    read_neural(i, c.irl.neural);
  }
  read(j, "outer_iterations", c.outer_iterations);
  read(j, "samples_per_iteration", c.samples_per_iteration);
  read(j, "seeds", c.seeds);
  if (j.contains("ablations")) {
    const auto& a = j["ablations"];
    check_keys(a, "ablations",
               {"no_reflection", "no_grad_norm", "no_weight_norm", "no_visual_input", "text_demo"});
    read(a, "no_reflection", c.ablations.no_reflection);
    read(a, "no_grad_norm", c.ablations.no_grad_norm);
    read(a, "no_weight_norm", c.ablations.no_weight_norm);
    read(a, "no_visual_input", c.ablations.no_visual_input);
    read(a, "text_demo", c.ablations.text_demo);
  }
  if (j.contains("selection_criterion")) {
    const auto s = j["selection_criterion"].get<std::string>();
    if (s == "feature_match") c.selection = SelectionCriterion::kFeatureMatch;
    else if (s == "gt_success") c.selection = SelectionCriterion::kGtSuccess;
    else throw ConfigurationError("selection_criterion must be feature_match or gt_success");
  }
  if (j.contains("demo_presentation")) {
    const auto p = j["demo_presentation"].get<std::string>();
    if (p == "keyframes") c.presentation = DemoPresentation::kKeyframes;
    else if (p == "superimposed") c.presentation = DemoPresentation::kSuperimposed;
    else throw ConfigurationError("demo_presentation must be keyframes or superimposed");
  }
  read(j, "keyframe_count", c.keyframe_count);
  read(j, "superimpose_all_demos", c.superimpose_all_demos);
  read(j, "eval_window", c.eval_window);
  read(j, "feedback_episodes", c.feedback_episodes);
  read(j, "correlation_states", c.correlation_states);
  if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
  c.irl.ablate_grad_norm = c.ablations.no_grad_norm;
  c.irl.ablate_weight_norm = c.ablations.no_weight_norm;
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["label"] = label;
  j["env"] = env;
  j["variants"] = variants;
  j["demos"] = demos ? json(demos->string()) : json(nullptr);
  json dg = budget_json(demo_gen.budget);
  dg["count"] = demo_gen.count;
  dg["temperature"] = demo_gen.temperature;
  dg["seed"] = demo_gen.seed;
  dg["hidden"] = demo_gen.neural.hidden;
  dg["activation"] = demo_gen.neural.activation == Activation::kRelu ? "relu" : "tanh";
  j["demo_gen"] = dg;
  j["task_description"] = task_description;
  j["llm"] = {{"model", llm.generation.model},
              {"temperature", llm.generation.temperature},
              {"max_tokens", llm.generation.max_tokens},
              {"max_retries", llm.generation.max_retries},
              {"endpoint", llm.http.endpoint},
              {"api_key_env", llm.http.api_key_env},
              {"timeout_seconds", llm.http.timeout_seconds},
              {"http_retries", llm.http.max_retries},
              {"mock_script", llm.mock_script ? json(llm.mock_script->string()) : json(nullptr)}};
  json irl_j = budget_json(irl.budget);
  irl_j["alpha"] = irl.alpha;
  irl_j["m"] = irl.m;
  irl_j["eval_episodes"] = irl.eval_episodes;
  irl_j["temperature"] = irl.temperature;
  irl_j["hidden"] = irl.neural.hidden;
  irl_j["activation"] = irl.neural.activation == Activation::kRelu ? "relu" : "tanh";
  j["irl"] = irl_j;
  j["outer_iterations"] = outer_iterations;
  j["samples_per_iteration"] = samples_per_iteration;
  j["seeds"] = seeds;
  j["ablations"] = {{"no_reflection", ablations.no_reflection},
                    {"no_grad_norm", ablations.no_grad_norm},
                    {"no_weight_norm", ablations.no_weight_norm},
                    {"no_visual_input", ablations.no_visual_input},
                    {"text_demo", ablations.text_demo}};
  j["selection_criterion"] = criterion_name(selection);
  j["demo_presentation"] = presentation_name(presentation);
  j["keyframe_count"] = keyframe_count;
  j["superimpose_all_demos"] = superimpose_all_demos;
  j["eval_window"] = eval_window;
  j["feedback_episodes"] = feedback_episodes;
  j["correlation_states"] = correlation_states;
  j["output_dir"] = output_dir.string();
  return j;
}

EnvPtr RunConfig::make_env() const {
  EnvPtr e = env.is_string() ? make_environment(env.get<std::string>())
                             : make_environment_from_config(env);
  for (const auto& v : variants) e = make_variant(e, VariantSpec::parse(v));
  return e;
}

// ---- building blocks ----

DemonstrationSet generate_demonstrations(const Environment& env, const DemoGenOptions& options) {
  if (options.count < 1) throw ConfigurationError("demo count must be >= 1");
  const RewardModel gt(env.gt_theta(), env.gt_program());
  const RngStream rng(options.seed, 0);
  PolicyModel expert;
  if (const TabularMdp* mdp = env.tabular()) {
    expert = finite_horizon_soft_vi(*mdp, gt, env.spec().horizon, options.temperature).policy;
  } else {
    RngStream init = rng.derive(0);
    expert = PolicyModel::neural(env.spec(), options.neural, init);
    expert = train_policy(env, gt, options.budget, expert, rng.derive(1));
  }
  DemonstrationSet demos;
  demos.trajectories = rollout_batch(env, expert, rng.derive(2), options.count);
  demos.env_id = env.id();
  return demos;
}

FeedbackReport make_feedback_report(const PolicyModel& policy, const DemonstrationSet& demos,
                                    const FeatureProgram& program, const RewardModel& reward,
                                    const Environment& env, int eval_episodes, const RngStream& rng,
                                    int eval_window) {
  if (eval_episodes < 1) throw ConfigurationError("eval_episodes must be >= 1");
  if (reward.size() != program.size()) {
    throw ConfigurationError("reward has " + std::to_string(reward.size()) + " weights, program has " +
                             std::to_string(program.size()) + " features");
  }
  const auto evals = rollout_batch(env, policy, rng, eval_episodes);
  FeedbackReport r;
  r.demo_counts = feature_expectation(demos.trajectories, program);
  r.policy_counts = feature_expectation(evals, program);
  r.feature_names = program.names();
  r.theta = reward.theta();
  r.mean_irl_reward = dot(r.theta, r.policy_counts.per_step_mean);
  r.mean_episode_length = r.policy_counts.mean_episode_length;
  r.eval_window = eval_window;
  r.obs_dim = env.spec().obs_dim;
  return r;
}

double feature_match_loss(const FeatureCounts& demo, const FeatureCounts& policy) {
  if (demo.phi.size() != policy.phi.size() || demo.phi.empty()) {
    throw ConfigurationError("feature count length mismatch");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < demo.phi.size(); ++i) {
    loss += std::abs(demo.phi[i] - policy.phi[i]) / std::max(std::abs(demo.phi[i]), 1e-8);
  }
  return loss / static_cast<double>(demo.phi.size());
}

std::size_t select_candidate(std::span<const CandidateScore> scores, SelectionCriterion criterion) {
  std::optional<std::size_t> best;
  double best_value = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& v = criterion == SelectionCriterion::kFeatureMatch ? scores[i].feature_match_loss
                                                                   : scores[i].success_metric;
    if (!v) continue;
    const double key = criterion == SelectionCriterion::kFeatureMatch ? *v : -*v;
    if (!best || key < best_value) {
      best = i;
      best_value = key;
    }
  }
  if (!best) throw Error("every candidate failed; nothing to select");
  return *best;
}

std::string format_text_demo(const Trajectory& traj, int count) {
  const int T = static_cast<int>(traj.observations.size());
  std::vector<int> idx;
  if (T >= count && count >= 2) {
    idx = keyframe_indices(T, count);
  } else {
    for (int t = 0; t < T; ++t) idx.push_back(t);
  }
  std::string out;
  for (int t : idx) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "step %3d: [", t);
    out += buf;
    const auto& o = traj.observations[t];
    for (std::size_t i = 0; i < o.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%9.4f", i > 0 ? ", " : "", o[i] == 0.0 ? 0.0 : o[i]);
      out += buf;
    }
    out += "]\n";
  }
  return out;
}

json Aggregate::to_json() const {
  return {{"max", max}, {"mean", mean}, {"std", std}, {"count", count}};
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw Error("cannot aggregate an empty sample");
  Aggregate a;
  a.count = static_cast<int>(values.size());
  a.max = *std::max_element(values.begin(), values.end());
  for (double v : values) a.mean += v;
  a.mean /= a.count;
  for (double v : values) a.std += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(a.std / a.count);
  return a;
}

json SeedResult::to_json() const {
  json discarded_j = json::array();
  for (const auto& d : discarded) {
    discarded_j.push_back({{"iteration", d.iteration}, {"candidate", d.candidate}, {"reason", d.reason}});
  }
  return {{"seed", seed},
          {"success_metric", success_metric},
          {"reward_correlation", reward_correlation ? json(*reward_correlation) : json(nullptr)},
          {"relative_error", relative_error},
          {"gt_return", gt_return},
          {"demo_gt_return", demo_gt_return},
          {"chosen_programs", chosen_programs},
          {"discarded", discarded_j},
          {"outer_iterations_run", outer_iterations_run},
          {"irl_status", trace.status}};
}

void ExperimentResult::finalize() {
  std::vector<double> s;
  std::vector<double> c;
  for (const auto& r : seeds) {
    s.push_back(r.success_metric);
    if (r.reward_correlation) c.push_back(*r.reward_correlation);
  }
  success = aggregate(s);
  correlation = c.empty() ? std::nullopt : std::optional<Aggregate>(aggregate(c));
}

json ExperimentResult::to_json() const {
  json per_seed = json::array();
  for (const auto& r : seeds) per_seed.push_back(r.to_json());
  return {{"label", label},
          {"env_id", env_id},
          {"seeds", per_seed},
          {"aggregate",
           {{"success_metric", success.to_json()},
            {"reward_correlation", correlation ? correlation->to_json() : json(nullptr)}}}};
}

ExperimentResult ExperimentResult::from_json(const json& j) {
  ExperimentResult r;
  try {
    r.label = j.at("label").get<std::string>();
    r.env_id = j.at("env_id").get<std::string>();
    for (const auto& s : j.at("seeds")) {
      SeedResult sr;
      sr.seed = s.at("seed").get<std::int64_t>();
      sr.success_metric = s.at("success_metric").get<double>();
      if (!s.at("reward_correlation").is_null()) {
        sr.reward_correlation = s["reward_correlation"].get<double>();
      }
      sr.relative_error = s.value("relative_error", 0.0);
      sr.gt_return = s.value("gt_return", 0.0);
      sr.demo_gt_return = s.value("demo_gt_return", 0.0);
      sr.chosen_programs = s.value("chosen_programs", std::vector<std::string>{});
      sr.outer_iterations_run = s.value("outer_iterations_run", 0);
      if (s.contains("discarded")) {
        for (const auto& d : s["discarded"]) {
          sr.discarded.push_back({d.at("iteration").get<int>(), d.at("candidate").get<int>(),
                                  d.at("reason").get<std::string>()});
        }
      }
      sr.trace.status = s.value("irl_status", std::string());
      r.seeds.push_back(std::move(sr));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("experiment result: ") + e.what(), 0);
  }
  if (r.seeds.empty()) throw SchemaError("experiment result has no seeds", 0);
  r.finalize();
  return r;
}

// ---- the loop ----

namespace {

struct Candidate {
  std::optional<FeatureProgram> program;
  std::optional<IrlOutcome> outcome;
  std::optional<FeedbackReport> report;
  CandidateScore score;
  std::string failure;
};

std::unique_ptr<LlmClient> default_client(const LlmSettings& llm) {
  if (llm.mock_script) return std::make_unique<MockLlmClient>(MockScript::load(*llm.mock_script));
  return std::make_unique<HttpLlmClient>(llm.http);
}

std::vector<ImageData> demo_images(const RunConfig& config, DemoPresentation presentation,
                                   const Environment& env, const DemonstrationSet& demos) {
  std::vector<Image> images;
  const Trajectory& first = demos.trajectories.front();
  const std::span<const Trajectory> superimposed =
      config.superimpose_all_demos ? std::span<const Trajectory>(demos.trajectories)
                                   : std::span<const Trajectory>(&first, 1);
  if (presentation == DemoPresentation::kKeyframes) {
    const int count = std::min<int>(config.keyframe_count, static_cast<int>(first.observations.size()));
    if (count < 2) {
      images.push_back(render_superimposed(superimposed, env));
    } else {
      images = render_keyframes(first, env, count).frames;
    }
  } else if (presentation == DemoPresentation::kSuperimposed) {
    images.push_back(render_superimposed(superimposed, env));
  }
  std::vector<ImageData> out;
  for (std::size_t k = 0; k < images.size(); ++k) {
    auto png = encode_png(images[k]);
    write_file(config.output_dir / ("demo_" + std::to_string(k) + ".png"), png);
    out.push_back({std::move(png), "image/png"});
  }
  return out;
}

Candidate evaluate_candidate(const RunConfig& config, const Environment& env,
                             const DemonstrationSet& demos, FeatureProgram program,
                             const RngStream& rng) {
  Candidate c;
  try {
    IrlOutcome outcome = approximate_maxent_irl(env, demos, program, config.irl, rng.derive(0));
    const RewardModel trained_under(outcome.trace.iterations.back().theta, program);
    FeedbackReport report = make_feedback_report(outcome.policy, demos, program, trained_under, env,
                                                 config.feedback_episodes, rng.derive(1),
                                                 config.eval_window);
    c.score.feature_match_loss = feature_match_loss(report.demo_counts, report.policy_counts);
    c.score.success_metric = task_success_metric(outcome.trace.success_history, config.eval_window);
    c.outcome = std::move(outcome);
    c.report = std::move(report);
  } catch (const DegenerateWeightsError& e) {
    c.failure = std::string("degenerate weights: ") + e.what();
  } catch (const EvaluationError& e) {
    c.failure = std::string("feature evaluation failed: ") + e.what();
  }
  c.program = std::move(program);
  return c;
}

std::string fenced(const std::string& source) {
  std::string body = source;
  if (!body.empty() && body.back() != '\n') body += '\n';
  return "```\n" + body + "```";
}

SeedResult run_seed(const RunConfig& config, const Environment& env, const DemonstrationSet& demos,
                    const std::vector<ChatMessage>& initial_prompt,
                    std::span<const Observation> samples, std::int64_t seed, LlmClient& inner) {
  const fs::path dir = config.output_dir / ("seed_" + std::to_string(seed));
  fs::create_directories(dir);
  fs::remove(dir / "transcript.jsonl");
  TranscriptRecorder client(inner, dir / "transcript.jsonl");
  const RngStream base(static_cast<std::uint64_t>(seed), 0);

  SeedResult result;
  result.seed = seed;
  std::vector<ChatMessage> prompt = initial_prompt;
  std::optional<Candidate> winner;
  const int iterations = config.ablations.no_reflection ? 1 : config.outer_iterations;

  for (int iter = 0; iter < iterations; ++iter) {
    const fs::path iter_dir = dir / ("iter_" + std::to_string(iter));
    fs::create_directories(iter_dir);
    std::vector<Candidate> candidates;
    for (int j = 0; j < config.samples_per_iteration; ++j) {
      const std::string stem = "candidate_" + std::to_string(j);
      Candidate c;
      try {
        FeatureProgram program =
            request_feature_program(client, prompt, env.spec(), samples, config.llm.generation);
        write_text(iter_dir / (stem + ".dsl"), program.source_text());
        const RngStream rng = base.derive(1000 * static_cast<std::uint64_t>(iter + 1) + j);
        c = evaluate_candidate(config, env, demos, std::move(program), rng);
      } catch (const GenerationFailed& e) {
        c.failure = std::string("generation failed: ") + e.what();
      }
      if (c.outcome) {
        write_text(iter_dir / (stem + ".trace.jsonl"), c.outcome->trace.to_jsonl());
        write_text(iter_dir / (stem + ".feedback.json"), c.report->to_json().dump(2) + "\n");
      } else {
        write_text(iter_dir / (stem + ".error.txt"), c.failure + "\n");
        result.discarded.push_back({iter, j, c.failure});
      }
      candidates.push_back(std::move(c));
    }
    std::vector<CandidateScore> scores;
    for (const auto& c : candidates) scores.push_back(c.score);
    std::size_t chosen = 0;
    try {
      chosen = select_candidate(scores, config.selection);
    } catch (const Error&) {
      throw RunFailed("seed " + std::to_string(seed) + ", iteration " + std::to_string(iter) +
                          ": every candidate failed",
                      dir);
    }
    winner = std::move(candidates[chosen]);
    write_text(iter_dir / "chosen.dsl", winner->program->source_text());
    result.chosen_programs.push_back(winner->program->source_text());
    result.outer_iterations_run = iter + 1;

    if (iter + 1 < iterations) {
      prompt = initial_prompt;
      prompt.push_back(ChatMessage::text("assistant", fenced(winner->program->source_text())));
      for (auto& m : build_reflection_prompt(*winner->report)) prompt.push_back(std::move(m));
    }
  }

  const IrlOutcome& out = *winner->outcome;
  write_text(dir / "reward.json", out.reward.to_json().dump(2) + "\n");
  write_text(dir / "policy.json", out.policy.to_json().dump() + "\n");
  write_text(dir / "trace.jsonl", out.trace.to_jsonl());
  write_text(dir / "program.dsl", winner->program->source_text());

  result.trace = out.trace;
  result.success_metric = task_success_metric(out.trace.success_history, config.eval_window);
  result.relative_error = out.trace.iterations.back().relative_error;
  {
    RngStream srng = base.derive(7);
    std::vector<Observation> states;
    for (int i = 0; i < config.correlation_states; ++i) states.push_back(env.sample_observation(srng));
    try {
      result.reward_correlation = reward_correlation(out.reward, env, states);
    } catch (const Error&) {
      // Undefined (zero variance or a feature that fails off the demo states).
    }
  }
  const auto evals = rollout_batch(env, out.policy, base.derive(8), config.feedback_episodes);
  result.gt_return = mean_gt_return(env, evals);
  result.demo_gt_return = mean_gt_return(env, demos.trajectories);
  write_text(dir / "metrics.json", result.to_json().dump(2) + "\n");
  return result;
}

}  // namespace

ExperimentResult run_elemental(const RunConfig& config, const ClientFactory& factory) {
  config.validate();
  const EnvPtr env = config.make_env();
  fs::create_directories(config.output_dir);
  write_text(config.output_dir / "config.json", config.to_json().dump(2) + "\n");

  DemonstrationSet demos;
  if (config.demos) {
    demos = load_demonstrations(*config.demos);
  } else {
    demos = generate_demonstrations(*env, config.demo_gen);
    save_demonstrations(demos, config.output_dir / "demos.jsonl");
  }
  if (demos.obs_dim() != env->spec().obs_dim) {
    throw ConfigurationError("demonstrations have obs_dim " + std::to_string(demos.obs_dim()) +
                             " but " + env->id() + " has " + std::to_string(env->spec().obs_dim));
  }

  DemoPresentation presentation = config.presentation;
  if (config.ablations.text_demo) presentation = DemoPresentation::kText;
  else if (config.ablations.no_visual_input) presentation = DemoPresentation::kNone;
  PromptOptions options;
  options.demo = presentation;
  if (presentation == DemoPresentation::kText) {
    options.text_demo = format_text_demo(demos.trajectories.front());
  }
  const auto images = demo_images(config, presentation, *env, demos);
  const auto initial_prompt = build_initial_prompt(env->spec(), config.task_description, images, options);

  // Validation samples: observations of the first few demonstrations.
  std::vector<Observation> samples;
  for (std::size_t i = 0; i < std::min<std::size_t>(demos.trajectories.size(), 20); ++i) {
    for (const auto& o : demos.trajectories[i].observations) samples.push_back(o);
  }

  ExperimentResult result;
  result.label = config.label.empty() ? env->id() : config.label;
  result.env_id = env->id();
  for (const auto seed : config.seeds) {
    std::unique_ptr<LlmClient> client = factory ? factory(seed) : default_client(config.llm);
    try {
      result.seeds.push_back(
          run_seed(config, *env, demos, initial_prompt, samples, seed, *client));
    } catch (const RunFailed&) {
      throw;
    } catch (const Error& e) {
      throw RunFailed("seed " + std::to_string(seed) + ": " + e.what(),
                      config.output_dir / ("seed_" + std::to_string(seed)));
    }
  }
  result.finalize();
  write_text(config.output_dir / "result.json", result.to_json().dump(2) + "\n");
  return result;
}

}  // namespace elemental
