// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "elemental/envs.hpp"
#include "elemental/error.hpp"
#include "elemental/irl.hpp"
#include "elemental/pipeline.hpp"
#include "test_util.hpp"

using namespace elemental;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double l1(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double linf_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_gt_return(const Environment& env, const std::vector<Trajectory>& trajs) {
  double total = 0.0;
  for (const auto& t : trajs)
    for (const auto& o : t.observations) total += env.ground_truth_reward(o);
  return total / static_cast<double>(trajs.size());
}

// ---- the convergence configuration shared by criteria 3, 4, 5 and 8 ----

constexpr int kSeeds = 10;

IrlHyper convergence_hyper() {
  IrlHyper h;
  h.alpha = 1.0;
  h.m = 5;
  h.eval_episodes = 1000;
  h.temperature = 0.1;
  return h;
}

struct ConvergenceRun {
  IrlOutcome outcome;
  double demo_return = 0.0;
  double learned_return = 0.0;
  double corr_trained = 0.0;  // theta the final policy was trained under
  double corr_post = 0.0;     // theta after the final update
};

ConvergenceRun convergence_run(const Environment& env, std::uint64_t seed, const IrlHyper& hyper) {
  DemoGenOptions o;
  o.count = 500;
  o.temperature = 0.1;
  o.seed = seed;
  const auto demos = generate_demonstrations(env, o);
  ConvergenceRun r{approximate_maxent_irl(env, demos, env.gt_program(), hyper, RngStream(seed, 5)), 0, 0, 0, 0};
  r.demo_return = mean_gt_return(env, demos.trajectories);
  r.learned_return = mean_gt_return(env, rollout_batch(env, r.outcome.policy, RngStream(seed, 6), 1000));
  RngStream srng(seed, 7);
  std::vector<Observation> states;
  for (int i = 0; i < 500; ++i) states.push_back(env.sample_observation(srng));
  const RewardModel trained(r.outcome.trace.iterations.back().theta, env.gt_program());
  r.corr_trained = reward_correlation(trained, env, states);
  try {
    r.corr_post = reward_correlation(r.outcome.reward, env, states);
  } catch (const Error&) {
    r.corr_post = std::nan("");
  }
  return r;
}

std::vector<ConvergenceRun>& base_runs() {
  static std::vector<ConvergenceRun> runs = [] {
    const EnvPtr env = make_environment("gridworld-5x5");
    std::vector<ConvergenceRun> out;
    for (int s = 0; s < kSeeds; ++s) out.push_back(convergence_run(*env, s, convergence_hyper()));
    return out;
  }();
  return runs;
}

TabularMdp random_mdp(RngStream& rng, int states, int actions) {
  TabularMdp m;
  m.num_states = states;
  m.num_actions = actions;
  for (int i = 0; i < states * actions; ++i) m.next_state.push_back(static_cast<int>(rng.uniform_index(states)));
  for (int s = 0; s < states; ++s) {
    m.terminal.push_back(s > 0 && rng.uniform() < 0.25);
    m.observations.push_back({rng.normal(), rng.uniform(), rng.normal()});
  }
  return m;
}

std::string mock_line(const std::string& response) { return json{{"response", response}}.dump() + "\n"; }

std::string fenced(const FeatureProgram& p) { return "```\n" + print_feature_program(p) + "```"; }

// ---- criteria ----

Outcome gradient_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  const EnvPtr env = make_environment("gridworld-5x5");
  const TabularMdp& mdp = *env->tabular();
  const auto& program = env->gt_program();
  const int horizon = 6;
  RngStream rng(101, 0);
  FeatureCounts demo;
  demo.phi = {2.5, 3.0, 1.5, 1.25};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> theta(4);
    for (double& t : theta) t = 2.0 * rng.normal();
    const auto exact = exact_irl_gradient(mdp, theta, program, demo, horizon, ExactMode::kEnumeration);
    const auto policy = finite_horizon_soft_vi(mdp, RewardModel(theta, program), horizon).policy;
    const auto occ = irl_gradient(demo, policy_feature_expectation(mdp, policy, program, horizon));
    worst = std::max(worst, linf_diff(exact, occ));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-8 && secs < 60.0,
          "max L_inf " + fmt("%.2e", worst) + " over 20 theta, " + fmt("%.1f", secs) + " s"};
}

Outcome dual_path() {
  RngStream rng(102, 0);
  const auto program = parse_feature_program("a: obs[0]\nb: obs[1]\nc: tanh(obs[2])");
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    const TabularMdp m = random_mdp(rng, 5 + k, 2 + k % 2);
    const std::vector<double> theta{rng.normal(), rng.normal(), rng.normal()};
    FeatureCounts demo;
    demo.phi = {1.0, 0.5, -0.5};
    const auto e = exact_irl_gradient(m, theta, program, demo, 5, ExactMode::kEnumeration);
    const auto d = exact_irl_gradient(m, theta, program, demo, 5, ExactMode::kOccupancyDp);
    worst = std::max(worst, linf_diff(e, d));
  }
  return {worst <= 1e-10, "max L_inf " + fmt("%.2e", worst) + " over 3 random MDPs"};
}

Outcome convergence() {
  const auto start = std::chrono::steady_clock::now();
  const auto& runs = base_runs();
  bool ok = true;
  double worst_err = 0.0;
  double worst_ratio = 1e300;
  for (const auto& r : runs) {
    const double err = r.outcome.trace.iterations.back().relative_error;
    worst_err = std::max(worst_err, err);
    // Returns are negative here: "90% of the demo return" means at most 10%
    // of its magnitude below it.
    const bool ret_ok = r.learned_return >= r.demo_return - 0.1 * std::abs(r.demo_return);
    worst_ratio = std::min(worst_ratio, (r.learned_return - r.demo_return) / std::abs(r.demo_return));
    ok = ok && err <= 0.1 && ret_ok;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {ok && secs < 300.0, std::to_string(kSeeds) + " seeds: max relative error " + fmt("%.3f", worst_err) +
                                  ", worst (learned - demo)/|demo| return " + fmt("%+.3f", worst_ratio) +
                                  " (need >= -0.100), " + fmt("%.1f", secs) + " s"};
}

Outcome normalization() {
  const EnvPtr env = make_environment("gridworld-5x5");
  bool ok = true;
  double worst_theta = 0.0;
  double worst_grad = 0.0;
  for (const auto& r : base_runs()) {
    for (const auto& it : r.outcome.trace.iterations) {
      if (it.status != "updated") continue;
      worst_theta = std::max(worst_theta, std::abs(l1(it.theta_next) - 1.0));
      worst_grad = std::max(worst_grad, std::abs(l1(it.gradient_normalized) - 1.0));
    }
  }
  ok = worst_theta <= 1e-9 && worst_grad <= 1e-12;

  // Ablations: each flag removes exactly its own step.
  IrlHyper g = convergence_hyper();
  g.ablate_grad_norm = true;
  IrlHyper w = convergence_hyper();
  w.ablate_weight_norm = true;
  const auto base = convergence_run(*env, 0, convergence_hyper()).outcome.trace;
  const auto ga = convergence_run(*env, 0, g).outcome.trace;
  const auto wa = convergence_run(*env, 0, w).outcome.trace;
  bool abl = ga.iterations[0].theta == base.iterations[0].theta &&
             ga.iterations[0].gradient == base.iterations[0].gradient &&
             wa.iterations[0].gradient_normalized == base.iterations[0].gradient_normalized;
  for (const auto& it : ga.iterations) {
    abl = abl && it.gradient_normalized == it.gradient && std::abs(l1(it.theta_next) - 1.0) <= 1e-9;
  }
  bool weight_unnormalized = false;
  for (const auto& it : wa.iterations) {
    abl = abl && std::abs(l1(it.gradient_normalized) - 1.0) <= 1e-12;
    for (std::size_t i = 0; i < it.theta.size(); ++i) {
      abl = abl && it.theta_next[i] == it.theta[i] + 1.0 * it.gradient_normalized[i];
    }
    weight_unnormalized = weight_unnormalized || std::abs(l1(it.theta_next) - 1.0) > 1e-6;
  }
  abl = abl && weight_unnormalized && std::abs(l1(base.iterations[0].gradient) - 1.0) > 1e-6;
  return {ok && abl, "max | ||theta||_1 - 1 | " + fmt("%.1e", worst_theta) + ", max | ||grad'||_1 - 1 | " +
                         fmt("%.1e", worst_grad) + ", ablations " + (abl ? "isolated" : "NOT isolated")};
}

Outcome correlation() {
  double min_trained = 1.0;
  int post_ok = 0;
  double min_post = 1.0;
  for (const auto& r : base_runs()) {
    min_trained = std::min(min_trained, r.corr_trained);
    if (r.corr_post >= 0.9) ++post_ok;
    if (!std::isnan(r.corr_post)) min_post = std::min(min_post, r.corr_post);
  }
  return {min_trained >= 0.9,
          "min Pearson r " + fmt("%.3f", min_trained) + " over " + std::to_string(kSeeds) +
              " seeds (weights paired with the learned policy); after the final update: " +
              std::to_string(post_ok) + "/" + std::to_string(kSeeds) + " >= 0.9, min " + fmt("%.3f", min_post)};
}

Outcome reprompt() {
  const auto spec = make_environment("gridworld-5x5")->spec();
  const std::vector<ChatMessage> prompt{ChatMessage::text("system", "You are a feature engineer."),
                                        ChatMessage::text("user", "write features")};
  MockScript ok;
  ok.turns = {{"no code", {}}, {"```\nf: obs[\n```", {}}, {"```\nf: obs[0]\n```", {}}};
  MockLlmClient a(ok);
  bool first = false;
  try {
    request_feature_program(a, prompt, spec, {});
    first = a.calls() == 3;
  } catch (const Error&) {
  }
  MockScript bad;
  bad.turns = {{"x", {}}, {"y", {}}, {"z", {}}, {"w", {}}, {"```\nf: obs[0]\n```", {}}};
  MockLlmClient b(bad);
  bool second = false;
  try {
    request_feature_program(b, prompt, spec, {});
  } catch (const GenerationFailed& e) {
    second = b.calls() == 4 && e.tracebacks().size() == 4;
  }
  return {first && second, "2 invalid + 1 valid: " + std::to_string(a.calls()) + " calls; 4 invalid: " +
                               std::to_string(b.calls()) + " calls then GenerationFailed"};
}

Outcome offline_determinism() {
  testutil::TempDir dir("accept_det");
  const auto gt = make_environment("gridworld-5x5")->gt_program();
  testutil::spit(dir / "script.jsonl",
                 mock_line("nothing here") + mock_line(fenced(gt)) + mock_line(fenced(gt)) + mock_line(fenced(gt)));
  const json cfg = {{"env", "gridworld-5x5"},
                    {"task_description", "Move the agent to the goal in the top-right corner"},
                    {"demo_gen", {{"count", 100}}},
                    {"irl", {{"m", 3}, {"eval_episodes", 200}, {"temperature", 0.1}}},
                    {"outer_iterations", 2},
                    {"samples_per_iteration", 1},
                    {"seeds", {0, 1}}};
  testutil::spit(dir / "config.json", cfg.dump(2));
  auto run = [&](const std::string& out) {
    std::vector<std::string> args{"elemental", "run", "--config", (dir / "config.json").string(),
                                  "--mock-llm", (dir / "script.jsonl").string(), "--out", (dir / out).string()};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    const int code = cli_main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old);
    return code;
  };
  const int c1 = run("a");
  const int c2 = run("b");
  bool same = c1 == 0 && c2 == 0;
  int compared = 0;
  for (const char* f : {"result.json", "seed_0/metrics.json", "seed_1/metrics.json", "seed_0/transcript.jsonl",
                        "seed_1/transcript.jsonl"}) {
    const bool exists = fs::exists(dir / "a" / f) && fs::exists(dir / "b" / f);
    same = same && exists && testutil::slurp(dir / "a" / f) == testutil::slurp(dir / "b" / f);
    ++compared;
  }
  return {same, std::to_string(compared) + " metric/transcript files byte-identical across two runs (exit codes " +
                    std::to_string(c1) + ", " + std::to_string(c2) + ")"};
}

Outcome generalization() {
  // reversed_obs: the variant's ground-truth program is the base program
  // with remapped indices.
  const EnvPtr base = make_environment("gridworld-5x5");
  const EnvPtr rev = make_variant(base, VariantSpec::parse("reversed_obs"));
  std::vector<double> eb, ev, rb, rv;
  for (int s = 0; s < kSeeds; ++s) {
    const auto& b = base_runs()[s];
    const auto v = convergence_run(*rev, s, convergence_hyper());
    eb.push_back(b.outcome.trace.iterations.back().relative_error);
    ev.push_back(v.outcome.trace.iterations.back().relative_error);
    rb.push_back(b.learned_return);
    rv.push_back(v.learned_return);
  }
  auto within = [](const std::vector<double>& x, const std::vector<double>& y, double& diff, double& bound) {
    const auto ax = aggregate(x);
    const auto ay = aggregate(y);
    const double n = static_cast<double>(x.size());
    diff = std::abs(ax.mean - ay.mean);
    // Sample (n-1) variances for the standard error of each mean.
    bound = 3.0 * std::sqrt((ax.std * ax.std + ay.std * ay.std) / (n - 1.0));
    return diff <= bound;
  };
  double de = 0, be = 0, dr = 0, br = 0;
  const bool rev_ok = within(eb, ev, de, be) && within(rb, rv, dr, br);

  // Lighter gravity point-mass: the offline pipeline completes and reports.
  testutil::TempDir dir("accept_gravity");
  const EnvPtr pm = make_environment("pointmass");
  testutil::spit(dir / "script.jsonl", mock_line(fenced(pm->gt_program())));
  RunConfig c;
  c.env = "pointmass";
  c.variants = {"lighter_gravity"};
  c.task_description = "Move the point mass to the goal region";
  c.demo_gen.count = 10;
  c.demo_gen.budget.steps = 30;
  c.irl.m = 2;
  c.irl.budget.steps = 20;
  c.irl.eval_episodes = 10;
  c.outer_iterations = 1;
  c.samples_per_iteration = 1;
  c.feedback_episodes = 10;
  c.correlation_states = 200;
  c.llm.mock_script = dir / "script.jsonl";
  c.output_dir = dir / "out";
  bool gravity_ok = false;
  std::string gravity;
  try {
    const auto r = run_elemental(c);
    gravity_ok = fs::exists(dir / "out" / "seed_0" / "metrics.json") && std::isfinite(r.success.mean);
    gravity = "success " + fmt("%.3f", r.success.mean) + ", reward r " +
              (r.correlation ? fmt("%.3f", r.correlation->mean) : std::string("n/a"));
  } catch (const std::exception& e) {
    gravity = std::string("failed: ") + e.what();
  }
  return {rev_ok && gravity_ok, "reversed_obs: |d rel.err| " + fmt("%.4f", de) + " <= " + fmt("%.4f", be) +
                                    ", |d return| " + fmt("%.4f", dr) + " <= " + fmt("%.4f", br) +
                                    "; lighter_gravity point-mass run: " + gravity};
}

Outcome finite_difference() {
  EnvSpec spec;
  spec.obs_dim = 1;
  spec.action_space = DiscreteSpace{2};
  spec.horizon = 5;
  NeuralConfig cfg;
  cfg.hidden = {2};
  cfg.activation = Activation::kTanh;
  double worst = 0.0;
  std::size_t params_n = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(900 + seed, 0);
    PolicyModel p = PolicyModel::neural(spec, cfg, rng);
    params_n = p.param_count();
    std::vector<double> params = p.params();
    for (double& v : params) v += 0.5 * rng.normal();
    p.set_params(params);
    SurrogateBatch batch;
    for (int i = 0; i < 16; ++i) {
      batch.observations.push_back({2.0 * rng.uniform() - 1.0});
      batch.actions.push_back(static_cast<int>(rng.uniform_index(2)));
      const double shift = (i % 3 == 0 ? 0.6 : 0.05) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      batch.old_log_probs.push_back(p.log_prob(batch.observations.back(), batch.actions.back()) + shift);
      batch.advantages.push_back(rng.normal());
    }
    std::vector<double> analytic;
    clipped_surrogate(p, batch, 0.2, &analytic);
    const double h = 1e-6;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto plus = params;
      auto minus = params;
      plus[i] += h;
      minus[i] -= h;
      PolicyModel pp = p;
      pp.set_params(plus);
      PolicyModel pm = p;
      pm.set_params(minus);
      const double fd =
          (clipped_surrogate(pp, batch, 0.2, nullptr) - clipped_surrogate(pm, batch, 0.2, nullptr)) / (2.0 * h);
      num += (analytic[i] - fd) * (analytic[i] - fd);
      den = std::max({den, analytic[i] * analytic[i], fd * fd});
    }
    worst = std::max(worst, std::sqrt(num) / std::sqrt(den));
  }
  return {params_n == 10 && worst <= 1e-4,
          std::to_string(params_n) + " parameters, max relative error " + fmt("%.2e", worst) + " over 5 policies"};
}

Outcome metric_definitions() {
  bool ok = true;
  // Success over the final 100 steps.
  std::vector<double> hist(50, 0.0);
  for (int i = 0; i < 100; ++i) hist.push_back(i < 25 ? 0.0 : 1.0);
  ok = ok && task_success_metric(hist, 100) == 0.75;
  ok = ok && task_success_metric(std::vector<double>{1.0, 0.0, 0.0, 1.0, 1.0}, 100) == 0.6;
  // Best-of-seeds and mean ± population std for seeds scoring 0.2, 0.5, 0.8.
  const auto a = aggregate(std::vector<double>{0.2, 0.5, 0.8});
  ok = ok && a.max == 0.8 && std::abs(a.mean - 0.5) < 1e-15 && std::abs(a.std - std::sqrt(0.06)) < 1e-15;
  const auto b = aggregate(std::vector<double>{1.0, 1.0, 0.0, 0.0});
  ok = ok && b.max == 1.0 && b.mean == 0.5 && b.std == 0.5;
  return {ok, "final-window success and max / mean±std aggregation match hand-computed fixtures"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 gradient equivalence (occupancy vs enumeration)", gradient_equivalence},
      {"2 dual-path exact gradient oracle", dual_path},
      {"3 IRL convergence with ground-truth features", convergence},
      {"4 normalization invariants and ablations", normalization},
      {"5 reward correlation", correlation},
      {"6 re-prompt protocol", reprompt},
      {"7 offline pipeline determinism", offline_determinism},
      {"8 generalization harness", generalization},
      {"9 policy-gradient finite differences", finite_difference},
      {"10 metric definitions", metric_definitions},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
