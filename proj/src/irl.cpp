#include "elemental/irl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "elemental/error.hpp"

namespace elemental {

using json = nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double l1(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

// log(exp(a) + exp(b)) with -inf handled.
double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

struct StateTables {
  std::vector<std::vector<double>> phi;  // per state
  std::vector<double> reward;            // theta . phi
};

StateTables tabulate(const TabularMdp& mdp, std::span<const double> theta,
                     const FeatureProgram& program) {
  if (theta.size() != program.size()) {
    throw ConfigurationError("theta has " + std::to_string(theta.size()) + " entries for " +
                             std::to_string(program.size()) + " features");
  }
  StateTables t;
  t.phi.reserve(mdp.num_states);
  t.reward.resize(mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s) {
    try {
      t.phi.push_back(evaluate_features(program, mdp.observations[s]));
    } catch (const EvaluationError& e) {
      throw EvaluationError("state " + std::to_string(s) + ": " + e.what(), e.feature());
    }
    double r = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) r += theta[i] * t.phi[s][i];
    t.reward[s] = r;
  }
  return t;
}

MaxEntExpectation enumerate_trajectories(const TabularMdp& mdp, const StateTables& tab,
                                         int horizon, double capacity) {
  const double leaves = std::pow(static_cast<double>(mdp.num_actions), horizon);
  if (leaves > capacity) {
    throw CapacityError("enumerating " + std::to_string(mdp.num_actions) + "^" +
                        std::to_string(horizon) + " action sequences exceeds the capacity of " +
                        std::to_string(static_cast<long long>(capacity)));
  }
  const std::size_t n = tab.phi.front().size();

  // Streaming log-sum-exp: acc and z are scaled by exp(-shift).
  double shift = kNegInf;
  double z = 0.0;
  double len_acc = 0.0;
  std::vector<double> acc(n, 0.0);

  struct Frame {
    int state;
    int depth;
    double log_w;
    std::vector<double> feat;
    int length;
  };
  std::vector<Frame> stack;
  const int s0 = mdp.initial_state;
  stack.push_back({s0, 0, tab.reward[s0], tab.phi[s0], 1});
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    if (mdp.terminal[f.state] || f.depth == horizon) {
      if (f.log_w > shift) {
        const double scale = shift == kNegInf ? 0.0 : std::exp(shift - f.log_w);
        z *= scale;
        len_acc *= scale;
        for (double& a : acc) a *= scale;
        shift = f.log_w;
      }
      const double w = std::exp(f.log_w - shift);
      z += w;
      len_acc += w * f.length;
      for (std::size_t i = 0; i < n; ++i) acc[i] += w * f.feat[i];
      continue;
    }
    for (int a = mdp.num_actions - 1; a >= 0; --a) {
      const int sn = mdp.next(f.state, a);
      Frame child{sn, f.depth + 1, f.log_w + tab.reward[sn], f.feat, f.length + 1};
      for (std::size_t i = 0; i < n; ++i) child.feat[i] += tab.phi[sn][i];
      stack.push_back(std::move(child));
    }
  }
  MaxEntExpectation out;
  out.phi.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.phi[i] = acc[i] / z;
  out.log_partition = shift + std::log(z);
  out.mean_episode_length = len_acc / z;
  return out;
}

MaxEntExpectation forward_backward(const TabularMdp& mdp, const StateTables& tab, int horizon,
                                   double capacity) {
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  if (static_cast<double>(S) * A * horizon > capacity) {
    throw CapacityError("occupancy DP over " + std::to_string(S) + " states x " +
                        std::to_string(A) + " actions x " + std::to_string(horizon) +
                        " steps exceeds the capacity");
  }
  const std::size_t n = tab.phi.front().size();

  // Backward messages: log of summed exp(future rewards), excluding the
  // current state's own reward.
  std::vector<std::vector<double>> beta(horizon + 1, std::vector<double>(S, 0.0));
  for (int t = horizon - 1; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      if (mdp.terminal[s]) continue;
      double acc = kNegInf;
      for (int a = 0; a < A; ++a) {
        const int sn = mdp.next(s, a);
        acc = log_add(acc, tab.reward[sn] + beta[t + 1][sn]);
      }
      beta[t][s] = acc;
    }
  }
  const int s0 = mdp.initial_state;
  const double log_z = tab.reward[s0] + beta[0][s0];

  // Forward messages: log of summed exp(prefix rewards) reaching s at t.
  std::vector<double> alpha(S, kNegInf);
  alpha[s0] = tab.reward[s0];
  MaxEntExpectation out;
  out.phi.assign(n, 0.0);
  out.log_partition = log_z;
  for (int t = 0; t <= horizon; ++t) {
    for (int s = 0; s < S; ++s) {
      if (alpha[s] == kNegInf) continue;
      const double occ = std::exp(alpha[s] + beta[t][s] - log_z);
      out.mean_episode_length += occ;
      for (std::size_t i = 0; i < n; ++i) out.phi[i] += occ * tab.phi[s][i];
    }
    if (t == horizon) break;
    std::vector<double> next(S, kNegInf);
    for (int s = 0; s < S; ++s) {
      if (alpha[s] == kNegInf || mdp.terminal[s]) continue;
      for (int a = 0; a < A; ++a) {
        const int sn = mdp.next(s, a);
        next[sn] = log_add(next[sn], alpha[s] + tab.reward[sn]);
      }
    }
    alpha.swap(next);
  }
  return out;
}

}  // namespace

json FeatureCounts::to_json() const {
  return json{{"phi", phi},
              {"per_step_mean", per_step_mean},
              {"episodes", episodes},
              {"mean_episode_length", mean_episode_length}};
}

FeatureCounts feature_expectation(std::span<const Trajectory> trajs, const FeatureProgram& program) {
  if (trajs.empty()) throw ConfigurationError("feature_expectation needs at least one trajectory");
  const std::size_t n = program.size();
  FeatureCounts out;
  out.phi.assign(n, 0.0);
  out.per_step_mean.assign(n, 0.0);
  std::vector<double> phi(n);
  std::size_t total_obs = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& obs = trajs[i].observations;
    for (std::size_t t = 0; t < obs.size(); ++t) {
      try {
        evaluate_features_into(program, obs[t], phi);
      } catch (const EvaluationError& e) {
        throw EvaluationError("trajectory " + std::to_string(i) + ", step " + std::to_string(t) +
                                  ": " + e.what(),
                              e.feature());
      }
      for (std::size_t k = 0; k < n; ++k) out.per_step_mean[k] += phi[k];
    }
    total_obs += obs.size();
  }
  const double episodes = static_cast<double>(trajs.size());
  for (std::size_t k = 0; k < n; ++k) {
    out.phi[k] = out.per_step_mean[k] / episodes;
    out.per_step_mean[k] /= static_cast<double>(total_obs);
  }
  out.episodes = static_cast<int>(trajs.size());
  out.mean_episode_length = static_cast<double>(total_obs) / episodes;
  return out;
}

std::vector<double> irl_gradient(const FeatureCounts& demo, const FeatureCounts& policy) {
  if (demo.phi.size() != policy.phi.size()) {
    throw ConfigurationError("feature count length mismatch: " + std::to_string(demo.phi.size()) +
                             " vs " + std::to_string(policy.phi.size()));
  }
  std::vector<double> g(demo.phi.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = demo.phi[i] - policy.phi[i];
  return g;
}

std::optional<std::vector<double>> normalize_l1(std::span<const double> v) {
  const double norm = l1(v);
  if (norm == 0.0) return std::nullopt;
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

std::vector<double> update_weights(std::span<const double> theta, std::span<const double> grad,
                                   double alpha, bool ablate_weight_norm) {
  if (theta.size() != grad.size()) throw ConfigurationError("theta and gradient lengths differ");
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = theta[i] + alpha * grad[i];
  if (l1(out) == 0.0) {
    throw DegenerateWeightsError("weights cancelled to zero after the update");
  }
  if (ablate_weight_norm) return out;
  return *normalize_l1(out);
}

MaxEntExpectation maxent_expectation(const TabularMdp& mdp, std::span<const double> theta,
                                     const FeatureProgram& program, int horizon, ExactMode mode,
                                     double capacity) {
  mdp.validate();
  if (horizon < 1) throw ConfigurationError("horizon must be >= 1");
  const StateTables tab = tabulate(mdp, theta, program);
  return mode == ExactMode::kEnumeration ? enumerate_trajectories(mdp, tab, horizon, capacity)
                                         : forward_backward(mdp, tab, horizon, capacity);
}

std::vector<double> exact_irl_gradient(const TabularMdp& mdp, std::span<const double> theta,
                                       const FeatureProgram& program, const FeatureCounts& demo,
                                       int horizon, ExactMode mode) {
  const MaxEntExpectation e = maxent_expectation(mdp, theta, program, horizon, mode);
  FeatureCounts model;
  model.phi = e.phi;
  return irl_gradient(demo, model);
}

FeatureCounts policy_feature_expectation(const TabularMdp& mdp, const PolicyModel& policy,
                                         const FeatureProgram& program, int horizon) {
  mdp.validate();
  if (policy.kind() != PolicyKind::kTabular || policy.num_states() != mdp.num_states ||
      policy.num_actions() != mdp.num_actions) {
    throw ConfigurationError("policy table does not match the MDP");
  }
  const int S = mdp.num_states;
  const std::size_t n = program.size();
  std::vector<std::vector<double>> phi(S);
  for (int s = 0; s < S; ++s) phi[s] = evaluate_features(program, mdp.observations[s]);

  FeatureCounts out;
  out.phi.assign(n, 0.0);
  std::vector<double> d(S, 0.0);
  d[mdp.initial_state] = 1.0;
  double length = 0.0;
  for (int t = 0;; ++t) {
    for (int s = 0; s < S; ++s) {
      if (d[s] == 0.0) continue;
      length += d[s];
      for (std::size_t i = 0; i < n; ++i) out.phi[i] += d[s] * phi[s][i];
    }
    if (t == horizon) break;
    std::vector<double> next(S, 0.0);
    for (int s = 0; s < S; ++s) {
      if (d[s] == 0.0 || mdp.terminal[s]) continue;
      const auto probs = policy.action_probs(t, s);
      for (int a = 0; a < mdp.num_actions; ++a) next[mdp.next(s, a)] += d[s] * probs[a];
    }
    d.swap(next);
  }
  out.per_step_mean.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.per_step_mean[i] = out.phi[i] / length;
  out.episodes = 1;
  out.mean_episode_length = length;
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigurationError("correlation needs two equal-length series of at least 2 values");
  }
  const double nx = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / nx;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / nx;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("correlation undefined: a series has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double reward_correlation(const RewardModel& learned, const Environment& env,
                          std::span<const Observation> states) {
  std::vector<double> a, b;
  a.reserve(states.size());
  b.reserve(states.size());
  for (const auto& s : states) {
    a.push_back(learned.evaluate(s));
    b.push_back(env.ground_truth_reward(s));
  }
  return pearson(a, b);
}

double task_success_metric(std::span<const double> per_step_success, int window) {
  if (per_step_success.empty()) throw ConfigurationError("success history is empty");
  if (window < 1) throw ConfigurationError("window must be >= 1");
  const std::size_t w = std::min<std::size_t>(window, per_step_success.size());
  const auto tail = per_step_success.last(w);
  return std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(w);
}

// ---------------------------------------------------------------------------
// Algorithm loop

void IrlHyper::validate() const {
  if (!(alpha > 0.0)) throw ConfigurationError("alpha must be > 0");
  if (m < 1) throw ConfigurationError("m must be >= 1");
  if (budget.steps < 1) throw ConfigurationError("k must be >= 1");
  if (eval_episodes < 1) throw ConfigurationError("eval_episodes must be >= 1");
  if (!(temperature > 0.0)) throw ConfigurationError("temperature must be > 0");
  budget.validate();
}

json IrlIteration::to_json() const {
  return json{{"iteration", iteration},
              {"theta", theta},
              {"gradient", gradient},
              {"gradient_normalized", gradient_normalized},
              {"theta_next", theta_next},
              {"policy_counts", policy_counts.to_json()},
              {"relative_error", relative_error},
              {"mean_episode_length", mean_episode_length},
              {"mean_irl_reward", mean_irl_reward},
              {"success_rate", success_rate},
              {"status", status}};
}

std::string IrlTrace::to_jsonl() const {
  std::string out;
  for (const auto& it : iterations) {
    json j = it.to_json();
    j["demo_counts"] = demo_counts.to_json();
    out += j.dump();
    out += '\n';
  }
  return out;
}

IrlOutcome approximate_maxent_irl(const Environment& env, const DemonstrationSet& demos,
                                  const FeatureProgram& program, const IrlHyper& hyper,
                                  const RngStream& rng, std::optional<PolicyModel> initial_policy) {
  hyper.validate();
  if (demos.trajectories.empty()) throw ConfigurationError("no demonstrations");
  if (demos.obs_dim() != env.spec().obs_dim) {
    throw ConfigurationError("demonstrations have obs_dim " + std::to_string(demos.obs_dim()) +
                             ", environment has " + std::to_string(env.spec().obs_dim));
  }

  IrlTrace trace;
  trace.demo_counts = feature_expectation(demos.trajectories, program);
  const double demo_norm = l1(trace.demo_counts.phi);
  const std::size_t n = program.size();
  std::vector<double> theta(n, 1.0 / static_cast<double>(n));

  PolicyModel policy;
  if (initial_policy) {
    policy = std::move(*initial_policy);
  } else if (const TabularMdp* mdp = env.tabular()) {
    policy = PolicyModel::tabular_uniform(mdp->num_states, mdp->num_actions, hyper.temperature);
  } else {
    RngStream init = rng.derive(0);
    policy = PolicyModel::neural(env.spec(), hyper.neural, init);
  }
  const bool tabular = policy.kind() == PolicyKind::kTabular;

  trace.status = "completed";
  for (int i = 0; i < hyper.m; ++i) {
    const RngStream iter_rng = rng.derive(static_cast<std::uint64_t>(i) + 1);
    IrlIteration it;
    it.iteration = i;
    it.theta = theta;
    const RewardModel reward(theta, program);

    TrainStats stats;
    policy = train_policy(env, reward, hyper.budget, policy, iter_rng.derive(0), &stats);

    const auto evals = rollout_batch(env, policy, iter_rng.derive(1), hyper.eval_episodes);
    it.policy_counts = feature_expectation(evals, program);
    double successes = 0.0;
    for (const auto& traj : evals) {
      const double s = env.success(traj.observations.back()) ? 1.0 : 0.0;
      successes += s;
      if (tabular) trace.success_history.push_back(s);
    }
    if (!tabular) {
      trace.success_history.insert(trace.success_history.end(), stats.success.begin(),
                                   stats.success.end());
    }
    it.success_rate = successes / static_cast<double>(evals.size());
    it.mean_episode_length = it.policy_counts.mean_episode_length;
    for (std::size_t k = 0; k < n; ++k) {
      it.mean_irl_reward += theta[k] * it.policy_counts.per_step_mean[k];
    }

    it.gradient = irl_gradient(trace.demo_counts, it.policy_counts);
    it.relative_error = demo_norm > 0.0 ? l1(it.gradient) / demo_norm : l1(it.gradient);
    const auto normalized = normalize_l1(it.gradient);
    if (!normalized) {
      it.gradient_normalized = it.gradient;
      it.theta_next = theta;
      it.status = "converged";
      trace.iterations.push_back(std::move(it));
      trace.status = "converged";
      break;
    }
    it.gradient_normalized = hyper.ablate_grad_norm ? it.gradient : *normalized;
    it.theta_next = update_weights(theta, it.gradient_normalized, hyper.alpha,
                                   hyper.ablate_weight_norm);
    it.status = "updated";
    theta = it.theta_next;
    trace.iterations.push_back(std::move(it));
  }
  return IrlOutcome{RewardModel(theta, program), std::move(policy), std::move(trace)};
}

}  // namespace elemental
