#include "elemental/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "elemental/error.hpp"

namespace elemental {

using json = nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_sum_exp(std::span<const double> x, double temperature) {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp((v - mx) / temperature);
  return mx + temperature * std::log(sum);
}

std::vector<double> state_rewards(const TabularMdp& mdp, const RewardModel& reward) {
  std::vector<double> r(mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s) {
    try {
      r[s] = reward.evaluate(mdp.observations[s]);
    } catch (const EvaluationError& e) {
      throw EvaluationError("state " + std::to_string(s) + ": " + e.what(), e.feature());
    }
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// PolicyModel

PolicyModel PolicyModel::tabular(int time_steps, int num_states, int num_actions,
                                 std::vector<double> q, double temperature) {
  if (time_steps < 1 || num_states < 1 || num_actions < 1) {
    throw ConfigurationError("tabular policy needs positive table dimensions");
  }
  if (q.size() != static_cast<std::size_t>(time_steps) * num_states * num_actions) {
    throw ConfigurationError("tabular policy Q table has the wrong size");
  }
  if (!(temperature > 0.0)) throw ConfigurationError("policy temperature must be > 0");
  PolicyModel p;
  p.kind_ = PolicyKind::kTabular;
  p.temperature_ = temperature;
  p.time_steps_ = time_steps;
  p.num_states_ = num_states;
  p.num_actions_ = num_actions;
  p.q_ = std::move(q);
  p.refresh_probs();
  return p;
}

PolicyModel PolicyModel::tabular_uniform(int num_states, int num_actions, double temperature) {
  return tabular(1, num_states, num_actions,
                 std::vector<double>(static_cast<std::size_t>(num_states) * num_actions, 0.0),
                 temperature);
}

void PolicyModel::refresh_probs() {
  probs_.resize(q_.size());
  const std::size_t a_n = num_actions_;
  for (std::size_t row = 0; row < q_.size() / a_n; ++row) {
    const double* q = &q_[row * a_n];
    double* p = &probs_[row * a_n];
    const double mx = *std::max_element(q, q + a_n);
    double sum = 0.0;
    for (std::size_t a = 0; a < a_n; ++a) {
      p[a] = std::exp((q[a] - mx) / temperature_);
      sum += p[a];
    }
    for (std::size_t a = 0; a < a_n; ++a) p[a] /= sum;
  }
}

std::span<const double> PolicyModel::action_probs(int t, int s) const {
  if (kind_ != PolicyKind::kTabular) throw ConfigurationError("action_probs needs a tabular policy");
  const int slice = std::min(std::max(t, 0), time_steps_ - 1);
  const std::size_t off =
      (static_cast<std::size_t>(slice) * num_states_ + s) * static_cast<std::size_t>(num_actions_);
  return {probs_.data() + off, static_cast<std::size_t>(num_actions_)};
}

PolicyModel PolicyModel::neural(const EnvSpec& spec, const NeuralConfig& config, RngStream& rng) {
  spec.validate();
  PolicyModel p;
  p.kind_ = PolicyKind::kNeural;
  p.obs_dim_ = spec.obs_dim;
  p.activation_ = config.activation;
  p.layers_.push_back(static_cast<int>(spec.obs_dim));
  for (int h : config.hidden) {
    if (h < 1) throw ConfigurationError("hidden layer sizes must be positive");
    p.layers_.push_back(h);
  }
  int out = 0;
  if (const auto* d = std::get_if<DiscreteSpace>(&spec.action_space)) {
    out = d->count;
  } else {
    const auto& c = std::get<ContinuousSpace>(spec.action_space);
    p.continuous_ = true;
    p.low_ = c.low;
    p.high_ = c.high;
    out = static_cast<int>(c.dim());
  }
  p.layers_.push_back(out);

  for (std::size_t l = 0; l + 1 < p.layers_.size(); ++l) {
    const int in = p.layers_[l];
    const int o = p.layers_[l + 1];
    const bool last = l + 2 == p.layers_.size();
    const double bound = (last ? 0.01 : 1.0) / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < in * o; ++i) p.params_.push_back((2.0 * rng.uniform() - 1.0) * bound);
    for (int i = 0; i < o; ++i) p.params_.push_back(0.0);
  }
  if (p.continuous_) {
    for (int i = 0; i < out; ++i) p.params_.push_back(config.init_log_std);
  }
  return p;
}

void PolicyModel::set_params(std::vector<double> params) {
  if (kind_ == PolicyKind::kTabular) {
    if (params.size() != q_.size()) throw ConfigurationError("parameter vector has the wrong size");
    q_ = std::move(params);
    refresh_probs();
    return;
  }
  if (params.size() != params_.size()) throw ConfigurationError("parameter vector has the wrong size");
  params_ = std::move(params);
}

void PolicyModel::check_compatible(const EnvSpec& spec) const {
  if (kind_ == PolicyKind::kTabular) {
    const auto* d = std::get_if<DiscreteSpace>(&spec.action_space);
    if (!d || d->count != num_actions_) {
      throw ConfigurationError("tabular policy has " + std::to_string(num_actions_) +
                               " actions; environment action space differs");
    }
    return;
  }
  if (spec.obs_dim != obs_dim_) {
    throw ConfigurationError("policy expects obs_dim " + std::to_string(obs_dim_) +
                             ", environment has " + std::to_string(spec.obs_dim));
  }
  if (continuous_) {
    const auto* c = std::get_if<ContinuousSpace>(&spec.action_space);
    if (!c || c->dim() != low_.size()) {
      throw ConfigurationError("continuous policy does not match the environment action space");
    }
  } else {
    const auto* d = std::get_if<DiscreteSpace>(&spec.action_space);
    if (!d || d->count != layers_.back()) {
      throw ConfigurationError("discrete policy does not match the environment action space");
    }
  }
}

void PolicyModel::forward(std::span<const double> obs, std::vector<std::vector<double>>& acts,
                          std::vector<std::vector<double>>& pre) const {
  if (obs.size() != obs_dim_) {
    throw ConfigurationError("policy expects obs_dim " + std::to_string(obs_dim_) + ", got " +
                             std::to_string(obs.size()));
  }
  const std::size_t n_layers = layers_.size() - 1;
  acts.assign(n_layers + 1, {});
  pre.assign(n_layers, {});
  acts[0].assign(obs.begin(), obs.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in = layers_[l];
    const int out = layers_[l + 1];
    const double* w = &params_[off];
    const double* b = &params_[off + static_cast<std::size_t>(in) * out];
    pre[l].resize(out);
    for (int o = 0; o < out; ++o) {
      double z = b[o];
      const double* row = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) z += row[i] * acts[l][i];
      pre[l][o] = z;
    }
    const bool last = l + 1 == n_layers;
    acts[l + 1].resize(out);
    for (int o = 0; o < out; ++o) {
      const double z = pre[l][o];
      if (last) acts[l + 1][o] = continuous_ ? kMeanBound * std::tanh(z / kMeanBound) : z;
      else acts[l + 1][o] = activation_ == Activation::kRelu ? std::max(z, 0.0) : std::tanh(z);
    }
    off += static_cast<std::size_t>(in) * out + out;
  }
}

std::vector<double> PolicyModel::head(std::span<const double> obs) const {
  if (kind_ != PolicyKind::kNeural) throw ConfigurationError("head() needs a neural policy");
  std::vector<std::vector<double>> acts, pre;
  forward(obs, acts, pre);
  return acts.back();
}

double PolicyModel::log_prob(std::span<const double> obs, const Action& action,
                             std::vector<double>* grad, double scale) const {
  if (kind_ != PolicyKind::kNeural) throw ConfigurationError("log_prob needs a neural policy");
  std::vector<std::vector<double>> acts, pre;
  forward(obs, acts, pre);
  const std::vector<double>& out = acts.back();
  const std::size_t k = out.size();
  const std::size_t log_std_off = params_.size() - (continuous_ ? k : 0);

  double lp = 0.0;
  std::vector<double> d_out(k, 0.0);  // d logp / d head
  if (!continuous_) {
    const int a = std::get<int>(action);
    if (a < 0 || static_cast<std::size_t>(a) >= k) throw ConfigurationError("action out of range");
    const double lse = log_sum_exp(out, 1.0);
    lp = out[a] - lse;
    for (std::size_t i = 0; i < k; ++i) d_out[i] = -std::exp(out[i] - lse);
    d_out[a] += 1.0;
  } else {
    const auto& a = std::get<std::vector<double>>(action);
    if (a.size() != k) throw ConfigurationError("action dimension mismatch");
    for (std::size_t i = 0; i < k; ++i) {
      const double center = 0.5 * (high_[i] + low_[i]);
      const double half = 0.5 * (high_[i] - low_[i]);
      const double y = std::clamp((a[i] - center) / half, -1.0 + 1e-12, 1.0 - 1e-12);
      const double u = std::atanh(y);
      const double log_std = params_[log_std_off + i];
      const double sigma = std::exp(log_std);
      const double z = (u - out[i]) / sigma;
      lp += -0.5 * z * z - log_std - 0.5 * kLog2Pi;
      const double t = std::tanh(pre.back()[i] / kMeanBound);
      d_out[i] = z / sigma * (1.0 - t * t);
      if (grad) (*grad)[log_std_off + i] += scale * (z * z - 1.0);
    }
  }
  if (!grad) return lp;

  // Backpropagate d_out through the layers.
  std::vector<double> delta = d_out;
  std::size_t off_end = log_std_off;
  for (std::size_t l = layers_.size() - 1; l-- > 0;) {
    const int in = layers_[l];
    const int outn = layers_[l + 1];
    const std::size_t off = off_end - (static_cast<std::size_t>(in) * outn + outn);
    const double* w = &params_[off];
    double* gw = &(*grad)[off];
    double* gb = &(*grad)[off + static_cast<std::size_t>(in) * outn];
    std::vector<double> prev(in, 0.0);
    for (int o = 0; o < outn; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += scale * d;
      const double* row = w + static_cast<std::size_t>(o) * in;
      double* grow = gw + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) {
        grow[i] += scale * d * acts[l][i];
        prev[i] += d * row[i];
      }
    }
    if (l > 0) {
      for (int i = 0; i < in; ++i) {
        const double z = pre[l - 1][i];
        if (activation_ == Activation::kRelu) {
          prev[i] = z > 0.0 ? prev[i] : 0.0;
        } else {
          const double t = std::tanh(z);
          prev[i] *= 1.0 - t * t;
        }
      }
    }
    delta = std::move(prev);
    off_end = off;
  }
  return lp;
}

Action PolicyModel::sample(const PolicyInput& input, RngStream& rng) const {
  if (kind_ == PolicyKind::kTabular) {
    if (!input.state_index) {
      throw ConfigurationError("tabular policy needs an environment with enumerable states");
    }
    const int s = *input.state_index;
    if (s < 0 || s >= num_states_) throw ConfigurationError("state index out of range");
    return static_cast<int>(rng.categorical(action_probs(input.t, s)));
  }
  const std::vector<double> out = head(input.obs);
  if (!continuous_) {
    const double lse = log_sum_exp(out, 1.0);
    std::vector<double> p(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) p[i] = std::exp(out[i] - lse);
    return static_cast<int>(rng.categorical(p));
  }
  const std::size_t k = out.size();
  std::vector<double> a(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double sigma = std::exp(params_[params_.size() - k + i]);
    const double u = out[i] + sigma * rng.normal();
    const double center = 0.5 * (high_[i] + low_[i]);
    const double half = 0.5 * (high_[i] - low_[i]);
    a[i] = std::clamp(center + half * std::tanh(u), low_[i], high_[i]);
  }
  return a;
}

json PolicyModel::to_json() const {
  json j;
  if (kind_ == PolicyKind::kTabular) {
    j["kind"] = "tabular_softmax";
    j["shape"] = {{"time_steps", time_steps_},
                  {"num_states", num_states_},
                  {"num_actions", num_actions_}};
    j["temperature"] = temperature_;
    j["params"] = q_;
  } else {
    j["kind"] = "neural";
    j["shape"] = {{"layers", layers_},
                  {"activation", activation_ == Activation::kRelu ? "relu" : "tanh"},
                  {"continuous", continuous_},
                  {"low", low_},
                  {"high", high_}};
    j["params"] = params_;
  }
  return j;
}

PolicyModel PolicyModel::from_json(const json& j) {
  try {
    return from_json_unchecked(j);
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("malformed policy checkpoint: ") + e.what());
  }
}

PolicyModel PolicyModel::from_json_unchecked(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const json& shape = j.at("shape");
  if (kind == "tabular_softmax") {
    return tabular(shape.at("time_steps").get<int>(), shape.at("num_states").get<int>(),
                   shape.at("num_actions").get<int>(), j.at("params").get<std::vector<double>>(),
                   j.value("temperature", 1.0));
  }
  if (kind != "neural") throw ConfigurationError("unknown policy kind '" + kind + "'");
  PolicyModel p;
  p.kind_ = PolicyKind::kNeural;
  p.layers_ = shape.at("layers").get<std::vector<int>>();
  if (p.layers_.size() < 2) throw ConfigurationError("neural policy needs at least two layer sizes");
  p.obs_dim_ = static_cast<std::size_t>(p.layers_.front());
  p.activation_ = shape.at("activation").get<std::string>() == "tanh" ? Activation::kTanh
                                                                      : Activation::kRelu;
  p.continuous_ = shape.at("continuous").get<bool>();
  p.low_ = shape.at("low").get<std::vector<double>>();
  p.high_ = shape.at("high").get<std::vector<double>>();
  p.params_ = j.at("params").get<std::vector<double>>();
  std::size_t expected = 0;
  for (std::size_t l = 0; l + 1 < p.layers_.size(); ++l) {
    expected += static_cast<std::size_t>(p.layers_[l]) * p.layers_[l + 1] + p.layers_[l + 1];
  }
  if (p.continuous_) expected += p.layers_.back();
  if (p.params_.size() != expected) {
    throw ConfigurationError("neural policy checkpoint has " + std::to_string(p.params_.size()) +
                             " parameters, shape implies " + std::to_string(expected));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Soft value iteration

SoftViResult finite_horizon_soft_vi(const TabularMdp& mdp, const RewardModel& reward,
                                    int horizon, double temperature) {
  mdp.validate();
  if (horizon < 1) throw ConfigurationError("soft VI horizon must be >= 1");
  if (!(temperature > 0.0)) throw ConfigurationError("soft VI temperature must be > 0");
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  const std::vector<double> r = state_rewards(mdp, reward);

  SoftViResult res;
  res.continuation.assign(static_cast<std::size_t>(horizon + 1) * S, 0.0);
  std::vector<double> q(static_cast<std::size_t>(horizon) * S * A, 0.0);
  for (int t = horizon - 1; t >= 0; --t) {
    const double* w_next = &res.continuation[static_cast<std::size_t>(t + 1) * S];
    double* w = &res.continuation[static_cast<std::size_t>(t) * S];
    for (int s = 0; s < S; ++s) {
      double* qs = &q[(static_cast<std::size_t>(t) * S + s) * A];
      if (mdp.terminal[s]) continue;  // W = 0, uniform (never used)
      for (int a = 0; a < A; ++a) {
        const int sn = mdp.next(s, a);
        qs[a] = r[sn] + w_next[sn];
      }
      w[s] = log_sum_exp({qs, static_cast<std::size_t>(A)}, temperature);
    }
  }
  res.values.resize(S);
  for (int s = 0; s < S; ++s) res.values[s] = r[s] + res.continuation[s];
  res.iterations = horizon;
  res.policy = PolicyModel::tabular(horizon, S, A, std::move(q), temperature);
  return res;
}

SoftViResult soft_value_iteration(const TabularMdp& mdp, const RewardModel& reward, double gamma,
                                  double tol, double temperature, int max_iterations) {
  mdp.validate();
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigurationError("gamma must be in [0, 1)");
  if (!(tol > 0.0)) throw ConfigurationError("tol must be > 0");
  if (!(temperature > 0.0)) throw ConfigurationError("soft VI temperature must be > 0");
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  const std::vector<double> r = state_rewards(mdp, reward);

  SoftViResult res;
  std::vector<double> v(S, 0.0);
  std::vector<double> v_new(S);
  std::vector<double> q(static_cast<std::size_t>(S) * A, 0.0);
  for (int it = 1;; ++it) {
    if (it > max_iterations) {
      throw IterationLimitError("soft value iteration did not converge in " +
                                std::to_string(max_iterations) + " sweeps");
    }
    double residual = 0.0;
    for (int s = 0; s < S; ++s) {
      if (mdp.terminal[s]) {
        v_new[s] = r[s];
      } else {
        double* qs = &q[static_cast<std::size_t>(s) * A];
        for (int a = 0; a < A; ++a) qs[a] = r[s] + gamma * v[mdp.next(s, a)];
        v_new[s] = log_sum_exp({qs, static_cast<std::size_t>(A)}, temperature);
      }
      residual = std::max(residual, std::abs(v_new[s] - v[s]));
    }
    v.swap(v_new);
    res.residuals.push_back(residual);
    res.iterations = it;
    if (!std::isfinite(residual)) throw IterationLimitError("soft value iteration diverged");
    if (residual < tol) break;
  }
  // Recompute Q from the converged values so the policy matches them.
  for (int s = 0; s < S; ++s) {
    if (mdp.terminal[s]) continue;
    for (int a = 0; a < A; ++a) {
      q[static_cast<std::size_t>(s) * A + a] = r[s] + gamma * v[mdp.next(s, a)];
    }
  }
  res.values = v;
  res.policy = PolicyModel::tabular(1, S, A, std::move(q), temperature);
  return res;
}

// ---------------------------------------------------------------------------
// Policy gradient

void TrainBudget::validate() const {
  if (steps < 0) throw ConfigurationError("policy steps must be >= 0");
  if (batch_episodes < 1) throw ConfigurationError("batch_episodes must be >= 1");
  if (learning_rate < 0.0) throw ConfigurationError("learning rate must be >= 0");
  if (!(clip > 0.0)) throw ConfigurationError("clip ratio must be > 0");
  if (epochs < 1) throw ConfigurationError("epochs must be >= 1");
}

double clipped_surrogate(const PolicyModel& policy, const SurrogateBatch& batch, double clip,
                         std::vector<double>* grad) {
  const std::size_t n = batch.observations.size();
  if (n == 0) throw ConfigurationError("empty surrogate batch");
  if (grad) grad->assign(policy.param_count(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double adv = batch.advantages[i];
    if (adv == 0.0) continue;
    const double lp = policy.log_prob(batch.observations[i], batch.actions[i]);
    // Capped before exp so a collapsed sigma on a saturated action cannot
    // overflow; beyond the cap both branches below are constant anyway.
    const double ratio = std::exp(std::min(lp - batch.old_log_probs[i], std::log(kDualClip) + 1.0));
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    double term = std::min(ratio * adv, clipped * adv);
    bool flows = ratio * adv <= clipped * adv;
    // Negative advantages: the objective is floored at kDualClip * A.
    if (adv < 0.0 && term < kDualClip * adv) {
      term = kDualClip * adv;
      flows = false;
    }
    total += term;
    if (grad && flows) {
      policy.log_prob(batch.observations[i], batch.actions[i], grad,
                      ratio * adv / static_cast<double>(n));
    }
  }
  return total / static_cast<double>(n);
}

SurrogateBatch make_surrogate_batch(PolicyModel& policy, std::vector<Trajectory> batch,
                                    const RewardModel& reward, double gamma,
                                    const TrainBudget& budget) {
  if (batch.empty()) throw ConfigurationError("policy gradient batch is empty");
  std::sort(batch.begin(), batch.end(), [](const Trajectory& a, const Trajectory& b) {
    return std::tie(a.seed, a.stream) < std::tie(b.seed, b.stream);
  });

  SurrogateBatch out;
  std::vector<double> returns;
  std::vector<int> times;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Trajectory& traj = batch[e];
    const std::size_t T = traj.actions.size();
    std::vector<double> r(T);
    for (std::size_t t = 0; t < T; ++t) {
      try {
        r[t] = reward.evaluate(traj.observations[t + 1]);
      } catch (const EvaluationError& err) {
        throw EvaluationError("episode " + std::to_string(e) + ", step " + std::to_string(t + 1) +
                                  ": " + err.what(),
                              err.feature());
      }
      if (!std::isfinite(r[t])) {
        throw Error("non-finite reward " + std::to_string(r[t]) + " at episode " +
                    std::to_string(e) + ", step " + std::to_string(t + 1));
      }
    }
    std::vector<double> g(T);
    double acc = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      acc = r[t] + gamma * acc;
      g[t] = acc;
    }
    for (std::size_t t = 0; t < T; ++t) {
      out.observations.push_back(traj.observations[t]);
      out.actions.push_back(traj.actions[t]);
      out.old_log_probs.push_back(policy.log_prob(traj.observations[t], traj.actions[t]));
      returns.push_back(g[t]);
      times.push_back(static_cast<int>(t));
    }
  }
  if (out.observations.empty()) throw ConfigurationError("policy gradient batch has no actions");

  // Per-time-step batch means; unseen steps take the batch mean as baseline.
  const int max_t = *std::max_element(times.begin(), times.end()) + 1;
  std::vector<double> sum(max_t, 0.0);
  std::vector<int> cnt(max_t, 0);
  for (std::size_t i = 0; i < returns.size(); ++i) {
    sum[times[i]] += returns[i];
    ++cnt[times[i]];
  }
  auto& base = policy.baseline();
  const std::size_t known = base.size();
  out.advantages.resize(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) {
    const int t = times[i];
    const double b = static_cast<std::size_t>(t) < known ? base[t] : sum[t] / cnt[t];
    out.advantages[i] = returns[i] - b;
  }
  if (base.size() < static_cast<std::size_t>(max_t)) base.resize(max_t, 0.0);
  for (int t = 0; t < max_t; ++t) {
    const double m = sum[t] / cnt[t];
    base[t] = static_cast<std::size_t>(t) < known
                  ? (1.0 - budget.baseline_rate) * base[t] + budget.baseline_rate * m
                  : m;
  }

  if (budget.normalize_advantages && out.advantages.size() > 1) {
    const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) /
                        static_cast<double>(out.advantages.size());
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(out.advantages.size()));
    for (double& a : out.advantages) a = (a - mean) / (sd + 1e-8);
  }
  return out;
}

PolicyModel policy_gradient_step(const PolicyModel& policy, const std::vector<Trajectory>& batch,
                                 const RewardModel& reward, double gamma,
                                 const TrainBudget& budget) {
  if (policy.kind() != PolicyKind::kNeural) {
    throw ConfigurationError("policy_gradient_step needs a neural policy");
  }
  budget.validate();
  PolicyModel next = policy;
  const SurrogateBatch sb = make_surrogate_batch(next, batch, reward, gamma, budget);
  if (budget.learning_rate == 0.0) return next;

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  AdamState& adam = next.adam();
  const std::size_t n = next.param_count();
  if (adam.m.size() != n) {
    adam.m.assign(n, 0.0);
    adam.v.assign(n, 0.0);
    adam.steps = 0;
  }
  std::vector<double> grad;
  for (int epoch = 0; epoch < budget.epochs; ++epoch) {
    clipped_surrogate(next, sb, budget.clip, &grad);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(grad[i])) {
        double max_adv = 0.0;
        for (double a : sb.advantages) max_adv = std::max(max_adv, std::abs(a));
        throw Error("non-finite policy gradient at parameter " + std::to_string(i) +
                    " (max |advantage| " + std::to_string(max_adv) + ")");
      }
    }
    ++adam.steps;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.steps));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.steps));
    std::vector<double> params = next.params();
    for (std::size_t i = 0; i < n; ++i) {
      adam.m[i] = kBeta1 * adam.m[i] + (1.0 - kBeta1) * grad[i];
      adam.v[i] = kBeta2 * adam.v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] += budget.learning_rate * (adam.m[i] / c1) / (std::sqrt(adam.v[i] / c2) + kEps);
    }
    if (next.continuous()) {
      const std::size_t k = next.action_dim();
      for (std::size_t i = n - k; i < n; ++i) params[i] = std::clamp(params[i], kMinLogStd, kMaxLogStd);
    }
    next.set_params(std::move(params));
  }
  return next;
}

PolicyModel train_policy(const Environment& env, const RewardModel& reward,
                         const TrainBudget& budget, const PolicyModel& policy,
                         const RngStream& rng, TrainStats* stats) {
  budget.validate();
  policy.check_compatible(env.spec());
  if (policy.kind() == PolicyKind::kTabular) {
    const TabularMdp* mdp = env.tabular();
    if (!mdp) throw ConfigurationError("tabular policy needs an enumerable environment");
    return finite_horizon_soft_vi(*mdp, reward, env.spec().horizon, policy.temperature()).policy;
  }
  PolicyModel current = policy;
  const double gamma = env.spec().gamma;
  for (int step = 0; step < budget.steps; ++step) {
    const auto batch =
        rollout_batch(env, current, rng.derive(static_cast<std::uint64_t>(step)),
                      budget.batch_episodes);
    if (stats) {
      double succ = 0.0;
      double ret = 0.0;
      for (const auto& traj : batch) {
        succ += env.success(traj.observations.back()) ? 1.0 : 0.0;
        ret += discounted_return(traj, reward, gamma);
      }
      stats->success.push_back(succ / static_cast<double>(batch.size()));
      stats->mean_return.push_back(ret / static_cast<double>(batch.size()));
    }
    current = policy_gradient_step(current, batch, reward, gamma, budget);
  }
  return current;
}

}  // namespace elemental
