#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/mdp.hpp"
#include "elemental/reward.hpp"

namespace elemental {

enum class PolicyKind { kTabular, kNeural };
enum class Activation { kRelu, kTanh };

struct NeuralConfig {
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::kRelu;
  double init_log_std = -0.5;  // continuous heads only
};

// Training keeps continuous log-stds in this range; below it a policy on
// saturated actions turns deterministic and stops learning.
inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 2.0;
// Continuous pre-squash means are kMeanBound * tanh(z / kMeanBound), so they
// stay where tanh still separates actions.
inline constexpr double kMeanBound = 4.0;

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t steps = 0;
};

// Either a time-indexed softmax table pi_t(a|s) (stationary when it has a
// single time slice) or an MLP. Continuous MLP heads sample a Gaussian in
// pre-squash space, apply tanh and scale to the action box.
class PolicyModel : public Policy {
 public:
  // Empty tabular policy; use the factories below.
  PolicyModel() = default;

  // q has layout [t][s][a]; probabilities are softmax(q / temperature).
  static PolicyModel tabular(int time_steps, int num_states, int num_actions,
                             std::vector<double> q, double temperature = 1.0);
  static PolicyModel tabular_uniform(int num_states, int num_actions, double temperature = 1.0);
  static PolicyModel neural(const EnvSpec& spec, const NeuralConfig& config, RngStream& rng);

  PolicyKind kind() const { return kind_; }
  double temperature() const { return temperature_; }

  Action sample(const PolicyInput& input, RngStream& rng) const override;
  void check_compatible(const EnvSpec& spec) const override;

  // Tabular access. Times past the last slice reuse the last slice.
  int time_steps() const { return time_steps_; }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  std::span<const double> action_probs(int t, int s) const;
  const std::vector<double>& q_table() const { return q_; }

  // Neural access.
  std::size_t param_count() const { return params_.size(); }
  const std::vector<double>& params() const { return params_; }
  void set_params(std::vector<double> params);
  bool continuous() const { return continuous_; }
  std::size_t action_dim() const { return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back()); }
  // log pi(a|obs) (pre-squash density for continuous heads; the tanh
  // Jacobian does not depend on the parameters). When grad is non-null the
  // gradient w.r.t. params is added to it scaled by `scale`.
  double log_prob(std::span<const double> obs, const Action& action,
                  std::vector<double>* grad = nullptr, double scale = 1.0) const;
  // Logits (discrete) or bounded pre-squash means (continuous).
  std::vector<double> head(std::span<const double> obs) const;

  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }
  // Running mean of returns-to-go, indexed by time step.
  std::vector<double>& baseline() { return baseline_; }
  const std::vector<double>& baseline() const { return baseline_; }

  // {"kind", "shape": {...}, "params": [...]}. Optimizer state is not saved.
  nlohmann::json to_json() const;
  static PolicyModel from_json(const nlohmann::json& j);

 private:
  static PolicyModel from_json_unchecked(const nlohmann::json& j);
  void refresh_probs();
  void forward(std::span<const double> obs, std::vector<std::vector<double>>& acts,
               std::vector<std::vector<double>>& pre) const;

  PolicyKind kind_ = PolicyKind::kTabular;
  double temperature_ = 1.0;

  int time_steps_ = 0;
  int num_states_ = 0;
  int num_actions_ = 0;
  std::vector<double> q_;
  std::vector<double> probs_;

  std::size_t obs_dim_ = 0;
  bool continuous_ = false;
  std::vector<int> layers_;  // obs_dim, hidden..., head size
  Activation activation_ = Activation::kRelu;
  std::vector<double> low_;
  std::vector<double> high_;
  std::vector<double> params_;
  AdamState adam_;
  std::vector<double> baseline_;
};

struct SoftViResult {
  PolicyModel policy;
  // Finite horizon: log-partition of the trajectories starting at state s,
  // log Z(s) = r(s) + W_0(s), one entry per state. Discounted: V_soft(s).
  std::vector<double> values;
  // Finite horizon only: W_t(s) in layout [t][s], t = 0..H.
  std::vector<double> continuation;
  int iterations = 0;
  std::vector<double> residuals;  // discounted sweeps: sup-norm change per sweep
};

// Undiscounted, time-indexed soft DP over at most `horizon` actions. The
// resulting policy induces exactly P(tau) proportional to exp(sum of state
// rewards / temperature) over action sequences from the initial state.
SoftViResult finite_horizon_soft_vi(const TabularMdp& mdp, const RewardModel& reward,
                                    int horizon, double temperature = 1.0);

// Stationary discounted soft value iteration, Q(s,a) = r(s) + gamma V(s'),
// until the sup-norm change drops below tol. Throws IterationLimitError.
SoftViResult soft_value_iteration(const TabularMdp& mdp, const RewardModel& reward,
                                  double gamma, double tol, double temperature = 1.0,
                                  int max_iterations = 100000);

struct TrainBudget {
  int steps = 500;           // k
  int batch_episodes = 8;
  double learning_rate = 3e-3;
  double clip = 0.2;
  int epochs = 4;            // surrogate ascent steps per batch
  bool normalize_advantages = true;
  double baseline_rate = 0.1;

  void validate() const;
};

// Flattened per-step samples for the clipped surrogate.
struct SurrogateBatch {
  std::vector<Observation> observations;
  std::vector<Action> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
};

// Mean over samples of min(rho A, clip(rho, 1-eps, 1+eps) A), floored at
// kDualClip * A for negative A. Fills grad (resized to param_count) when
// non-null.
inline constexpr double kDualClip = 3.0;
double clipped_surrogate(const PolicyModel& policy, const SurrogateBatch& batch, double clip,
                         std::vector<double>* grad);

// Builds the surrogate batch from trajectories: reward for action t is
// R(s_{t+1}); advantages are discounted returns-to-go minus the policy's
// running-mean baseline (which is then updated).
SurrogateBatch make_surrogate_batch(PolicyModel& policy, std::vector<Trajectory> batch,
                                    const RewardModel& reward, double gamma,
                                    const TrainBudget& budget);

PolicyModel policy_gradient_step(const PolicyModel& policy, const std::vector<Trajectory>& batch,
                                 const RewardModel& reward, double gamma,
                                 const TrainBudget& budget);

struct TrainStats {
  std::vector<double> success;      // per update: fraction of batch episodes ending in success
  std::vector<double> mean_return;  // per update: mean discounted return under the reward
};

// Tabular policies: one exact finite-horizon soft VI solve (k is irrelevant).
// Neural policies: k policy_gradient_steps on fresh batches drawn from
// rng.derive(step).
PolicyModel train_policy(const Environment& env, const RewardModel& reward,
                         const TrainBudget& budget, const PolicyModel& policy,
                         const RngStream& rng, TrainStats* stats = nullptr);

}  // namespace elemental
