#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/mdp.hpp"
#include "elemental/policy.hpp"
#include "elemental/reward.hpp"

namespace elemental {

struct FeatureCounts {
  std::vector<double> phi;            // mean per-trajectory feature sum
  std::vector<double> per_step_mean;  // total feature sum / total observations
  int episodes = 0;
  double mean_episode_length = 0.0;

  nlohmann::json to_json() const;
};

// Throws EvaluationError naming the trajectory index and step.
FeatureCounts feature_expectation(std::span<const Trajectory> trajs, const FeatureProgram& program);

// demo.phi - policy.phi.
std::vector<double> irl_gradient(const FeatureCounts& demo, const FeatureCounts& policy);

// v / ||v||_1, or nullopt when ||v||_1 == 0.
std::optional<std::vector<double>> normalize_l1(std::span<const double> v);

// theta + alpha * grad, then L1-normalized unless ablated. Throws
// DegenerateWeightsError when the pre-normalization vector is zero.
std::vector<double> update_weights(std::span<const double> theta, std::span<const double> grad,
                                   double alpha, bool ablate_weight_norm);

enum class ExactMode { kEnumeration, kOccupancyDp };

struct MaxEntExpectation {
  std::vector<double> phi;  // E[sum of phi] under P(tau) ∝ exp(theta . sum phi)
  double log_partition = 0.0;
  double mean_episode_length = 0.0;
};

// Exact MaxEnt trajectory statistics from the MDP's initial state over at
// most `horizon` actions. kEnumeration walks every action sequence and sums
// Z explicitly; kOccupancyDp runs forward/backward messages. Throws
// CapacityError when the requested mode would exceed `capacity` work units.
MaxEntExpectation maxent_expectation(const TabularMdp& mdp, std::span<const double> theta,
                                     const FeatureProgram& program, int horizon, ExactMode mode,
                                     double capacity = 2e7);

std::vector<double> exact_irl_gradient(const TabularMdp& mdp, std::span<const double> theta,
                                       const FeatureProgram& program, const FeatureCounts& demo,
                                       int horizon, ExactMode mode = ExactMode::kEnumeration);

// Exact feature counts of a tabular policy from its state-occupancy measure.
FeatureCounts policy_feature_expectation(const TabularMdp& mdp, const PolicyModel& policy,
                                         const FeatureProgram& program, int horizon);

// Pearson correlation of the learned reward with the environment's GT
// reward over `states`. Throws Error when either series has zero variance.
double reward_correlation(const RewardModel& learned, const Environment& env,
                          std::span<const Observation> states);
double pearson(std::span<const double> x, std::span<const double> y);

// Mean of the last min(window, size) entries. Throws on an empty history.
double task_success_metric(std::span<const double> per_step_success, int window = 100);

struct IrlHyper {
  double alpha = 1.0;
  int m = 5;
  TrainBudget budget;  // budget.steps is k
  int eval_episodes = 32;
  bool ablate_grad_norm = false;
  bool ablate_weight_norm = false;
  double temperature = 1.0;  // tabular soft VI
  NeuralConfig neural;

  void validate() const;
};

struct IrlIteration {
  int iteration = 0;
  std::vector<double> theta;  // weights the policy was trained under
  std::vector<double> gradient;
  std::vector<double> gradient_normalized;  // equals gradient when ablated
  std::vector<double> theta_next;
  FeatureCounts policy_counts;
  double relative_error = 0.0;  // ||Phi_D - Phi_pi||_1 / ||Phi_D||_1
  double mean_episode_length = 0.0;
  double mean_irl_reward = 0.0;  // theta . policy per_step_mean
  double success_rate = 0.0;     // evaluation episodes ending in success
  std::string status;            // "updated" or "converged"

  nlohmann::json to_json() const;
};

struct IrlTrace {
  FeatureCounts demo_counts;
  std::vector<IrlIteration> iterations;
  std::string status;  // "completed" or "converged"
  // Tabular: one entry per evaluation episode. Neural: one per training update.
  std::vector<double> success_history;

  std::string to_jsonl() const;
};

struct IrlOutcome {
  RewardModel reward;
  PolicyModel policy;
  IrlTrace trace;
};

// Approximate MaxEnt-IRL. Tabular environments use exact soft VI as the
// inner solver; others train a neural policy. `initial_policy` warm-starts
// the inner loop.
IrlOutcome approximate_maxent_irl(const Environment& env, const DemonstrationSet& demos,
                                  const FeatureProgram& program, const IrlHyper& hyper,
                                  const RngStream& rng,
                                  std::optional<PolicyModel> initial_policy = std::nullopt);

}  // namespace elemental
