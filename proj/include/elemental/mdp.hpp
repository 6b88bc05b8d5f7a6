#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elemental/feature_dsl.hpp"
#include "elemental/rng.hpp"
#include "elemental/spec.hpp"
#include "elemental/tabular.hpp"

namespace elemental {

// T+1 observations and T actions; observations[t] is recorded before
// actions[t], and the final observation follows the last transition.
struct Trajectory {
  std::vector<Observation> observations;
  std::vector<Action> actions;
  std::int64_t seed = 0;
  // Stream of the generating RngStream. In-memory only (not serialized).
  std::uint64_t stream = 0;

  std::size_t episode_length() const { return observations.size(); }
};

struct DemonstrationSet {
  std::vector<Trajectory> trajectories;
  std::string env_id;
  std::string task_description;

  std::size_t obs_dim() const;
};

struct EnvState {
  std::vector<double> values;
  int t = 0;  // number of transitions taken so far
};

struct StepResult {
  EnvState next;
  Observation observation;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual const EnvSpec& spec() const = 0;

  virtual EnvState reset(RngStream& rng) const = 0;
  virtual Observation observe(const EnvState& state) const = 0;
  // Throws ConfigurationError on an out-of-space action.
  virtual StepResult step(const EnvState& state, const Action& action,
                          RngStream& rng) const = 0;
  // Whether an episode ending in `obs` accomplished the task.
  virtual bool success(std::span<const double> obs) const = 0;

  virtual const FeatureProgram& gt_program() const = 0;
  virtual const std::vector<double>& gt_theta() const = 0;
  double ground_truth_reward(std::span<const double> obs) const;

  // Draw from the state distribution used for reward correlation.
  virtual Observation sample_observation(RngStream& rng) const = 0;

  // Agent position in [0,1]^2 render coordinates, when the env has one.
  virtual std::optional<std::array<double, 2>> project(std::span<const double> obs) const;
  virtual std::optional<std::array<double, 2>> goal_projection() const;
  // Grid dimensions to draw as cell lines (gridworlds only).
  virtual std::optional<std::array<int, 2>> render_grid() const;

  // Tabular access for exact solvers. Null for continuous envs.
  virtual const TabularMdp* tabular() const { return nullptr; }
  virtual std::optional<int> state_index(const EnvState& state) const;
};

struct PolicyInput {
  std::span<const double> obs;
  std::optional<int> state_index;
  int t = 0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action sample(const PolicyInput& input, RngStream& rng) const = 0;
  // Throws ConfigurationError if the policy cannot act in `spec`.
  virtual void check_compatible(const EnvSpec& spec) const = 0;
};

// Runs one episode until the env signals done (goal or horizon).
Trajectory rollout(const Environment& env, const Policy& policy, RngStream rng);

// Episodes i = 0..count-1 each use rng.derive(i); results are in index
// order regardless of how they were computed.
std::vector<Trajectory> rollout_batch(const Environment& env, const Policy& policy,
                                      const RngStream& rng, int count);

// Demonstration JSONL: one episode per line,
// {"actions":[...],"observations":[[...],...],"seed":int}.
std::string serialize_trajectory(const Trajectory& traj);
Trajectory parse_trajectory(const std::string& line, int line_no);
DemonstrationSet load_demonstrations(const std::filesystem::path& path);
void save_demonstrations(const DemonstrationSet& demos, const std::filesystem::path& path);

}  // namespace elemental
