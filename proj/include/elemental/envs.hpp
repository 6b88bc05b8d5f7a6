#pragma once

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/mdp.hpp"

namespace elemental {

using EnvPtr = std::shared_ptr<const Environment>;

// Parts of the observation description sent to the LLM. Kept separate so
// that variants can rewrite the per-index lines.
struct ObservationDocs {
  std::string header;
  std::vector<std::string> lines;  // lines[i] documents obs[i]
  std::string footer;

  std::string render() const;
};

struct VariantSpec {
  enum class Kind { kReversedObs, kGravityScale, kReversedTask };

  Kind kind = Kind::kReversedObs;
  double factor = 1.0;  // gravity_scale only
  std::string base_env_id;

  // "reversed_obs", "reversed_task", "gravity_scale:<factor>" or
  // "lighter_gravity" (9.81 -> 5.00).
  static VariantSpec parse(std::string_view token);
  std::string token() const;
};

// Base class for the built-in environments: shared docs and variant hook.
class BuiltinEnvironment : public Environment {
 public:
  const ObservationDocs& docs() const { return docs_; }
  // Throws ConfigurationError when the variant does not apply.
  virtual EnvPtr apply_variant(const VariantSpec& variant) const;

 protected:
  ObservationDocs docs_;
};

struct GridWorldConfig {
  int width = 5;
  int height = 5;
  std::array<int, 2> start{2, 2};
  std::array<int, 2> goal{4, 4};
  int horizon = 12;
  double gamma = 0.99;
  std::string id;  // defaults to "gridworld-<w>x<h>"
};

// Deterministic grid; actions 0 up (y+1), 1 down, 2 left, 3 right, 4 stay.
// Entering the goal ends the episode.
class GridWorldEnv : public BuiltinEnvironment {
 public:
  explicit GridWorldEnv(GridWorldConfig config);

  std::string id() const override { return config_.id; }
  const EnvSpec& spec() const override { return spec_; }
  EnvState reset(RngStream& rng) const override;
  Observation observe(const EnvState& state) const override;
  StepResult step(const EnvState& state, const Action& action, RngStream& rng) const override;
  bool success(std::span<const double> obs) const override;
  const FeatureProgram& gt_program() const override { return gt_program_; }
  const std::vector<double>& gt_theta() const override { return gt_theta_; }
  Observation sample_observation(RngStream& rng) const override;
  std::optional<std::array<double, 2>> project(std::span<const double> obs) const override;
  std::optional<std::array<double, 2>> goal_projection() const override;
  std::optional<std::array<int, 2>> render_grid() const override;
  const TabularMdp* tabular() const override { return &tabular_; }
  std::optional<int> state_index(const EnvState& state) const override;
  EnvPtr apply_variant(const VariantSpec& variant) const override;

  const GridWorldConfig& config() const { return config_; }
  Observation cell_observation(int x, int y) const;

 private:
  GridWorldConfig config_;
  EnvSpec spec_;
  FeatureProgram gt_program_;
  std::vector<double> gt_theta_;
  TabularMdp tabular_;
};

struct PointMassConfig {
  double dt = 0.1;
  std::array<double, 2> gravity{0.0, -9.81};
  double action_limit = 15.0;
  double arena = 3.0;  // positions clamped to [-arena, arena]^2
  std::array<double, 2> start{0.0, 0.0};
  std::array<double, 2> goal{2.0, 1.0};
  double goal_radius = 0.3;
  int horizon = 40;
  double gamma = 0.99;
  std::string id = "pointmass";
};

// Euler-integrated point mass: p' = p + v dt, v' = v + (a + g) dt.
// A clamped position coordinate also zeroes that velocity component.
class PointMassEnv : public BuiltinEnvironment {
 public:
  explicit PointMassEnv(PointMassConfig config);

  std::string id() const override { return config_.id; }
  const EnvSpec& spec() const override { return spec_; }
  EnvState reset(RngStream& rng) const override;
  Observation observe(const EnvState& state) const override;
  StepResult step(const EnvState& state, const Action& action, RngStream& rng) const override;
  bool success(std::span<const double> obs) const override;
  const FeatureProgram& gt_program() const override { return gt_program_; }
  const std::vector<double>& gt_theta() const override { return gt_theta_; }
  Observation sample_observation(RngStream& rng) const override;
  std::optional<std::array<double, 2>> project(std::span<const double> obs) const override;
  std::optional<std::array<double, 2>> goal_projection() const override;
  EnvPtr apply_variant(const VariantSpec& variant) const override;

  const PointMassConfig& config() const { return config_; }

 private:
  PointMassConfig config_;
  EnvSpec spec_;
  FeatureProgram gt_program_;
  std::vector<double> gt_theta_;
};

// Emits the wrapped env's observation vector in reversed index order. The
// ground-truth program is remapped so rewards per state are unchanged.
class ReversedObsEnv : public BuiltinEnvironment {
 public:
  explicit ReversedObsEnv(std::shared_ptr<const BuiltinEnvironment> base);

  std::string id() const override { return id_; }
  const EnvSpec& spec() const override { return spec_; }
  EnvState reset(RngStream& rng) const override { return base_->reset(rng); }
  Observation observe(const EnvState& state) const override;
  StepResult step(const EnvState& state, const Action& action, RngStream& rng) const override;
  bool success(std::span<const double> obs) const override;
  const FeatureProgram& gt_program() const override { return gt_program_; }
  const std::vector<double>& gt_theta() const override { return base_->gt_theta(); }
  Observation sample_observation(RngStream& rng) const override;
  std::optional<std::array<double, 2>> project(std::span<const double> obs) const override;
  std::optional<std::array<double, 2>> goal_projection() const override;
  std::optional<std::array<int, 2>> render_grid() const override;
  const TabularMdp* tabular() const override;
  std::optional<int> state_index(const EnvState& state) const override;
  EnvPtr apply_variant(const VariantSpec& variant) const override;

  const BuiltinEnvironment& base() const { return *base_; }

 private:
  std::shared_ptr<const BuiltinEnvironment> base_;
  std::string id_;
  EnvSpec spec_;
  FeatureProgram gt_program_;
  std::optional<TabularMdp> tabular_;
};

Observation reverse_observation(std::span<const double> obs);

// Applies one variant. Throws ConfigurationError when inapplicable.
EnvPtr make_variant(const EnvPtr& env, const VariantSpec& variant);

// Registry ids: "gridworld-5x5", "gridworld-<W>x<H>", "pointmass", each
// optionally followed by "+<variant>" tokens applied left to right.
EnvPtr make_environment(std::string_view id);
// {"type": "gridworld"|"pointmass", ...config fields..., "variants": [...]}
EnvPtr make_environment_from_config(const nlohmann::json& config);
std::vector<std::string> list_base_environments();
std::vector<std::string> list_variants();

}  // namespace elemental
