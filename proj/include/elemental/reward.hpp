#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/feature_dsl.hpp"
#include "elemental/mdp.hpp"

namespace elemental {

// Linear reward R(s) = theta . phi(s) over a feature program.
class RewardModel {
 public:
  RewardModel(std::vector<double> theta, FeatureProgram program);

  const std::vector<double>& theta() const { return theta_; }
  const FeatureProgram& program() const { return program_; }
  std::size_t size() const { return theta_.size(); }

  double evaluate(std::span<const double> obs) const;

  // {"program": "<DSL text>", "theta": [...]}
  nlohmann::json to_json() const;
  static RewardModel from_json(const nlohmann::json& j);

 private:
  std::vector<double> theta_;
  FeatureProgram program_;
};

// sum_t gamma^t R(s_t) over every stored observation. Feature failures are
// rethrown as EvaluationError prefixed with the step index.
double discounted_return(const Trajectory& traj, const RewardModel& reward, double gamma);

}  // namespace elemental
