#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/irl.hpp"

namespace elemental {

// What the reflection prompt shows about one trained candidate.
struct FeedbackReport {
  FeatureCounts demo_counts;
  FeatureCounts policy_counts;
  std::vector<std::string> feature_names;
  std::vector<double> theta;
  double mean_irl_reward = 0.0;
  double mean_episode_length = 0.0;
  int eval_window = 100;
  // Observation length for the code-output instructions; 0 omits them.
  std::size_t obs_dim = 0;

  // Throws ConfigurationError when the vectors disagree in length.
  void validate() const;
  nlohmann::json to_json() const;
};

}  // namespace elemental
