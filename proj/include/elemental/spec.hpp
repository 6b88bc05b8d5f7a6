#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

namespace elemental {

using Observation = std::vector<double>;

// Discrete actions are indices; continuous actions are vectors.
using Action = std::variant<int, std::vector<double>>;

struct DiscreteSpace {
  int count = 0;
};

struct ContinuousSpace {
  std::vector<double> low;
  std::vector<double> high;

  std::size_t dim() const { return low.size(); }
};

using ActionSpace = std::variant<DiscreteSpace, ContinuousSpace>;

// Static description of an environment, as shown to the learner.
struct EnvSpec {
  std::size_t obs_dim = 0;
  ActionSpace action_space;
  int horizon = 0;
  double gamma = 0.99;
  // Description of how observations are constructed; sent to the LLM.
  std::string source_text;

  // Throws ConfigurationError when an invariant is violated.
  void validate() const;
  bool discrete() const { return std::holds_alternative<DiscreteSpace>(action_space); }
};

// Throws ConfigurationError when `action` is not a member of `space`.
void check_action(const ActionSpace& space, const Action& action);

}  // namespace elemental
