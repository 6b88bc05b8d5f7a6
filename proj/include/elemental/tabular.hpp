#pragma once

#include <vector>

#include "elemental/spec.hpp"

namespace elemental {

// Enumerable MDP with deterministic transitions. Entering a terminal state
// ends the episode; its observation is still recorded.
struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<int> next_state;  // row-major [state][action]
  std::vector<bool> terminal;
  int initial_state = 0;
  std::vector<Observation> observations;  // one per state

  int next(int state, int action) const {
    return next_state[static_cast<std::size_t>(state) * num_actions + action];
  }

  // Dense 0/1 matrix T[s][s'] for one action.
  std::vector<std::vector<double>> transition_matrix(int action) const;

  // Throws ConfigurationError on inconsistent sizes or out-of-range entries.
  void validate() const;
};

}  // namespace elemental
