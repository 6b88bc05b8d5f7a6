#include "elemental/spec.hpp"

#include <cmath>

#include "elemental/error.hpp"

namespace elemental {

void EnvSpec::validate() const {
  if (obs_dim < 1) throw ConfigurationError("obs_dim must be >= 1");
  if (horizon < 1) throw ConfigurationError("horizon must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigurationError("gamma must be in [0, 1)");
  if (const auto* d = std::get_if<DiscreteSpace>(&action_space)) {
    if (d->count < 1) throw ConfigurationError("discrete action count must be >= 1");
  } else {
    const auto& c = std::get<ContinuousSpace>(action_space);
    if (c.low.empty() || c.low.size() != c.high.size()) {
      throw ConfigurationError("continuous action bounds must be nonempty and paired");
    }
    for (std::size_t i = 0; i < c.low.size(); ++i) {
      if (!(c.low[i] < c.high[i])) {
        throw ConfigurationError("continuous action bound " + std::to_string(i) +
                                 " must satisfy low < high");
      }
    }
  }
}

void check_action(const ActionSpace& space, const Action& action) {
  if (const auto* d = std::get_if<DiscreteSpace>(&space)) {
    const int* a = std::get_if<int>(&action);
    if (a == nullptr) throw ConfigurationError("expected a discrete action");
    if (*a < 0 || *a >= d->count) {
      throw ConfigurationError("discrete action " + std::to_string(*a) +
                               " outside [0, " + std::to_string(d->count) + ")");
    }
    return;
  }
  const auto& c = std::get<ContinuousSpace>(space);
  const auto* a = std::get_if<std::vector<double>>(&action);
  if (a == nullptr) throw ConfigurationError("expected a continuous action");
  if (a->size() != c.dim()) {
    throw ConfigurationError("continuous action has dimension " + std::to_string(a->size()) +
                             ", expected " + std::to_string(c.dim()));
  }
  for (std::size_t i = 0; i < a->size(); ++i) {
    const double v = (*a)[i];
    if (!std::isfinite(v) || v < c.low[i] || v > c.high[i]) {
      throw ConfigurationError("continuous action component " + std::to_string(i) +
                               " outside its bounds");
    }
  }
}

}  // namespace elemental
