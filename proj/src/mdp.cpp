#include "elemental/mdp.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "elemental/error.hpp"
#include "elemental/reward.hpp"

namespace elemental {

using json = nlohmann::json;

std::size_t DemonstrationSet::obs_dim() const {
  if (trajectories.empty() || trajectories.front().observations.empty()) return 0;
  return trajectories.front().observations.front().size();
}

double Environment::ground_truth_reward(std::span<const double> obs) const {
  const auto phi = evaluate_features(gt_program(), obs);
  const auto& theta = gt_theta();
  double r = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) r += theta[i] * phi[i];
  return r;
}

std::optional<std::array<double, 2>> Environment::project(std::span<const double>) const {
  return std::nullopt;
}
std::optional<std::array<double, 2>> Environment::goal_projection() const {
  return std::nullopt;
}
std::optional<std::array<int, 2>> Environment::render_grid() const { return std::nullopt; }
std::optional<int> Environment::state_index(const EnvState&) const { return std::nullopt; }

std::vector<std::vector<double>> TabularMdp::transition_matrix(int action) const {
  std::vector<std::vector<double>> m(num_states, std::vector<double>(num_states, 0.0));
  for (int s = 0; s < num_states; ++s) m[s][next(s, action)] = 1.0;
  return m;
}

void TabularMdp::validate() const {
  if (num_states < 1 || num_actions < 1) {
    throw ConfigurationError("tabular MDP needs at least one state and one action");
  }
  if (next_state.size() != static_cast<std::size_t>(num_states) * num_actions ||
      terminal.size() != static_cast<std::size_t>(num_states) ||
      observations.size() != static_cast<std::size_t>(num_states)) {
    throw ConfigurationError("tabular MDP tables have inconsistent sizes");
  }
  for (int s : next_state) {
    if (s < 0 || s >= num_states) throw ConfigurationError("transition target out of range");
  }
  if (initial_state < 0 || initial_state >= num_states) {
    throw ConfigurationError("initial state out of range");
  }
}

// ---------------------------------------------------------------------------
// Rollouts

Trajectory rollout(const Environment& env, const Policy& policy, RngStream rng) {
  const EnvSpec& spec = env.spec();
  policy.check_compatible(spec);

  Trajectory traj;
  traj.seed = static_cast<std::int64_t>(rng.seed());
  traj.stream = rng.stream_id();

  EnvState state = env.reset(rng);
  Observation obs = env.observe(state);
  if (obs.size() != spec.obs_dim) {
    throw ConfigurationError("environment produced an observation of dimension " +
                             std::to_string(obs.size()) + ", spec says " +
                             std::to_string(spec.obs_dim));
  }
  traj.observations.push_back(obs);
  for (int t = 0; t < spec.horizon; ++t) {
    const PolicyInput input{traj.observations.back(), env.state_index(state), t};
    Action action = policy.sample(input, rng);
    StepResult result = env.step(state, action, rng);
    traj.actions.push_back(std::move(action));
    traj.observations.push_back(std::move(result.observation));
    state = std::move(result.next);
    if (result.done) break;
  }
  return traj;
}

std::vector<Trajectory> rollout_batch(const Environment& env, const Policy& policy,
                                      const RngStream& rng, int count) {
  std::vector<Trajectory> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    out.push_back(rollout(env, policy, rng.derive(static_cast<std::uint64_t>(i))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Demonstration I/O

std::string serialize_trajectory(const Trajectory& traj) {
  json j;
  json actions = json::array();
  for (const auto& a : traj.actions) {
    if (const int* d = std::get_if<int>(&a)) {
      actions.push_back(*d);
    } else {
      actions.push_back(std::get<std::vector<double>>(a));
    }
  }
  j["actions"] = std::move(actions);
  j["observations"] = traj.observations;
  j["seed"] = traj.seed;
  return j.dump();
}

Trajectory parse_trajectory(const std::string& line, int line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON record: ") + e.what(), line_no, 0);
  }
  if (!j.is_object()) throw ParseError("record is not a JSON object", line_no, 0);
  for (const char* key : {"observations", "actions", "seed"}) {
    if (!j.contains(key)) {
      throw ParseError(std::string("record is missing \"") + key + "\"", line_no, 0);
    }
  }

  Trajectory traj;
  const json& obs = j["observations"];
  if (!obs.is_array() || obs.empty()) {
    throw SchemaError("\"observations\" must be a nonempty array", line_no);
  }
  for (const auto& row : obs) {
    if (!row.is_array() || row.empty()) {
      throw SchemaError("each observation must be a nonempty array", line_no);
    }
    Observation o;
    o.reserve(row.size());
    for (const auto& v : row) {
      if (!v.is_number()) throw SchemaError("observation entries must be numbers", line_no);
      o.push_back(v.get<double>());
    }
    if (!traj.observations.empty() && o.size() != traj.observations.front().size()) {
      throw SchemaError("observation of dimension " + std::to_string(o.size()) +
                            " in an episode of dimension " +
                            std::to_string(traj.observations.front().size()),
                        line_no);
    }
    traj.observations.push_back(std::move(o));
  }

  const json& actions = j["actions"];
  if (!actions.is_array()) throw SchemaError("\"actions\" must be an array", line_no);
  for (const auto& a : actions) {
    if (a.is_number_integer()) {
      traj.actions.emplace_back(a.get<int>());
    } else if (a.is_array()) {
      std::vector<double> v;
      for (const auto& x : a) {
        if (!x.is_number()) throw SchemaError("action entries must be numbers", line_no);
        v.push_back(x.get<double>());
      }
      traj.actions.emplace_back(std::move(v));
    } else {
      throw SchemaError("actions must be integers or arrays of numbers", line_no);
    }
  }
  const std::size_t n_obs = traj.observations.size();
  if (traj.actions.size() != n_obs && traj.actions.size() + 1 != n_obs) {
    throw SchemaError("episode has " + std::to_string(traj.actions.size()) +
                          " actions for " + std::to_string(n_obs) + " observations",
                      line_no);
  }
  if (!j["seed"].is_number_integer()) throw SchemaError("\"seed\" must be an integer", line_no);
  traj.seed = j["seed"].get<std::int64_t>();
  return traj;
}

DemonstrationSet load_demonstrations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open demonstration file " + path.string());
  DemonstrationSet set;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Trajectory traj = parse_trajectory(line, line_no);
    if (!set.trajectories.empty() &&
        traj.observations.front().size() != set.obs_dim()) {
      throw SchemaError("episode has observation dimension " +
                            std::to_string(traj.observations.front().size()) +
                            " but earlier episodes have " + std::to_string(set.obs_dim()),
                        line_no);
    }
    set.trajectories.push_back(std::move(traj));
  }
  if (set.trajectories.empty()) throw Error("no trajectories in " + path.string());
  return set;
}

void save_demonstrations(const DemonstrationSet& demos, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write demonstration file " + path.string());
  for (const auto& traj : demos.trajectories) out << serialize_trajectory(traj) << '\n';
}

// ---------------------------------------------------------------------------
// Reward model

RewardModel::RewardModel(std::vector<double> theta, FeatureProgram program)
    : theta_(std::move(theta)), program_(std::move(program)) {
  if (theta_.size() != program_.size()) {
    throw ConfigurationError("reward has " + std::to_string(theta_.size()) +
                             " weights for " + std::to_string(program_.size()) +
                             " features");
  }
}

double RewardModel::evaluate(std::span<const double> obs) const {
  double phi_buf[64];
  std::vector<double> phi_heap;
  std::span<double> phi;
  if (theta_.size() <= 64) {
    phi = std::span<double>(phi_buf, theta_.size());
  } else {
    phi_heap.resize(theta_.size());
    phi = phi_heap;
  }
  evaluate_features_into(program_, obs, phi);
  double r = 0.0;
  for (std::size_t i = 0; i < theta_.size(); ++i) r += theta_[i] * phi[i];
  return r;
}

json RewardModel::to_json() const {
  return json{{"program", print_feature_program(program_)}, {"theta", theta_}};
}

RewardModel RewardModel::from_json(const json& j) {
  if (!j.contains("theta") || !j.contains("program")) {
    throw ConfigurationError("reward JSON needs \"theta\" and \"program\"");
  }
  return RewardModel(j.at("theta").get<std::vector<double>>(),
                     parse_feature_program(j.at("program").get<std::string>()));
}

double discounted_return(const Trajectory& traj, const RewardModel& reward, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (std::size_t t = 0; t < traj.observations.size(); ++t) {
    try {
      total += discount * reward.evaluate(traj.observations[t]);
    } catch (const EvaluationError& e) {
      throw EvaluationError("step " + std::to_string(t) + ": " + e.what(), e.feature());
    }
    discount *= gamma;
  }
  return total;
}

}  // namespace elemental
