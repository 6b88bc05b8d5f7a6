#include "elemental/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "elemental/error.hpp"

namespace elemental {

using json = nlohmann::json;

std::string ObservationDocs::render() const {
  std::ostringstream out;
  out << header << "\n";
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out << "obs[" << i << "] = " << lines[i] << "\n";
  }
  out << footer;
  return out.str();
}

// ---------------------------------------------------------------------------
// Variants

VariantSpec VariantSpec::parse(std::string_view token) {
  VariantSpec v;
  if (token == "reversed_obs") {
    v.kind = Kind::kReversedObs;
  } else if (token == "reversed_task") {
    v.kind = Kind::kReversedTask;
  } else if (token == "lighter_gravity") {
    v.kind = Kind::kGravityScale;
    v.factor = 5.00 / 9.81;
  } else if (token.starts_with("gravity_scale:")) {
    v.kind = Kind::kGravityScale;
    const std::string_view num = token.substr(std::string_view("gravity_scale:").size());
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v.factor);
    if (ec != std::errc() || ptr != num.data() + num.size()) {
      throw ConfigurationError("invalid gravity scale factor in '" + std::string(token) + "'");
    }
    if (!(v.factor > 0.0) || !std::isfinite(v.factor)) {
      throw ConfigurationError("gravity scale factor must be > 0");
    }
  } else {
    throw ConfigurationError("unknown variant '" + std::string(token) + "'");
  }
  return v;
}

std::string VariantSpec::token() const {
  switch (kind) {
    case Kind::kReversedObs: return "reversed_obs";
    case Kind::kReversedTask: return "reversed_task";
    case Kind::kGravityScale: return "gravity_scale:" + format_shortest(factor);
  }
  return "";
}

EnvPtr BuiltinEnvironment::apply_variant(const VariantSpec& variant) const {
  throw ConfigurationError("variant '" + variant.token() + "' does not apply to " + id());
}

Observation reverse_observation(std::span<const double> obs) {
  return Observation(obs.rbegin(), obs.rend());
}

EnvPtr make_variant(const EnvPtr& env, const VariantSpec& variant) {
  auto builtin = std::dynamic_pointer_cast<const BuiltinEnvironment>(env);
  if (!builtin) throw ConfigurationError("variants apply only to built-in environments");
  if (variant.kind == VariantSpec::Kind::kReversedObs) {
    return std::make_shared<ReversedObsEnv>(builtin);
  }
  return builtin->apply_variant(variant);
}

// ---------------------------------------------------------------------------
// GridWorld

namespace {

constexpr int kGridActions = 5;
constexpr int kDx[kGridActions] = {0, 0, -1, 1, 0};
constexpr int kDy[kGridActions] = {1, -1, 0, 0, 0};

}  // namespace

GridWorldEnv::GridWorldEnv(GridWorldConfig config)
    : config_(std::move(config)),
      gt_program_(parse_feature_program(
          "x: obs[0]\n"
          "y: obs[1]\n"
          "dist_x: abs(obs[2])\n"
          "dist_y: abs(obs[3])\n")),
      gt_theta_{0.0, 0.0, -1.0, -1.0} {
  const auto& c = config_;
  if (c.width < 2 || c.height < 2) throw ConfigurationError("gridworld needs width, height >= 2");
  auto inside = [&](const std::array<int, 2>& p) {
    return p[0] >= 0 && p[0] < c.width && p[1] >= 0 && p[1] < c.height;
  };
  if (!inside(c.start) || !inside(c.goal)) throw ConfigurationError("start/goal outside the grid");
  if (c.start == c.goal) throw ConfigurationError("gridworld start must differ from goal");
  if (config_.id.empty()) {
    config_.id = "gridworld-" + std::to_string(c.width) + "x" + std::to_string(c.height);
  }

  const std::string wx = std::to_string(c.width - 1);
  const std::string hy = std::to_string(c.height - 1);
  docs_.header = "GridWorld " + std::to_string(c.width) + "x" + std::to_string(c.height) +
                 ". The agent occupies an integer cell (x, y) with 0 <= x < " +
                 std::to_string(c.width) + " and 0 <= y < " + std::to_string(c.height) +
                 ". The goal is a fixed cell (goal_x, goal_y).\n"
                 "Observation vector obs (length 4):";
  docs_.lines = {
      "x / " + wx + "  (agent column, normalized to [0, 1])",
      "y / " + hy + "  (agent row, normalized to [0, 1])",
      "(goal_x - x) / " + wx + "  (signed horizontal offset to the goal)",
      "(goal_y - y) / " + hy + "  (signed vertical offset to the goal)",
  };
  docs_.footer = "Actions: 0 = up (y+1), 1 = down (y-1), 2 = left (x-1), 3 = right (x+1), "
                 "4 = stay. Moves that would leave the grid keep the agent in place.\n"
                 "The episode ends when the agent enters the goal cell or after " +
                 std::to_string(c.horizon) + " steps.";

  spec_.obs_dim = 4;
  spec_.action_space = DiscreteSpace{kGridActions};
  spec_.horizon = c.horizon;
  spec_.gamma = c.gamma;
  spec_.source_text = docs_.render();
  spec_.validate();

  tabular_.num_states = c.width * c.height;
  tabular_.num_actions = kGridActions;
  tabular_.initial_state = c.start[1] * c.width + c.start[0];
  tabular_.next_state.resize(static_cast<std::size_t>(tabular_.num_states) * kGridActions);
  tabular_.terminal.assign(tabular_.num_states, false);
  tabular_.observations.resize(tabular_.num_states);
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      const int s = y * c.width + x;
      tabular_.observations[s] = cell_observation(x, y);
      tabular_.terminal[s] = (x == c.goal[0] && y == c.goal[1]);
      for (int a = 0; a < kGridActions; ++a) {
        int nx = x + kDx[a];
        int ny = y + kDy[a];
        if (nx < 0 || nx >= c.width || ny < 0 || ny >= c.height) {
          nx = x;
          ny = y;
        }
        tabular_.next_state[static_cast<std::size_t>(s) * kGridActions + a] = ny * c.width + nx;
      }
    }
  }
  tabular_.validate();
}

Observation GridWorldEnv::cell_observation(int x, int y) const {
  const double wx = config_.width - 1;
  const double hy = config_.height - 1;
  return {x / wx, y / hy, (config_.goal[0] - x) / wx, (config_.goal[1] - y) / hy};
}

EnvState GridWorldEnv::reset(RngStream&) const {
  return EnvState{{static_cast<double>(config_.start[0]), static_cast<double>(config_.start[1])}, 0};
}

Observation GridWorldEnv::observe(const EnvState& state) const {
  return cell_observation(static_cast<int>(state.values[0]), static_cast<int>(state.values[1]));
}

StepResult GridWorldEnv::step(const EnvState& state, const Action& action, RngStream&) const {
  check_action(spec_.action_space, action);
  const int a = std::get<int>(action);
  const int x = static_cast<int>(state.values[0]);
  const int y = static_cast<int>(state.values[1]);
  const int s = tabular_.next(y * config_.width + x, a);
  const int nx = s % config_.width;
  const int ny = s / config_.width;
  StepResult result;
  result.next = EnvState{{static_cast<double>(nx), static_cast<double>(ny)}, state.t + 1};
  result.observation = cell_observation(nx, ny);
  result.done = tabular_.terminal[s] || result.next.t >= spec_.horizon;
  return result;
}

bool GridWorldEnv::success(std::span<const double> obs) const {
  return obs.size() == 4 && std::abs(obs[2]) < 1e-12 && std::abs(obs[3]) < 1e-12;
}

Observation GridWorldEnv::sample_observation(RngStream& rng) const {
  const int x = static_cast<int>(rng.uniform_index(config_.width));
  const int y = static_cast<int>(rng.uniform_index(config_.height));
  return cell_observation(x, y);
}

std::optional<std::array<double, 2>> GridWorldEnv::project(std::span<const double> obs) const {
  // Cell centres: column x maps to (x + 0.5) / width.
  const double x = obs[0] * (config_.width - 1);
  const double y = obs[1] * (config_.height - 1);
  return std::array<double, 2>{(x + 0.5) / config_.width, (y + 0.5) / config_.height};
}

std::optional<std::array<double, 2>> GridWorldEnv::goal_projection() const {
  return std::array<double, 2>{(config_.goal[0] + 0.5) / config_.width,
                               (config_.goal[1] + 0.5) / config_.height};
}

std::optional<std::array<int, 2>> GridWorldEnv::render_grid() const {
  return std::array<int, 2>{config_.width, config_.height};
}

std::optional<int> GridWorldEnv::state_index(const EnvState& state) const {
  return static_cast<int>(state.values[1]) * config_.width + static_cast<int>(state.values[0]);
}

EnvPtr GridWorldEnv::apply_variant(const VariantSpec& variant) const {
  if (variant.kind != VariantSpec::Kind::kReversedTask) {
    return BuiltinEnvironment::apply_variant(variant);
  }
  GridWorldConfig c = config_;
  c.goal = {2 * c.start[0] - c.goal[0], 2 * c.start[1] - c.goal[1]};
  if (c.goal[0] < 0 || c.goal[0] >= c.width || c.goal[1] < 0 || c.goal[1] >= c.height) {
    throw ConfigurationError("reversed_task: goal mirrored across the start leaves the grid");
  }
  c.id = config_.id + "+reversed_task";
  return std::make_shared<GridWorldEnv>(c);
}

// ---------------------------------------------------------------------------
// PointMass

PointMassEnv::PointMassEnv(PointMassConfig config)
    : config_(std::move(config)),
      gt_program_(parse_feature_program(
          "dist_to_goal: sqrt(obs[4] * obs[4] + obs[5] * obs[5])\n"
          "speed: sqrt(obs[2] * obs[2] + obs[3] * obs[3])\n")),
      gt_theta_{-1.0, -0.1} {
  const auto& c = config_;
  if (!(c.dt > 0.0)) throw ConfigurationError("point mass dt must be > 0");
  if (!(c.arena > 0.0)) throw ConfigurationError("point mass arena must be > 0");
  if (!(c.action_limit > 0.0)) throw ConfigurationError("point mass action limit must be > 0");

  const double g = std::hypot(c.gravity[0], c.gravity[1]);
  docs_.header = "PointMass in a 2-D box [-" + format_shortest(c.arena) + ", " +
                 format_shortest(c.arena) + "]^2 under constant gravity (magnitude " +
                 format_shortest(g) + ", pointing down). The agent controls its acceleration; "
                 "dynamics p' = p + v * dt, v' = v + (a + g) * dt with dt = " +
                 format_shortest(c.dt) + ". The goal is a fixed point.\n"
                 "Observation vector obs (length 6):";
  docs_.lines = {
      "p_x  (horizontal position)",
      "p_y  (vertical position)",
      "v_x  (horizontal velocity)",
      "v_y  (vertical velocity)",
      "goal_x - p_x  (horizontal offset to the goal)",
      "goal_y - p_y  (vertical offset to the goal)",
  };
  docs_.footer = "Action: 2-D acceleration, each component in [-" +
                 format_shortest(c.action_limit) + ", " + format_shortest(c.action_limit) +
                 "].\nThe episode ends when the agent is within " +
                 format_shortest(c.goal_radius) + " of the goal or after " +
                 std::to_string(c.horizon) + " steps.";

  spec_.obs_dim = 6;
  spec_.action_space = ContinuousSpace{{-c.action_limit, -c.action_limit},
                                       {c.action_limit, c.action_limit}};
  spec_.horizon = c.horizon;
  spec_.gamma = c.gamma;
  spec_.source_text = docs_.render();
  spec_.validate();
}

EnvState PointMassEnv::reset(RngStream&) const {
  return EnvState{{config_.start[0], config_.start[1], 0.0, 0.0}, 0};
}

Observation PointMassEnv::observe(const EnvState& state) const {
  const auto& v = state.values;
  return {v[0], v[1], v[2], v[3], config_.goal[0] - v[0], config_.goal[1] - v[1]};
}

StepResult PointMassEnv::step(const EnvState& state, const Action& action, RngStream&) const {
  check_action(spec_.action_space, action);
  const auto& a = std::get<std::vector<double>>(action);
  const auto& s = state.values;
  const double dt = config_.dt;
  std::vector<double> next = {s[0] + s[2] * dt, s[1] + s[3] * dt,
                              s[2] + (a[0] + config_.gravity[0]) * dt,
                              s[3] + (a[1] + config_.gravity[1]) * dt};
  for (int i = 0; i < 2; ++i) {
    const double clamped = std::clamp(next[i], -config_.arena, config_.arena);
    if (clamped != next[i]) {
      next[i] = clamped;
      next[i + 2] = 0.0;
    }
  }
  StepResult result;
  result.next = EnvState{std::move(next), state.t + 1};
  result.observation = observe(result.next);
  const double dist = std::hypot(result.observation[4], result.observation[5]);
  result.done = dist < config_.goal_radius || result.next.t >= spec_.horizon;
  return result;
}

bool PointMassEnv::success(std::span<const double> obs) const {
  return obs.size() == 6 && std::hypot(obs[4], obs[5]) < config_.goal_radius;
}

Observation PointMassEnv::sample_observation(RngStream& rng) const {
  const double a = config_.arena;
  EnvState s{{(2.0 * rng.uniform() - 1.0) * a, (2.0 * rng.uniform() - 1.0) * a,
              (2.0 * rng.uniform() - 1.0) * 2.0, (2.0 * rng.uniform() - 1.0) * 2.0},
             0};
  return observe(s);
}

std::optional<std::array<double, 2>> PointMassEnv::project(std::span<const double> obs) const {
  const double a = config_.arena;
  return std::array<double, 2>{(obs[0] + a) / (2.0 * a), (obs[1] + a) / (2.0 * a)};
}

std::optional<std::array<double, 2>> PointMassEnv::goal_projection() const {
  const double a = config_.arena;
  return std::array<double, 2>{(config_.goal[0] + a) / (2.0 * a),
                               (config_.goal[1] + a) / (2.0 * a)};
}

EnvPtr PointMassEnv::apply_variant(const VariantSpec& variant) const {
  PointMassConfig c = config_;
  c.id = config_.id + "+" + variant.token();
  switch (variant.kind) {
    case VariantSpec::Kind::kGravityScale:
      if (c.gravity[0] == 0.0 && c.gravity[1] == 0.0) {
        throw ConfigurationError("gravity_scale requires nonzero gravity");
      }
      c.gravity = {c.gravity[0] * variant.factor, c.gravity[1] * variant.factor};
      break;
    case VariantSpec::Kind::kReversedTask:
      c.goal = {-c.goal[0], -c.goal[1]};
      break;
    default:
      return BuiltinEnvironment::apply_variant(variant);
  }
  return std::make_shared<PointMassEnv>(c);
}

// ---------------------------------------------------------------------------
// Reversed observations

ReversedObsEnv::ReversedObsEnv(std::shared_ptr<const BuiltinEnvironment> base)
    : base_(std::move(base)),
      id_(base_->id() + "+reversed_obs"),
      spec_(base_->spec()),
      gt_program_(remap_obs_indices(base_->gt_program(), [n = base_->spec().obs_dim](std::size_t i) {
        return n - 1 - i;
      })) {
  docs_ = base_->docs();
  std::reverse(docs_.lines.begin(), docs_.lines.end());
  docs_.header += "\n(The observation vector is stored in reversed order.)";
  spec_.source_text = docs_.render();
  if (const TabularMdp* t = base_->tabular()) {
    tabular_ = *t;
    for (auto& o : tabular_->observations) o = reverse_observation(o);
  }
}

Observation ReversedObsEnv::observe(const EnvState& state) const {
  return reverse_observation(base_->observe(state));
}

StepResult ReversedObsEnv::step(const EnvState& state, const Action& action, RngStream& rng) const {
  StepResult r = base_->step(state, action, rng);
  r.observation = reverse_observation(r.observation);
  return r;
}

bool ReversedObsEnv::success(std::span<const double> obs) const {
  return base_->success(reverse_observation(obs));
}

Observation ReversedObsEnv::sample_observation(RngStream& rng) const {
  return reverse_observation(base_->sample_observation(rng));
}

std::optional<std::array<double, 2>> ReversedObsEnv::project(std::span<const double> obs) const {
  return base_->project(reverse_observation(obs));
}

std::optional<std::array<double, 2>> ReversedObsEnv::goal_projection() const {
  return base_->goal_projection();
}

std::optional<std::array<int, 2>> ReversedObsEnv::render_grid() const {
  return base_->render_grid();
}

const TabularMdp* ReversedObsEnv::tabular() const {
  return tabular_ ? &*tabular_ : nullptr;
}

std::optional<int> ReversedObsEnv::state_index(const EnvState& state) const {
  return base_->state_index(state);
}

EnvPtr ReversedObsEnv::apply_variant(const VariantSpec& variant) const {
  auto inner = std::dynamic_pointer_cast<const BuiltinEnvironment>(
      make_variant(base_, variant));
  return std::make_shared<ReversedObsEnv>(inner);
}

// ---------------------------------------------------------------------------
// Registry

namespace {

std::vector<std::string> split_plus(std::string_view id) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = id.find('+', start);
    parts.emplace_back(id.substr(start, p == std::string_view::npos ? p : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return parts;
}

EnvPtr make_base(std::string_view name) {
  if (name == "pointmass") return std::make_shared<PointMassEnv>(PointMassConfig{});
  if (name.starts_with("gridworld-")) {
    const std::string_view dims = name.substr(std::string_view("gridworld-").size());
    const std::size_t x = dims.find('x');
    int w = 0;
    int h = 0;
    if (x != std::string_view::npos) {
      std::from_chars(dims.data(), dims.data() + x, w);
      std::from_chars(dims.data() + x + 1, dims.data() + dims.size(), h);
    }
    if (w < 2 || h < 2) throw ConfigurationError("bad gridworld id '" + std::string(name) + "'");
    GridWorldConfig c;
    c.width = w;
    c.height = h;
    // Start in the middle, goal in the far corner so reversed_task stays on the grid.
    c.start = {w / 2, h / 2};
    c.goal = {w - 1, h - 1};
    c.horizon = 3 * (w + h) / 2 - 3;
    return std::make_shared<GridWorldEnv>(c);
  }
  throw ConfigurationError("unknown environment '" + std::string(name) + "'");
}

}  // namespace

EnvPtr make_environment(std::string_view id) {
  const auto parts = split_plus(id);
  EnvPtr env = make_base(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    VariantSpec v = VariantSpec::parse(parts[i]);
    v.base_env_id = env->id();
    env = make_variant(env, v);
  }
  return env;
}

EnvPtr make_environment_from_config(const json& config) {
  if (config.is_string()) return make_environment(config.get<std::string>());
  const std::string type = config.value("type", "");
  EnvPtr env;
  if (type == "gridworld") {
    GridWorldConfig c;
    c.width = config.value("width", c.width);
    c.height = config.value("height", c.height);
    if (config.contains("start")) c.start = config["start"].get<std::array<int, 2>>();
    if (config.contains("goal")) c.goal = config["goal"].get<std::array<int, 2>>();
    c.horizon = config.value("horizon", c.horizon);
    c.gamma = config.value("gamma", c.gamma);
    c.id = config.value("id", std::string());
    env = std::make_shared<GridWorldEnv>(c);
  } else if (type == "pointmass") {
    PointMassConfig c;
    c.dt = config.value("dt", c.dt);
    if (config.contains("gravity")) c.gravity = config["gravity"].get<std::array<double, 2>>();
    c.action_limit = config.value("action_limit", c.action_limit);
    c.arena = config.value("arena", c.arena);
    if (config.contains("start")) c.start = config["start"].get<std::array<double, 2>>();
    if (config.contains("goal")) c.goal = config["goal"].get<std::array<double, 2>>();
    c.goal_radius = config.value("goal_radius", c.goal_radius);
    c.horizon = config.value("horizon", c.horizon);
    c.gamma = config.value("gamma", c.gamma);
    c.id = config.value("id", c.id);
    env = std::make_shared<PointMassEnv>(c);
  } else {
    throw ConfigurationError("env config needs \"type\": \"gridworld\" or \"pointmass\"");
  }
  if (config.contains("variants")) {
    for (const auto& token : config["variants"]) {
      VariantSpec v = VariantSpec::parse(token.get<std::string>());
      v.base_env_id = env->id();
      env = make_variant(env, v);
    }
  }
  return env;
}

std::vector<std::string> list_base_environments() { return {"gridworld-5x5", "pointmass"}; }

std::vector<std::string> list_variants() {
  return {"reversed_obs", "reversed_task", "gravity_scale:<factor>", "lighter_gravity"};
}

}  // namespace elemental
