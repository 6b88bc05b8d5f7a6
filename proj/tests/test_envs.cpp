#include <gtest/gtest.h>

#include <cmath>

#include "elemental/envs.hpp"
#include "elemental/error.hpp"

using namespace elemental;

namespace {

const GridWorldEnv& as_grid(const EnvPtr& env) { return dynamic_cast<const GridWorldEnv&>(*env); }
const PointMassEnv& as_pm(const EnvPtr& env) { return dynamic_cast<const PointMassEnv&>(*env); }

// Picks an action from the observation values and the rng, so that the
// trajectory depends on what the policy sees.
class ObsHashPolicy : public Policy {
 public:
  Action sample(const PolicyInput& input, RngStream& rng) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < input.obs.size(); ++i) s += input.obs[i] * static_cast<double>(i + 1);
    const int bias = static_cast<int>(std::floor(std::abs(s) * 7.0)) % 5;
    return static_cast<int>((bias + rng.uniform_index(5)) % 5);
  }
  void check_compatible(const EnvSpec&) const override {}
};

// Feeds the wrapped policy the index-reversed observation.
class ReversalAdapter : public Policy {
 public:
  explicit ReversalAdapter(const Policy& inner) : inner_(inner) {}
  Action sample(const PolicyInput& input, RngStream& rng) const override {
    const Observation rev = reverse_observation(input.obs);
    PolicyInput in = input;
    in.obs = rev;
    return inner_.sample(in, rng);
  }
  void check_compatible(const EnvSpec& spec) const override { inner_.check_compatible(spec); }

 private:
  const Policy& inner_;
};

}  // namespace

TEST(GridWorld, StayKeepsCell) {
  GridWorldConfig c;
  c.start = {0, 0};
  GridWorldEnv env(c);
  RngStream rng(0, 0);
  const EnvState s0 = env.reset(rng);
  const auto r = env.step(s0, 4, rng);
  EXPECT_EQ(r.next.values, s0.values);
  EXPECT_EQ(r.observation, env.observe(s0));
  EXPECT_FALSE(r.done);
}

TEST(GridWorld, OffGridMoveIsNoOp) {
  GridWorldConfig c;
  c.start = {0, 0};
  GridWorldEnv env(c);
  RngStream rng(0, 0);
  const EnvState s0 = env.reset(rng);
  EXPECT_EQ(env.step(s0, 1, rng).next.values, s0.values);  // down
  EXPECT_EQ(env.step(s0, 2, rng).next.values, s0.values);  // left
  EXPECT_EQ(env.step(s0, 0, rng).observation, env.cell_observation(0, 1));
  EXPECT_EQ(env.step(s0, 3, rng).observation, env.cell_observation(1, 0));
}

TEST(GridWorld, EnteringGoalIsDone) {
  GridWorldConfig c;
  c.start = {3, 4};
  GridWorldEnv env(c);
  RngStream rng(0, 0);
  const auto r = env.step(env.reset(rng), 3, rng);  // right, into (4,4)
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(env.success(r.observation));
  EXPECT_EQ(r.observation, env.cell_observation(4, 4));
}

TEST(GridWorld, HorizonEndsEpisode) {
  GridWorldEnv env(GridWorldConfig{});
  RngStream rng(0, 0);
  EnvState s = env.reset(rng);
  for (int t = 0; t < 11; ++t) {
    const auto r = env.step(s, 4, rng);
    EXPECT_FALSE(r.done) << t;
    s = r.next;
  }
  EXPECT_TRUE(env.step(s, 4, rng).done);
}

TEST(GridWorld, ObservationLayoutAndTable) {
  GridWorldEnv env(GridWorldConfig{});
  EXPECT_EQ(env.cell_observation(1, 3), (Observation{0.25, 0.75, 0.75, 0.25}));
  const TabularMdp* t = env.tabular();
  ASSERT_NE(t, nullptr);
  EXPECT_EQ(t->num_states, 25);
  EXPECT_EQ(t->num_actions, 5);
  EXPECT_NO_THROW(t->validate());
  for (int s = 0; s < t->num_states; ++s) {
    for (int a = 0; a < t->num_actions; ++a) {
      EXPECT_GE(t->next(s, a), 0);
      EXPECT_LT(t->next(s, a), 25);
    }
  }
  // Exactly one terminal (the goal).
  int terminals = 0;
  for (bool b : t->terminal) terminals += b ? 1 : 0;
  EXPECT_EQ(terminals, 1);
}

TEST(GridWorld, TableAgreesWithStep) {
  GridWorldEnv env(GridWorldConfig{});
  const TabularMdp& t = *env.tabular();
  RngStream rng(0, 0);
  for (int x = 0; x < 5; ++x) {
    for (int y = 0; y < 5; ++y) {
      const EnvState s{{static_cast<double>(x), static_cast<double>(y)}, 0};
      const int si = *env.state_index(s);
      EXPECT_EQ(t.observations[si], env.observe(s));
      for (int a = 0; a < 5; ++a) {
        const auto r = env.step(s, a, rng);
        EXPECT_EQ(t.observations[t.next(si, a)], r.observation);
      }
    }
  }
}

TEST(GridWorld, InvalidConfigs) {
  GridWorldConfig same;
  same.start = {4, 4};
  EXPECT_THROW(GridWorldEnv{same}, ConfigurationError);
  GridWorldConfig outside;
  outside.goal = {5, 0};
  EXPECT_THROW(GridWorldEnv{outside}, ConfigurationError);
}

TEST(GridWorld, OutOfSpaceActionThrows) {
  GridWorldEnv env(GridWorldConfig{});
  RngStream rng(0, 0);
  const EnvState s = env.reset(rng);
  EXPECT_THROW(env.step(s, 5, rng), ConfigurationError);
  EXPECT_THROW(env.step(s, -1, rng), ConfigurationError);
  EXPECT_THROW(env.step(s, std::vector<double>{0.0}, rng), ConfigurationError);
}

TEST(PointMass, EulerStepWithoutGravity) {
  PointMassConfig c;
  c.gravity = {0.0, 0.0};
  PointMassEnv env(c);
  RngStream rng(0, 0);
  const EnvState s{{0.0, 0.0, 1.0, 0.0}, 0};
  const auto r = env.step(s, std::vector<double>{0.0, 0.0}, rng);
  EXPECT_DOUBLE_EQ(r.next.values[0], 0.1);
  EXPECT_DOUBLE_EQ(r.next.values[1], 0.0);
  EXPECT_DOUBLE_EQ(r.next.values[2], 1.0);
  EXPECT_DOUBLE_EQ(r.next.values[3], 0.0);
  EXPECT_EQ(r.observation, (Observation{0.1, 0.0, 1.0, 0.0, 1.9, 1.0}));
}

TEST(PointMass, GravityAndClamping) {
  PointMassEnv env(PointMassConfig{});
  RngStream rng(0, 0);
  const auto r = env.step(EnvState{{0.0, 0.0, 0.0, 0.0}, 0}, std::vector<double>{0.0, 0.0}, rng);
  EXPECT_DOUBLE_EQ(r.next.values[3], -0.981);
  const auto wall = env.step(EnvState{{2.95, 0.0, 1.0, 0.0}, 0}, std::vector<double>{0.0, 9.81}, rng);
  EXPECT_DOUBLE_EQ(wall.next.values[0], 3.0);
  EXPECT_DOUBLE_EQ(wall.next.values[2], 0.0);
  EXPECT_THROW(env.step(EnvState{{0, 0, 0, 0}, 0}, std::vector<double>{16.0, 0.0}, rng),
               ConfigurationError);
  EXPECT_THROW(env.step(EnvState{{0, 0, 0, 0}, 0}, 1, rng), ConfigurationError);
}

TEST(PointMass, GoalEndsEpisode) {
  PointMassEnv env(PointMassConfig{});
  RngStream rng(0, 0);
  const auto r = env.step(EnvState{{1.9, 1.0, 0.0, 0.0}, 3}, std::vector<double>{0.0, 9.81}, rng);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(env.success(r.observation));
  PointMassConfig bad;
  bad.dt = 0.0;
  EXPECT_THROW(PointMassEnv{bad}, ConfigurationError);
}

TEST(Variants, ReversedObsReversesVector) {
  EXPECT_EQ(reverse_observation(std::vector<double>{1, 2, 3, 4}), (Observation{4, 3, 2, 1}));
  const EnvPtr base = make_environment("gridworld-5x5");
  const EnvPtr rev = make_environment("gridworld-5x5+reversed_obs");
  RngStream rng(0, 0);
  const EnvState s = base->reset(rng);
  EXPECT_EQ(rev->observe(s), reverse_observation(base->observe(s)));
  EXPECT_EQ(rev->id(), "gridworld-5x5+reversed_obs");
  EXPECT_NE(rev->spec().source_text, base->spec().source_text);
  // The first documented line of the variant is the base's last line.
  const auto& docs = dynamic_cast<const BuiltinEnvironment&>(*rev).docs();
  const auto& base_docs = dynamic_cast<const BuiltinEnvironment&>(*base).docs();
  ASSERT_EQ(docs.lines.size(), 4u);
  EXPECT_EQ(docs.lines[0], base_docs.lines[3]);
}

TEST(Variants, LighterGravity) {
  const EnvPtr env = make_environment("pointmass+gravity_scale:" + format_shortest(5.00 / 9.81));
  const auto g = as_pm(env).config().gravity;
  EXPECT_NEAR(std::hypot(g[0], g[1]), 5.00, 1e-12);
  const auto named = as_pm(make_environment("pointmass+lighter_gravity")).config().gravity;
  EXPECT_NEAR(std::hypot(named[0], named[1]), 5.00, 1e-12);
  EXPECT_THROW(VariantSpec::parse("gravity_scale:0"), ConfigurationError);
  EXPECT_THROW(VariantSpec::parse("gravity_scale:-1"), ConfigurationError);
  EXPECT_THROW(VariantSpec::parse("upside_down"), ConfigurationError);
}

TEST(Variants, ReversedTaskMirrorsGoal) {
  GridWorldConfig c;
  c.start = {2, 2};
  c.goal = {4, 2};
  const EnvPtr base = std::make_shared<GridWorldEnv>(c);
  VariantSpec v = VariantSpec::parse("reversed_task");
  const EnvPtr rev = make_variant(base, v);
  EXPECT_EQ(as_grid(rev).config().goal, (std::array<int, 2>{0, 2}));

  const auto pm = as_pm(make_environment("pointmass+reversed_task")).config().goal;
  EXPECT_EQ(pm, (std::array<double, 2>{-2.0, -1.0}));
}

TEST(Variants, InapplicableThrows) {
  EXPECT_THROW(make_environment("gridworld-5x5+lighter_gravity"), ConfigurationError);
  PointMassConfig c;
  c.gravity = {0.0, 0.0};
  EXPECT_THROW(make_variant(std::make_shared<PointMassEnv>(c), VariantSpec::parse("gravity_scale:2")),
               ConfigurationError);
  GridWorldConfig g;
  g.start = {1, 1};
  g.goal = {4, 4};  // mirror (-2,-2) leaves the grid
  EXPECT_THROW(make_variant(std::make_shared<GridWorldEnv>(g), VariantSpec::parse("reversed_task")),
               ConfigurationError);
  EXPECT_THROW(make_environment("nowhere"), ConfigurationError);
  EXPECT_THROW(make_environment("gridworld-1x5"), ConfigurationError);
}

TEST(Registry, GridSizesAndConfigObjects) {
  const EnvPtr env = make_environment("gridworld-7x5");
  const auto& g = as_grid(env);
  EXPECT_EQ(g.config().width, 7);
  EXPECT_EQ(g.config().height, 5);
  EXPECT_EQ(g.tabular()->num_states, 35);
  const EnvPtr from_cfg = make_environment_from_config(
      nlohmann::json{{"type", "gridworld"}, {"width", 4}, {"height", 3}, {"start", {0, 0}},
                     {"goal", {3, 2}}, {"horizon", 9}, {"variants", {"reversed_obs"}}});
  EXPECT_EQ(from_cfg->spec().horizon, 9);
  EXPECT_EQ(from_cfg->tabular()->num_states, 12);
  EXPECT_EQ(from_cfg->spec().obs_dim, 4u);
  EXPECT_THROW(make_environment_from_config(nlohmann::json{{"type", "cartpole"}}), ConfigurationError);
}

TEST(GroundTruth, GridworldExamples) {
  const EnvPtr env = make_environment("gridworld-5x5");
  EXPECT_EQ(env->gt_theta(), (std::vector<double>{0.0, 0.0, -1.0, -1.0}));
  EXPECT_DOUBLE_EQ(env->ground_truth_reward(as_grid(env).cell_observation(4, 4)), 0.0);
  EXPECT_DOUBLE_EQ(env->ground_truth_reward(std::vector<double>{0.5, 0.75, 0.5, 0.25}), -0.75);
}

TEST(GroundTruth, PointMassMatchesHandEvaluation) {
  const EnvPtr env = make_environment("pointmass");
  RngStream rng(11, 0);
  for (int i = 0; i < 50; ++i) {
    const Observation o = env->sample_observation(rng);
    const double hand = -1.0 * std::sqrt(o[4] * o[4] + o[5] * o[5]) - 0.1 * std::sqrt(o[2] * o[2] + o[3] * o[3]);
    EXPECT_NEAR(env->ground_truth_reward(o), hand, 1e-12);
  }
}

TEST(GroundTruth, ReversedObsKeepsRewardsPerState) {
  for (const char* id : {"gridworld-5x5", "pointmass"}) {
    const EnvPtr base = make_environment(id);
    const EnvPtr rev = make_environment(std::string(id) + "+reversed_obs");
    RngStream rng(3, 0);
    for (int i = 0; i < 20; ++i) {
      const Observation o = base->sample_observation(rng);
      EXPECT_DOUBLE_EQ(rev->ground_truth_reward(reverse_observation(o)), base->ground_truth_reward(o));
      EXPECT_EQ(rev->success(reverse_observation(o)), base->success(o));
    }
  }
}

// Property: reversed_obs applied twice gives the base observations for the
// same seed and action sequence.
TEST(Properties, ReversedTwiceIsIdentity) {
  const EnvPtr base = make_environment("gridworld-5x5");
  const EnvPtr twice = make_environment("gridworld-5x5+reversed_obs+reversed_obs");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream acts(seed, 9);
    RngStream r1(seed, 0);
    RngStream r2(seed, 0);
    EnvState a = base->reset(r1);
    EnvState b = twice->reset(r2);
    ASSERT_EQ(base->observe(a), twice->observe(b));
    for (int t = 0; t < 12; ++t) {
      const int action = static_cast<int>(acts.uniform_index(5));
      const auto ra = base->step(a, action, r1);
      const auto rb = twice->step(b, action, r2);
      ASSERT_EQ(ra.observation, rb.observation);
      ASSERT_EQ(ra.done, rb.done);
      if (ra.done) break;
      a = ra.next;
      b = rb.next;
    }
  }
}

// Property: a fixed policy behind the reversal adapter on the reversed_obs
// variant reproduces the base trajectories exactly.
TEST(Properties, ReversalEquivariance) {
  const EnvPtr base = make_environment("gridworld-5x5");
  const EnvPtr rev = make_environment("gridworld-5x5+reversed_obs");
  const ObsHashPolicy policy;
  const ReversalAdapter adapted(policy);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Trajectory tb = rollout(*base, policy, RngStream(seed, 0));
    const Trajectory tr = rollout(*rev, adapted, RngStream(seed, 0));
    ASSERT_EQ(tb.actions, tr.actions) << seed;
    ASSERT_EQ(tb.observations.size(), tr.observations.size());
    for (std::size_t i = 0; i < tb.observations.size(); ++i) {
      ASSERT_EQ(reverse_observation(tr.observations[i]), tb.observations[i]);
    }
  }
}
