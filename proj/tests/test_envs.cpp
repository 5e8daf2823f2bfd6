#include "support/oracles.hpp"
#include "vdist/agent.hpp"
#include "vdist/envs.hpp"
#include "vdist/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace vdist {
namespace {

TEST(Envs, NamedPriors) {
  EXPECT_FALSE(named_x_prior("nope").has_value());
  for (const char* name : {"single", "gaussian", "bimodal", "heavy_tailed"}) {
    const auto p = named_x_prior(name);
    ASSERT_TRUE(p.has_value()) << name;
    EXPECT_NO_THROW(ToyMdpSpec::standard(0.5, *p).validate());
  }
  const auto bimodal = *named_x_prior("bimodal");
  ASSERT_EQ(bimodal.size(), 2u);
  EXPECT_EQ(bimodal[1].mean, 0.6);
  EXPECT_EQ(bimodal[1].std, 0.05);
}

TEST(Envs, ToyBetaZeroIsAcyclic) {
  const ToyMdpSpec spec = ToyMdpSpec::standard(0.0, *named_x_prior("gaussian"));
  for (double x : {0.0, 0.3, 1.0}) {
    const TabularMdp m = build_toy_mdp(spec, x);
    EXPECT_TRUE(is_acyclic(m));
    EXPECT_FALSE(testing::has_cycle(m));
  }
  EXPECT_TRUE(testing::has_cycle(build_toy_mdp(ToyMdpSpec::standard(0.5, *named_x_prior("gaussian")), 0.3)));
}

TEST(Envs, ToyExtremeBranches) {
  for (double beta : {0.0, 0.5, 1.0}) {
    const ToyMdpSpec spec = ToyMdpSpec::standard(beta, *named_x_prior("single"), 0.9);
    const Vector v0 = solve_value(build_toy_mdp(spec, 0.0), Policy::uniform(4, 1));
    const Vector v1 = solve_value(build_toy_mdp(spec, 1.0), Policy::uniform(4, 1));
    // X = 0 never reaches the rewarding state; X = 1 collects reward 1 after one step.
    EXPECT_NEAR(v0(0), 0.0, 1e-15);
    EXPECT_NEAR(v1(0), 0.9, 1e-15);
    EXPECT_NEAR(v1(1), 1.0, 1e-15);
    EXPECT_NEAR(v1(2), 0.9 * beta * 0.9, 1e-15);
    // Interior X against the closed form gamma X / (1 - gamma^2 beta (1 - X)).
    const Vector v = solve_value(build_toy_mdp(spec, 0.37), Policy::uniform(4, 1));
    EXPECT_NEAR(v(0), 0.9 * 0.37 / (1.0 - 0.81 * beta * 0.63), 1e-12);
  }
}

TEST(Envs, ToyRowsSumToOneSymbolically) {
  const ToyMdpSpec spec = ToyMdpSpec::standard(0.0, *named_x_prior("single"));
  SplitMix64 rng(1);
  for (int k = 0; k < 10; ++k) {
    ToyMdpSpec s = spec;
    s.beta = rng.uniform();
    const TabularMdp m = build_toy_mdp(s, rng.uniform());
    for (std::size_t st = 0; st < 4; ++st) EXPECT_NEAR(m.transition[0].row(st).sum(), 1.0, 1e-12);
  }
}

TEST(Envs, ToyRejectsBrokenTopologyAndRange) {
  ToyMdpSpec spec = ToyMdpSpec::standard(0.2, *named_x_prior("single"));
  EXPECT_THROW(build_toy_mdp(spec, 1.5), ValidationError);
  spec.states[2].edges.pop_back();
  EXPECT_THROW(build_toy_mdp(spec, 0.5), ValidationError);
  spec = ToyMdpSpec::standard(1.2, *named_x_prior("single"));
  EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(Envs, ToyPosteriorBindsBothBranches) {
  const ToyMdpSpec spec = ToyMdpSpec::standard(0.3, *named_x_prior("single"));
  const ParametricScalarPosterior p = toy_posterior(spec);
  ASSERT_EQ(p.bindings.size(), 2u);
  const TabularMdp m = p.bind(build_toy_mdp(spec, 0.5), 0.25);
  EXPECT_EQ(m.prob(0, 0, 1), 0.25);
  EXPECT_EQ(m.prob(0, 0, 2), 0.75);
  EXPECT_EQ(m.prob(2, 0, 0), 0.3);
}

TEST(Envs, BetaControlsTransitionValueCovariance) {
  // Covariance between the sampled P(s2 | s0) and the successor value V(s2).
  std::vector<double> covariances;
  for (double beta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const ToyMdpSpec spec = ToyMdpSpec::standard(beta, *named_x_prior("single"));
    const ParametricScalarPosterior post = toy_posterior(spec);
    const std::size_t n = 20000;
    const ValueSampleSet s = sample_value_distribution(post, build_toy_mdp(spec, 0.5), Policy::uniform(4, 1), n, 2);
    double mp = 0.0;
    std::vector<double> p(n);
    for (std::size_t k = 0; k < n; ++k) mp += (p[k] = 1.0 - post.sample(oracle_sample_seed(2, k)));
    mp /= static_cast<double>(n);
    const double mv = s.mean(2);
    double cov = 0.0;
    for (std::size_t k = 0; k < n; ++k) cov += (p[k] - mp) * (s.values(2, static_cast<Eigen::Index>(k)) - mv);
    covariances.push_back(std::abs(cov / static_cast<double>(n - 1)));
  }
  EXPECT_EQ(covariances[0], 0.0);
  for (std::size_t i = 1; i < covariances.size(); ++i) EXPECT_GT(covariances[i], covariances[i - 1]);
}

TEST(Envs, GridworldHasSeventySixStates) {
  const Gridworld g = build_gridworld({});
  EXPECT_EQ(g.mdp.num_states, 76u);
  EXPECT_EQ(g.mdp.terminal_state, 75u);
  EXPECT_EQ(g.mdp.num_actions, 4u);
  EXPECT_EQ(g.start_state, 0u);
  EXPECT_EQ(g.cell_of(g.goal_state), (GridCell{4, 14}));
  EXPECT_NO_THROW(g.mdp.validate());
}

TEST(Envs, GridworldDeterministicShortestPath) {
  GridworldSpec spec;
  spec.success_prob = 1.0;
  const Gridworld g = build_gridworld(spec);
  // Start (0,0) to goal (4,14) through doors on row 2: 4 rows down and 14 columns right.
  ASSERT_TRUE(g.shortest_path_length().has_value());
  EXPECT_EQ(*g.shortest_path_length(), 18u);
  const PolicyIterationResult opt = policy_iteration(g.mdp);
  EXPECT_NEAR(opt.value(static_cast<Eigen::Index>(g.start_state)), std::pow(0.99, 18) * 1.0, 1e-12);

  spec.step_reward = -0.1;
  const Gridworld costly = build_gridworld(spec);
  const PolicyIterationResult opt2 = policy_iteration(costly.mdp);
  const double steps = -0.1 * (1.0 - std::pow(0.99, 18)) / (1.0 - 0.99);
  EXPECT_NEAR(opt2.value(static_cast<Eigen::Index>(costly.start_state)), std::pow(0.99, 18) + steps, 1e-12);
}

TEST(Envs, GridworldGoalAndTerminalValues) {
  const Gridworld g = build_gridworld({});
  SplitMix64 rng(3);
  for (int k = 0; k < 5; ++k) {
    Policy pi{Matrix(76, 4)};
    for (Eigen::Index s = 0; s < 76; ++s) {
      for (Eigen::Index a = 0; a < 4; ++a) pi.probs(s, a) = 0.1 + rng.uniform();
      pi.probs.row(s) /= pi.probs.row(s).sum();
    }
    const Vector v = solve_value(g.mdp, pi);
    EXPECT_EQ(v(75), 0.0);
    EXPECT_NEAR(v(static_cast<Eigen::Index>(g.goal_state)), 1.0, 1e-12);
  }
}

TEST(Envs, GridworldDoorsAreTheOnlyPassages) {
  const Gridworld g = build_gridworld({});
  for (std::size_t s = 0; s < 75; ++s) {
    if (s == g.goal_state) continue;
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t t = 0; t < 75; ++t) {
        if (g.mdp.prob(s, a, t) == 0.0) continue;
        const GridCell from = g.cell_of(s);
        const GridCell to = g.cell_of(t);
        EXPECT_LE(std::abs(static_cast<long>(from.row) - static_cast<long>(to.row)) +
                      std::abs(static_cast<long>(from.col) - static_cast<long>(to.col)),
                  1);
        if (g.room_of(from) != g.room_of(to)) {
          EXPECT_EQ(from.row, 2u);
          EXPECT_EQ(to.row, 2u);
        }
      }
    }
  }
}

TEST(Envs, GridworldSlipsStayInPlace) {
  const Gridworld g = build_gridworld({});
  const std::size_t s = g.state_of({1, 1});
  EXPECT_DOUBLE_EQ(g.mdp.prob(s, static_cast<std::size_t>(GridAction::up), g.state_of({0, 1})), 0.95);
  EXPECT_NEAR(g.mdp.prob(s, static_cast<std::size_t>(GridAction::up), s), 0.05, 1e-15);
  // Corner: moving up is blocked, so everything stays.
  EXPECT_DOUBLE_EQ(g.mdp.prob(0, static_cast<std::size_t>(GridAction::up), 0), 1.0);
}

TEST(Envs, GridworldValidatesDoorsAndGoal) {
  GridworldSpec spec;
  spec.num_rooms = 2;
  spec.room_size = 1;
  spec.door_rows = {0};
  EXPECT_NO_THROW(build_gridworld(spec));
  spec.num_rooms = 3;
  spec.room_size = 3;
  spec.door_rows = {1, 1};
  spec.start = {0, 0};
  spec.goal = GridCell{2, 8};
  EXPECT_NO_THROW(build_gridworld(spec));
  spec.door_rows = {5, 1};
  EXPECT_THROW(build_gridworld(spec), ValidationError);
  spec.door_rows = {1};
  EXPECT_THROW(build_gridworld(spec), ValidationError);
  spec.door_rows = {1, 1};
  spec.goal = GridCell{3, 8};
  EXPECT_THROW(build_gridworld(spec), ValidationError);
}

TEST(Envs, GridworldSupportCoversTrueDynamics) {
  const Gridworld g = build_gridworld({});
  const TabularMdp support = gridworld_support(g);
  EXPECT_NO_THROW(support.validate());
  for (std::size_t s = 0; s < 76; ++s)
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t t = 0; t < 76; ++t)
        if (g.mdp.prob(s, a, t) > 0.0) {
          EXPECT_GT(support.prob(s, a, t), 0.0);
        }
}

TEST(Envs, RandomAcyclicSingleState) {
  const TabularMdp m = random_acyclic_mdp(1, 1, 1, 0.2, 0.7, 0.9, 4);
  ASSERT_EQ(m.num_states, 2u);
  const Vector v = solve_value(m, Policy::uniform(2, 1));
  EXPECT_EQ(v(0), m.reward(0, 0));
  EXPECT_GE(v(0), 0.2);
  EXPECT_LE(v(0), 0.7);
}

TEST(Envs, RandomAcyclicIsLayeredAndDeterministic) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TabularMdp m = random_acyclic_mdp(4, 3, 2, -1.0, 1.0, 0.9, seed);
    EXPECT_TRUE(is_acyclic(m));
    EXPECT_FALSE(testing::has_cycle(m));
    EXPECT_EQ(m.prob(m.terminal_state, 0, m.terminal_state), 1.0);
    for (std::size_t s = 0; s + 1 < m.num_states; ++s)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t t = 0; t < m.num_states; ++t)
          if (m.prob(s, a, t) > 0.0 && t != m.terminal_state) {
            EXPECT_EQ(t / 3, s / 3 + 1);
          }
    const TabularMdp again = random_acyclic_mdp(4, 3, 2, -1.0, 1.0, 0.9, seed);
    EXPECT_EQ(m.transition[1], again.transition[1]);
    EXPECT_EQ(m.reward, again.reward);
  }
}

TEST(Envs, RandomAcyclicUnrollsWithoutLoss) {
  const TabularMdp m = random_acyclic_mdp(4, 2, 1, -1.0, 1.0, 0.9, 5);
  const Policy pi = Policy::uniform(m.num_states, 1);
  const UnrolledMdp u = unroll(m, 4);
  const Vector v = solve_value(m, pi);
  const Vector vu = solve_value(u.mdp, unroll_policy(u, pi));
  for (std::size_t s = 0; s < m.num_states; ++s) EXPECT_NEAR(vu(u.index(s, 0)), v(s), 1e-12);
}

}  // namespace
}  // namespace vdist
