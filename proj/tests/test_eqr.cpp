#include "support/oracles.hpp"
#include "vdist/envs.hpp"
#include "vdist/eqr.hpp"
#include "vdist/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace vdist {
namespace {

// s0 -> s1 -> terminal s2, deterministic.
TabularMdp chain(double r0, double r1, double gamma) {
  TabularMdp m = TabularMdp::with_terminal(3, 1, 2, gamma);
  m.prob(0, 0, 1) = 1.0;
  m.prob(1, 0, 2) = 1.0;
  m.reward(0, 0) = r0;
  m.reward(1, 0) = r1;
  return m;
}

QuantileValueFunction random_quantiles(std::size_t n, std::size_t m, std::size_t terminal, SplitMix64& rng) {
  RowMatrix q = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t s = 0; s < n; ++s) {
    if (s == terminal) continue;
    for (std::size_t i = 0; i < m; ++i) q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = rng.uniform() * 4.0 - 2.0;
    std::sort(q.data() + s * m, q.data() + (s + 1) * m);
  }
  return QuantileValueFunction(std::move(q));
}

TEST(Eqr, ConfigValidation) {
  EqrConfig c;
  EXPECT_NO_THROW(c.validate());
  c.num_quantiles = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = EqrConfig{};
  c.step_size = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = EqrConfig{};
  c.eval_every = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Eqr, StepSchedules) {
  EqrConfig c;
  c.step_size = 0.8;
  c.schedule = StepSchedule::constant;
  EXPECT_EQ(c.step_size_at(100), 0.8);
  c.schedule = StepSchedule::inverse_t;
  EXPECT_DOUBLE_EQ(c.step_size_at(4), 0.2);
  c.schedule = StepSchedule::inverse_sqrt_t;
  EXPECT_DOUBLE_EQ(c.step_size_at(4), 0.4);
  EXPECT_DOUBLE_EQ(c.step_size_at(1), 0.8);
}

TEST(Eqr, MedianStepWithTargetBelow) {
  // One state going to the terminal with reward 0; q = 1 sits above the only target 0.
  TabularMdp m = TabularMdp::with_terminal(2, 1, 1, 0.9);
  m.prob(0, 0, 1) = 1.0;
  RowMatrix q(2, 1);
  q << 1.0, 0.0;
  const QuantileValueFunction out = eqr_update(QuantileValueFunction(q), m, Policy::uniform(2, 1), 0.3);
  EXPECT_DOUBLE_EQ(out.row(0)[0], 1.0 - 0.5 * 0.3);
  EXPECT_EQ(out.row(1)[0], 0.0);
}

TEST(Eqr, TwoQuantileHandExpansion) {
  // s0 -> s1 with probability 1, s1 -> terminal. Rewards 1 and 2, gamma 0.5.
  const TabularMdp m = chain(1.0, 2.0, 0.5);
  RowMatrix q(3, 2);
  q << 1.5, 2.6, 1.8, 2.1, 0.0, 0.0;
  const double alpha = 0.2;
  const QuantileValueFunction out = eqr_update(QuantileValueFunction(q), m, Policy::uniform(3, 1), alpha);
  // s0 targets: 1 + 0.5 * (1.8, 2.1) = (1.9, 2.05). q = 1.5 has none below, 2.6 has both below.
  EXPECT_DOUBLE_EQ(out.row(0)[0], 1.5 + alpha * (0.25 - 0.0));
  EXPECT_DOUBLE_EQ(out.row(0)[1], 2.6 + alpha * (0.75 - 1.0));
  // s1 targets: (2, 2). q = 1.8 has none below, 2.1 has both below.
  EXPECT_DOUBLE_EQ(out.row(1)[0], 1.8 + alpha * 0.25);
  EXPECT_DOUBLE_EQ(out.row(1)[1], 2.1 - alpha * 0.25);
}

TEST(Eqr, TargetsEqualToAtomDoNotCountAsBelow) {
  TabularMdp m = TabularMdp::with_terminal(2, 1, 1, 0.9);
  m.prob(0, 0, 1) = 1.0;
  m.reward(0, 0) = 1.0;
  RowMatrix q(2, 1);
  q << 1.0, 0.0;
  const QuantileValueFunction out = eqr_update(QuantileValueFunction(q), m, Policy::uniform(2, 1), 0.1);
  EXPECT_DOUBLE_EQ(out.row(0)[0], 1.0 + 0.1 * 0.5);
}

TEST(Eqr, UpdateAtBootstrapConsistentQuantilesIsSmall) {
  // q(s0) equals its own comonotone targets, so atom i sees exactly i targets below it.
  const TabularMdp m = chain(0.5, 0.0, 0.9);
  const std::size_t k = 6;
  RowMatrix q = RowMatrix::Zero(3, k);
  for (std::size_t i = 0; i < k; ++i) {
    q(1, static_cast<Eigen::Index>(i)) = 0.3 * static_cast<double>(i);
    q(0, static_cast<Eigen::Index>(i)) = 0.5 + 0.9 * q(1, static_cast<Eigen::Index>(i));
  }
  const double alpha = 0.4;
  const QuantileValueFunction out = eqr_update(QuantileValueFunction(q), m, Policy::uniform(3, 1), alpha);
  for (std::size_t i = 0; i < k; ++i) {
    const double change = out.row(0)[i] - q(0, static_cast<Eigen::Index>(i));
    EXPECT_LE(std::abs(change), alpha / static_cast<double>(k) + 1e-15);
    EXPECT_NEAR(change, alpha / (2.0 * static_cast<double>(k)), 1e-12);
  }
}

TEST(Eqr, OscillatesAroundDeterministicFixedPoint) {
  TabularMdp m = TabularMdp::with_terminal(2, 1, 1, 0.9);
  m.prob(0, 0, 1) = 1.0;
  m.reward(0, 0) = 1.0;
  const double alpha = 0.05;
  RowMatrix q(2, 5);
  q.row(0).setConstant(1.0);
  q.row(1).setZero();
  QuantileValueFunction cur(q);
  for (int k = 0; k < 2000; ++k) {
    cur = eqr_update(cur, m, Policy::uniform(2, 1), alpha);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(cur.row(0)[i], 1.0 - alpha);
      EXPECT_LE(cur.row(0)[i], 1.0 + alpha);
    }
  }
}

TEST(Eqr, PerStepChangeBoundedByAlpha) {
  SplitMix64 rng(1);
  const TabularMdp base = random_cyclic_mdp(6, 2, 0.1, -1.0, 1.0, 0.9, 2);
  const DirichletPosterior post = DirichletPosterior::from_support(base, 1.0);
  const Policy pi = Policy::uniform(6, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const QuantileValueFunction q = random_quantiles(6, 8, 5, rng);
    const double alpha = rng.uniform();
    const QuantileValueFunction out = eqr_update(q, sample_mdp(post, base, static_cast<std::uint64_t>(trial)), pi, alpha);
    EXPECT_LE((out.matrix() - q.matrix()).cwiseAbs().maxCoeff(), alpha + 1e-15);
    EXPECT_TRUE(out.terminal_is_zero(5));
  }
}

TEST(Eqr, UpdateIsNegativeSubgradientOfQuantileLoss) {
  SplitMix64 rng(3);
  const TabularMdp base = random_cyclic_mdp(5, 1, 0.2, -1.0, 1.0, 0.9, 4);
  const Policy pi = Policy::uniform(5, 1);
  const Mrp mrp = induce_mrp(base, pi);
  const std::size_t m = 7;
  const double alpha = 1e-3;
  for (int trial = 0; trial < 100; ++trial) {
    const QuantileValueFunction q = random_quantiles(5, m, 4, rng);
    RowMatrix targets = mrp.discount * (mrp.transition * q.matrix());
    targets.colwise() += mrp.reward;
    const QuantileValueFunction out = eqr_update(q, base, pi, alpha);
    for (std::size_t s = 0; s < 4; ++s) {
      const auto* row = targets.data() + s * m;
      const std::vector<double> t(row, row + m);
      std::vector<double> expected(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double v = q.row(s)[i];
        const double tau = tau_hat(i, m);
        double nearest = std::numeric_limits<double>::infinity();
        for (double x : t) nearest = std::min(nearest, std::abs(x - v));
        const double h = 1e-9;
        const double grad = (qr_loss(tau, v + h, t) - qr_loss(tau, v - h, t)) / (2.0 * h);
        expected[i] = v - alpha * grad;
        if (nearest < 1e-6) {
          // On the kink the step uses the right derivative (ties count as not below).
          expected[i] = v - alpha * (qr_loss(tau, v + h, t) - qr_loss(tau, v, t)) / h;
        }
      }
      std::sort(expected.begin(), expected.end());
      for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(out.row(s)[i], expected[i], 1e-9);
    }
  }
}

TEST(Eqr, PointMassPosteriorStaysInValueBounds) {
  const TabularMdp mdp = random_cyclic_mdp(5, 1, 0.1, -1.0, 1.0, 0.8, 5);
  EqrConfig c;
  c.num_quantiles = 5;
  c.step_size = 0.5;
  c.schedule = StepSchedule::constant;
  c.max_steps = 2000;
  c.eval_every = 1;
  const auto [q, trace] = run_eqr(PointMassPosterior{mdp}, mdp, Policy::uniform(5, 1), c);
  const double lo = -1.0 / (1.0 - 0.8) - c.step_size;
  const double hi = 1.0 / (1.0 - 0.8) + c.step_size;
  for (const auto& snap : trace.snapshots) {
    EXPECT_GE(snap.value.matrix().minCoeff(), lo);
    EXPECT_LE(snap.value.matrix().maxCoeff(), hi);
  }
}

TEST(Eqr, PointMassPosteriorConverges) {
  const TabularMdp mdp = random_acyclic_mdp(3, 2, 1, 0.0, 0.5, 0.9, 6);
  const Policy pi = Policy::uniform(mdp.num_states, 1);
  EqrConfig c;
  c.num_quantiles = 10;
  c.step_size = 0.5;
  c.max_steps = 10000;
  const auto [q, trace] = run_eqr(PointMassPosterior{mdp}, mdp, pi, c);
  const Vector v = solve_value(mdp, pi);
  double w = 0.0;
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    const AtomDistribution truth = AtomDistribution::point_mass(v(static_cast<Eigen::Index>(s)));
    w = std::max(w, wasserstein(1.0, q.distribution(s).to_atoms(), truth));
  }
  EXPECT_LE(w, 5.0 * c.step_size_at(c.max_steps) / (1.0 - 0.9));
}

TEST(Eqr, ToyPosteriorOscillatesAroundOracle) {
  const ToyMdpSpec spec = ToyMdpSpec::standard(0.0, *named_x_prior("single"));
  const MdpPosterior post = toy_posterior(spec);
  const TabularMdp base = build_toy_mdp(spec, 0.5);
  const Policy pi = Policy::uniform(4, 1);
  const QuantileValueFunction oracle = oracle_quantiles(sample_value_distribution(post, base, pi, 100000, 1, "test"), 10);
  EqrConfig c;
  c.step_size = 0.5;
  c.max_steps = 10000;
  c.eval_every = 1;
  c.seed = 3;
  const auto [q, trace] = run_eqr(post, base, pi, c, oracle);
  EXPECT_LE(wasserstein(1.0, q.row(0), oracle.row(0)), 0.05 * 0.9);
  ASSERT_EQ(trace.snapshots.size(), 10000u);
  const auto& last = trace.snapshots.back();
  ASSERT_TRUE(last.error.has_value());
  EXPECT_NEAR((*last.error)(0, 3), oracle.row(0)[3] - q.row(0)[3], 1e-15);
}

TEST(Eqr, TraceStepsIncreaseAndEndAtMaxSteps) {
  const TabularMdp mdp = chain(1.0, 1.0, 0.9);
  EqrConfig c;
  c.max_steps = 250;
  c.eval_every = 100;
  const auto [q, trace] = run_eqr(PointMassPosterior{mdp}, mdp, Policy::uniform(3, 1), c);
  ASSERT_EQ(trace.snapshots.size(), 3u);
  EXPECT_EQ(trace.snapshots[0].step, 100u);
  EXPECT_EQ(trace.snapshots[1].step, 200u);
  EXPECT_EQ(trace.snapshots[2].step, 250u);
  EXPECT_FALSE(trace.snapshots[0].error.has_value());
  EXPECT_EQ(trace.snapshots[2].value.matrix(), q.matrix());
}

TEST(Eqr, RunsAreDeterministic) {
  const TabularMdp base = random_cyclic_mdp(5, 2, 0.1, -1.0, 1.0, 0.9, 7);
  const MdpPosterior post = DirichletPosterior::from_support(base, 1.0);
  EqrConfig c;
  c.max_steps = 500;
  c.eval_every = 50;
  c.seed = 11;
  c.random_init = true;
  const auto a = run_eqr(post, base, Policy::uniform(5, 2), c);
  const auto b = run_eqr(post, base, Policy::uniform(5, 2), c);
  ASSERT_EQ(a.second.snapshots.size(), b.second.snapshots.size());
  for (std::size_t k = 0; k < a.second.snapshots.size(); ++k)
    EXPECT_EQ(a.second.snapshots[k].value.matrix(), b.second.snapshots[k].value.matrix());
  c.seed = 12;
  const auto d = run_eqr(post, base, Policy::uniform(5, 2), c);
  EXPECT_NE(a.first.matrix(), d.first.matrix());
}

TEST(Eqr, ReferenceShapeIsChecked) {
  const TabularMdp mdp = chain(1.0, 1.0, 0.9);
  EqrConfig c;
  c.max_steps = 10;
  EXPECT_THROW(run_eqr(PointMassPosterior{mdp}, mdp, Policy::uniform(3, 1), c, QuantileValueFunction(3, 4)),
               ValidationError);
}

}  // namespace
}  // namespace vdist
