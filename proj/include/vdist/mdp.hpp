#pragma once

#include "vdist/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace vdist {

/// Tolerance on transition-row and policy-row sums.
inline constexpr double kRowSumTolerance = 1e-12;

/// Residual bound enforced on every exact value solve.
inline constexpr double kSolveResidualTolerance = 1e-10;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/**
 * Finite MDP with an explicit absorbing terminal state.
 *
 * Transitions are stored per action: `transition[a](s, s2)` is the probability
 * of landing in `s2` after taking `a` in `s`. The terminal state has zero
 * reward and loops onto itself under every action.
 */
struct TabularMdp {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<Matrix> transition;
  Matrix reward;
  double discount = 0.0;
  std::size_t terminal_state = 0;

  /// All-zero MDP whose only populated rows are the absorbing terminal ones.
  static TabularMdp with_terminal(std::size_t num_states, std::size_t num_actions,
                                  std::size_t terminal_state, double discount) {
    detail::require(num_states >= 1 && num_actions >= 1, "MDP needs at least one state and action");
    detail::require(terminal_state < num_states, "terminal state out of range");
    TabularMdp mdp;
    mdp.num_states = num_states;
    mdp.num_actions = num_actions;
    mdp.discount = discount;
    mdp.terminal_state = terminal_state;
    mdp.transition.assign(num_actions, Matrix::Zero(num_states, num_states));
    mdp.reward = Matrix::Zero(num_states, num_actions);
    for (auto& p : mdp.transition) p(terminal_state, terminal_state) = 1.0;
    return mdp;
  }

  double prob(std::size_t s, std::size_t a, std::size_t next) const { return transition[a](s, next); }
  double& prob(std::size_t s, std::size_t a, std::size_t next) { return transition[a](s, next); }

  /// Throws ValidationError naming the first offending (s, a) pair.
  void validate() const {
    using std::to_string;
    detail::require(num_states >= 1 && num_actions >= 1, "MDP needs at least one state and action");
    detail::require(terminal_state < num_states, "terminal state out of range");
    detail::require(discount >= 0.0 && discount < 1.0, "discount must lie in [0, 1)");
    detail::require(transition.size() == num_actions, "transition tensor has wrong action count");
    detail::require(reward.rows() == static_cast<Eigen::Index>(num_states) &&
                        reward.cols() == static_cast<Eigen::Index>(num_actions),
                    "reward table has wrong shape");
    for (std::size_t a = 0; a < num_actions; ++a) {
      const Matrix& p = transition[a];
      detail::require(p.rows() == static_cast<Eigen::Index>(num_states) &&
                          p.cols() == static_cast<Eigen::Index>(num_states),
                      "transition slice " + to_string(a) + " has wrong shape");
      for (std::size_t s = 0; s < num_states; ++s) {
        const std::string where = "(s=" + to_string(s) + ", a=" + to_string(a) + ")";
        double sum = 0.0;
        for (std::size_t t = 0; t < num_states; ++t) {
          const double v = p(s, t);
          detail::require(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                          "transition probability outside [0, 1] at " + where);
          sum += v;
        }
        detail::require(std::abs(sum - 1.0) <= kRowSumTolerance,
                        "transition row " + where + " sums to " + std::to_string(sum) + ", not 1");
        detail::require(std::isfinite(reward(s, a)), "non-finite reward at " + where);
      }
      detail::require(reward(terminal_state, a) == 0.0, "terminal state must have zero reward");
      detail::require(p(terminal_state, terminal_state) == 1.0, "terminal state must be absorbing");
    }
  }

  /// Largest absolute reward.
  double max_abs_reward() const { return reward.cwiseAbs().maxCoeff(); }
};

/// Stochastic policy: `probs(s, a)` is the probability of choosing `a` in `s`.
struct Policy {
  Matrix probs;

  static Policy uniform(std::size_t num_states, std::size_t num_actions) {
    return {Matrix::Constant(num_states, num_actions, 1.0 / static_cast<double>(num_actions))};
  }

  static Policy deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions) {
    Policy pi{Matrix::Zero(static_cast<Eigen::Index>(actions.size()), num_actions)};
    for (std::size_t s = 0; s < actions.size(); ++s) {
      detail::require(actions[s] < num_actions, "policy action out of range");
      pi.probs(s, actions[s]) = 1.0;
    }
    return pi;
  }

  void validate() const {
    for (Eigen::Index s = 0; s < probs.rows(); ++s) {
      double sum = 0.0;
      for (Eigen::Index a = 0; a < probs.cols(); ++a) {
        const double v = probs(s, a);
        detail::require(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                        "policy probability outside [0, 1] at state " + std::to_string(s));
        sum += v;
      }
      detail::require(std::abs(sum - 1.0) <= kRowSumTolerance,
                      "policy row " + std::to_string(s) + " does not sum to 1");
    }
  }
};

/// Markov reward process induced by fixing a policy.
struct Mrp {
  Matrix transition;
  Vector reward;
  double discount = 0.0;
};

inline Mrp induce_mrp(const TabularMdp& mdp, const Policy& policy) {
  detail::require(policy.probs.rows() == static_cast<Eigen::Index>(mdp.num_states) &&
                      policy.probs.cols() == static_cast<Eigen::Index>(mdp.num_actions),
                  "policy shape does not match MDP");
  Mrp mrp;
  mrp.discount = mdp.discount;
  mrp.transition = Matrix::Zero(mdp.num_states, mdp.num_states);
  mrp.reward = Vector::Zero(mdp.num_states);
  for (std::size_t a = 0; a < mdp.num_actions; ++a) {
    const Vector weights = policy.probs.col(a);
    mrp.transition += weights.asDiagonal() * mdp.transition[a];
    mrp.reward += weights.cwiseProduct(mdp.reward.col(a));
  }
  return mrp;
}

/// Solves (I - gamma P) v = r directly and checks the residual.
inline Vector solve_value(const Mrp& mrp) {
  detail::require(mrp.discount >= 0.0 && mrp.discount < 1.0, "discount must lie in [0, 1)");
  const auto n = mrp.transition.rows();
  detail::require(mrp.transition.cols() == n && mrp.reward.size() == n, "MRP shape mismatch");
  const Matrix system = Matrix::Identity(n, n) - mrp.discount * mrp.transition;
  Vector v = system.partialPivLu().solve(mrp.reward);
  const double residual = (system * v - mrp.reward).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  if (!(residual <= kSolveResidualTolerance * scale)) {
    throw NumericalError("value solve residual " + std::to_string(residual) + " exceeds tolerance");
  }
  return v;
}

inline Vector solve_value(const TabularMdp& mdp, const Policy& policy) {
  return solve_value(induce_mrp(mdp, policy));
}

/// Layered copy of an MDP truncated after `horizon` steps.
struct UnrolledMdp {
  TabularMdp mdp;
  std::size_t horizon = 0;
  std::size_t original_states = 0;

  /// Index of original state `s` at time step `k`.
  std::size_t index(std::size_t s, std::size_t k) const { return s + k * original_states; }
};

/**
 * Unrolls `mdp` into `horizon` time layers. State (s, k) lives at index
 * `s + k * num_states`; layer k only feeds layer k + 1, and the last layer
 * feeds a fresh terminal state at index `num_states * horizon`.
 */
inline UnrolledMdp unroll(const TabularMdp& mdp, std::size_t horizon) {
  detail::require(horizon >= 1, "unroll horizon must be at least 1");
  mdp.validate();
  const std::size_t n = mdp.num_states;
  const std::size_t terminal = n * horizon;
  UnrolledMdp out{TabularMdp::with_terminal(terminal + 1, mdp.num_actions, terminal, mdp.discount),
                  horizon, n};
  for (std::size_t k = 0; k < horizon; ++k) {
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t from = out.index(s, k);
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        out.mdp.reward(from, a) = mdp.reward(s, a);
        if (k + 1 == horizon) {
          out.mdp.prob(from, a, terminal) = 1.0;
          continue;
        }
        for (std::size_t t = 0; t < n; ++t) {
          out.mdp.prob(from, a, out.index(t, k + 1)) = mdp.prob(s, a, t);
        }
      }
    }
  }
  return out;
}

/// Lifts a policy on the original states to every layer of an unrolled MDP.
inline Policy unroll_policy(const UnrolledMdp& unrolled, const Policy& policy) {
  Policy out{Matrix::Zero(unrolled.mdp.num_states, unrolled.mdp.num_actions)};
  for (std::size_t k = 0; k < unrolled.horizon; ++k) {
    for (std::size_t s = 0; s < unrolled.original_states; ++s) {
      out.probs.row(unrolled.index(s, k)) = policy.probs.row(s);
    }
  }
  out.probs(unrolled.mdp.terminal_state, 0) = 1.0;
  return out;
}

/// True when the support graph of `mdp` (ignoring the terminal self-loop) has no cycle.
inline bool is_acyclic(const TabularMdp& mdp) {
  const std::size_t n = mdp.num_states;
  std::vector<std::vector<std::size_t>> edges(n);
  std::vector<std::size_t> indegree(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    if (s == mdp.terminal_state) continue;
    for (std::size_t t = 0; t < n; ++t) {
      bool reachable = false;
      for (std::size_t a = 0; a < mdp.num_actions; ++a) reachable = reachable || mdp.prob(s, a, t) > 0.0;
      if (reachable) {
        edges[s].push_back(t);
        ++indegree[t];
      }
    }
  }
  std::vector<std::size_t> frontier;
  for (std::size_t s = 0; s < n; ++s)
    if (indegree[s] == 0) frontier.push_back(s);
  std::size_t visited = 0;
  while (!frontier.empty()) {
    const std::size_t s = frontier.back();
    frontier.pop_back();
    ++visited;
    for (std::size_t t : edges[s])
      if (--indegree[t] == 0) frontier.push_back(t);
  }
  return visited == n;
}

}  // namespace vdist
