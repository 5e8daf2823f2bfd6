#pragma once

#include "vdist/error.hpp"
#include "vdist/mdp.hpp"
#include "vdist/posterior.hpp"
#include "vdist/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace vdist {

// ---------------------------------------------------------------------------
// Toy MDP family: one action, transitions written in terms of X and beta.

/// Transition probability expressed symbolically in the scalar X and beta.
struct SymbolicProb {
  enum class Kind { constant, x, one_minus_x, beta, one_minus_beta };
  Kind kind = Kind::constant;
  double value = 0.0;  // only for Kind::constant

  double evaluate(double x, double beta) const {
    switch (kind) {
      case Kind::constant: return value;
      case Kind::x: return x;
      case Kind::one_minus_x: return 1.0 - x;
      case Kind::beta: return beta;
      case Kind::one_minus_beta: return 1.0 - beta;
    }
    return value;
  }

  /// Coefficients (c, cx, cbeta) of the affine form c + cx * X + cbeta * beta.
  std::array<double, 3> affine() const {
    switch (kind) {
      case Kind::constant: return {value, 0.0, 0.0};
      case Kind::x: return {0.0, 1.0, 0.0};
      case Kind::one_minus_x: return {1.0, -1.0, 0.0};
      case Kind::beta: return {0.0, 0.0, 1.0};
      case Kind::one_minus_beta: return {1.0, 0.0, -1.0};
    }
    return {value, 0.0, 0.0};
  }
};

struct ToyEdge {
  std::size_t next_state = 0;
  SymbolicProb prob;
};

struct ToyState {
  std::vector<ToyEdge> edges;  // empty for the terminal state
  double reward = 0.0;
};

/**
 * Declarative toy MDP. The default topology is
 *   s0 -X-> s1, s0 -(1-X)-> s2, s1 -> terminal (reward 1),
 *   s2 -beta-> s0, s2 -(1-beta)-> terminal,
 * so beta = 0 is acyclic and beta > 0 couples V(s0) with P(s2 | s0).
 */
struct ToyMdpSpec {
  double beta = 0.0;
  double discount = 0.9;
  std::vector<ToyState> states;
  std::size_t terminal_state = 3;
  std::vector<TruncatedGaussian> x_prior;

  static ToyMdpSpec standard(double beta, std::vector<TruncatedGaussian> x_prior, double discount = 0.9) {
    using K = SymbolicProb::Kind;
    ToyMdpSpec spec;
    spec.beta = beta;
    spec.discount = discount;
    spec.terminal_state = 3;
    spec.x_prior = std::move(x_prior);
    spec.states = {
        ToyState{{{1, {K::x, 0.0}}, {2, {K::one_minus_x, 0.0}}}, 0.0},
        ToyState{{{3, {K::constant, 1.0}}}, 1.0},
        ToyState{{{0, {K::beta, 0.0}}, {3, {K::one_minus_beta, 0.0}}}, 0.0},
        ToyState{{}, 0.0},
    };
    return spec;
  }

  void validate() const {
    detail::require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
    detail::require(discount >= 0.0 && discount < 1.0, "discount must lie in [0, 1)");
    detail::require(terminal_state < states.size(), "terminal state out of range");
    detail::require(states[terminal_state].edges.empty() && states[terminal_state].reward == 0.0,
                    "toy terminal state must have no edges and zero reward");
    for (std::size_t s = 0; s < states.size(); ++s) {
      if (s == terminal_state) continue;
      std::array<double, 3> sum{0.0, 0.0, 0.0};
      for (const auto& e : states[s].edges) {
        detail::require(e.next_state < states.size(), "toy edge target out of range");
        const auto c = e.prob.affine();
        for (std::size_t i = 0; i < 3; ++i) sum[i] += c[i];
      }
      detail::require(std::abs(sum[0] - 1.0) <= 1e-12 && std::abs(sum[1]) <= 1e-12 && std::abs(sum[2]) <= 1e-12,
                      "toy row for state " + std::to_string(s) + " does not sum to 1 for every X and beta");
    }
    ParametricScalarPosterior{x_prior, {}}.validate();
  }
};

/// Concrete MDP for X = x_value.
inline TabularMdp build_toy_mdp(const ToyMdpSpec& spec, double x_value) {
  spec.validate();
  detail::require(x_value >= 0.0 && x_value <= 1.0, "X must lie in [0, 1]");
  TabularMdp mdp = TabularMdp::with_terminal(spec.states.size(), 1, spec.terminal_state, spec.discount);
  for (std::size_t s = 0; s < spec.states.size(); ++s) {
    if (s == spec.terminal_state) continue;
    mdp.reward(s, 0) = spec.states[s].reward;
    for (const auto& e : spec.states[s].edges) mdp.prob(s, 0, e.next_state) += e.prob.evaluate(x_value, spec.beta);
  }
  mdp.validate();
  return mdp;
}

/// Posterior over toy MDPs: X ~ x_prior, bound wherever the topology mentions X.
inline ParametricScalarPosterior toy_posterior(const ToyMdpSpec& spec) {
  ParametricScalarPosterior p{spec.x_prior, {}};
  for (std::size_t s = 0; s < spec.states.size(); ++s) {
    for (const auto& e : spec.states[s].edges) {
      if (e.prob.kind == SymbolicProb::Kind::x) p.bindings.push_back({s, 0, e.next_state, ScalarBinding::Kind::x, 0.0});
      if (e.prob.kind == SymbolicProb::Kind::one_minus_x)
        p.bindings.push_back({s, 0, e.next_state, ScalarBinding::Kind::one_minus_x, 0.0});
    }
  }
  return p;
}

/// Named priors for X used by the toy experiments.
inline std::optional<std::vector<TruncatedGaussian>> named_x_prior(const std::string& name) {
  if (name == "single") return std::vector<TruncatedGaussian>{{0.4, 0.1, 1.0, 0.0, 1.0}};
  if (name == "gaussian") return std::vector<TruncatedGaussian>{{0.5, 0.1, 1.0, 0.0, 1.0}};
  if (name == "bimodal") return std::vector<TruncatedGaussian>{{0.3, 0.03, 0.5, 0.0, 1.0}, {0.6, 0.05, 0.5, 0.0, 1.0}};
  if (name == "heavy_tailed")
    return std::vector<TruncatedGaussian>{{0.3, 0.03, 0.5, 0.0, 1.0}, {0.5, 0.15, 0.5, 0.0, 1.0}};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// N-room gridworld.

enum class GridAction : std::size_t { up = 0, down = 1, left = 2, right = 3 };

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/**
 * Rooms are laid out left to right; neighbouring rooms share a wall with a
 * single open door cell. Moves succeed with `success_prob` and otherwise
 * leave the agent in place; blocked moves also stay put. Any action in the
 * goal cell pays `goal_reward` and ends in the terminal state.
 */
struct GridworldSpec {
  std::size_t num_rooms = 3;
  std::size_t room_size = 5;
  std::vector<std::size_t> door_rows;  // one per inner wall; empty means centred
  double success_prob = 0.95;
  GridCell start{0, 0};
  std::optional<GridCell> goal;  // defaults to the far corner
  double goal_reward = 1.0;
  double step_reward = 0.0;
  double discount = 0.99;

  std::size_t width() const { return num_rooms * room_size; }
  std::size_t height() const { return room_size; }
  GridCell goal_cell() const { return goal.value_or(GridCell{room_size - 1, width() - 1}); }
  std::size_t door_row(std::size_t wall) const { return door_rows.empty() ? room_size / 2 : door_rows.at(wall); }

  void validate() const {
    detail::require(num_rooms >= 1 && room_size >= 1, "gridworld needs at least one room");
    detail::require(door_rows.empty() || door_rows.size() + 1 == num_rooms, "need one door per inner wall");
    for (auto r : door_rows) detail::require(r < room_size, "door row outside the room");
    detail::require(success_prob > 0.0 && success_prob <= 1.0, "success probability must lie in (0, 1]");
    detail::require(discount >= 0.0 && discount < 1.0, "discount must lie in [0, 1)");
    detail::require(start.row < height() && start.col < width(), "start cell outside the grid");
    const GridCell g = goal_cell();
    detail::require(g.row < height() && g.col < width(), "goal cell outside the grid");
  }
};

struct Gridworld {
  GridworldSpec spec;
  TabularMdp mdp;
  std::size_t start_state = 0;
  std::size_t goal_state = 0;

  std::size_t state_of(GridCell c) const { return c.row * spec.width() + c.col; }
  GridCell cell_of(std::size_t s) const { return {s / spec.width(), s % spec.width()}; }

  /// Target of a successful move, or the cell itself when a wall blocks it.
  GridCell move(GridCell c, GridAction a) const {
    const std::size_t size = spec.room_size;
    switch (a) {
      case GridAction::up: return c.row == 0 ? c : GridCell{c.row - 1, c.col};
      case GridAction::down: return c.row + 1 == spec.height() ? c : GridCell{c.row + 1, c.col};
      case GridAction::left:
        if (c.col == 0) return c;
        if (c.col % size == 0 && c.row != spec.door_row(c.col / size - 1)) return c;
        return {c.row, c.col - 1};
      case GridAction::right:
        if (c.col + 1 == spec.width()) return c;
        if ((c.col + 1) % size == 0 && c.row != spec.door_row(c.col / size)) return c;
        return {c.row, c.col + 1};
    }
    return c;
  }

  std::size_t room_of(GridCell c) const { return c.col / spec.room_size; }

  /// Length of the shortest move sequence from start to goal, ignoring slips.
  std::optional<std::size_t> shortest_path_length() const {
    std::vector<std::optional<std::size_t>> dist(mdp.num_states - 1);
    std::deque<std::size_t> queue{start_state};
    dist[start_state] = 0;
    while (!queue.empty()) {
      const std::size_t s = queue.front();
      queue.pop_front();
      for (std::size_t a = 0; a < 4; ++a) {
        const std::size_t t = state_of(move(cell_of(s), static_cast<GridAction>(a)));
        if (!dist[t]) {
          dist[t] = *dist[s] + 1;
          queue.push_back(t);
        }
      }
    }
    return dist[goal_state];
  }
};

inline Gridworld build_gridworld(const GridworldSpec& spec) {
  spec.validate();
  const std::size_t cells = spec.width() * spec.height();
  Gridworld g{spec, TabularMdp::with_terminal(cells + 1, 4, cells, spec.discount), 0, 0};
  g.start_state = g.state_of(spec.start);
  g.goal_state = g.state_of(spec.goal_cell());
  for (std::size_t s = 0; s < cells; ++s) {
    for (std::size_t a = 0; a < 4; ++a) {
      if (s == g.goal_state) {
        g.mdp.prob(s, a, cells) = 1.0;
        g.mdp.reward(s, a) = spec.goal_reward;
        continue;
      }
      const std::size_t t = g.state_of(g.move(g.cell_of(s), static_cast<GridAction>(a)));
      g.mdp.prob(s, a, t) += spec.success_prob;
      g.mdp.prob(s, a, s) += 1.0 - spec.success_prob;
      g.mdp.reward(s, a) = spec.step_reward;
    }
  }
  g.mdp.validate();
  if (!g.shortest_path_length()) throw ValidationError("gridworld goal is unreachable from the start cell");
  return g;
}

/**
 * Structural support for a Dirichlet prior over gridworld dynamics: from a
 * cell, every action may land on the cell itself or on any cell some action
 * could reach. The goal and terminal rows are structurally known.
 */
inline TabularMdp gridworld_support(const Gridworld& g) {
  TabularMdp support = g.mdp;
  const std::size_t cells = g.mdp.num_states - 1;
  for (std::size_t s = 0; s < cells; ++s) {
    if (s == g.goal_state) continue;
    std::vector<std::size_t> reachable{s};
    for (std::size_t a = 0; a < 4; ++a) reachable.push_back(g.state_of(g.move(g.cell_of(s), static_cast<GridAction>(a))));
    std::sort(reachable.begin(), reachable.end());
    reachable.erase(std::unique(reachable.begin(), reachable.end()), reachable.end());
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t t = 0; t < g.mdp.num_states; ++t) support.prob(s, a, t) = 0.0;
      for (auto t : reachable) support.prob(s, a, t) = 1.0 / static_cast<double>(reachable.size());
    }
  }
  return support;
}

// ---------------------------------------------------------------------------
// Random layered MDPs.

/**
 * Layered MDP: states of layer k only reach layer k + 1 and the last layer
 * reaches the terminal state, which is the final index. Transition rows are
 * flat-Dirichlet draws over the next layer; rewards are uniform in
 * [reward_lo, reward_hi].
 */
inline TabularMdp random_acyclic_mdp(std::size_t num_layers, std::size_t states_per_layer, std::size_t num_actions,
                                     double reward_lo, double reward_hi, double discount, std::uint64_t seed) {
  detail::require(num_layers >= 1 && states_per_layer >= 1 && num_actions >= 1, "empty random MDP requested");
  detail::require(reward_lo <= reward_hi, "reward range is empty");
  const std::size_t n = num_layers * states_per_layer + 1;
  const std::size_t terminal = n - 1;
  TabularMdp mdp = TabularMdp::with_terminal(n, num_actions, terminal, discount);
  SplitMix64 rng(derive_seed(seed, {stream::kInstance}));
  std::uniform_real_distribution<double> reward(reward_lo, reward_hi);
  std::exponential_distribution<double> flat;
  for (std::size_t layer = 0; layer < num_layers; ++layer) {
    for (std::size_t i = 0; i < states_per_layer; ++i) {
      const std::size_t s = layer * states_per_layer + i;
      for (std::size_t a = 0; a < num_actions; ++a) {
        mdp.reward(s, a) = reward(rng);
        if (layer + 1 == num_layers) {
          mdp.prob(s, a, terminal) = 1.0;
          continue;
        }
        std::vector<double> w(states_per_layer);
        double total = 0.0;
        for (auto& x : w) total += (x = flat(rng));
        for (std::size_t j = 0; j < states_per_layer; ++j)
          mdp.prob(s, a, (layer + 1) * states_per_layer + j) = w[j] / total;
      }
    }
  }
  mdp.validate();
  return mdp;
}

/// Dense random MDP with cycles plus an absorbing terminal (last index).
inline TabularMdp random_cyclic_mdp(std::size_t num_states, std::size_t num_actions, double terminal_prob,
                                    double reward_lo, double reward_hi, double discount, std::uint64_t seed) {
  detail::require(num_states >= 2 && num_actions >= 1, "random cyclic MDP needs two states");
  detail::require(terminal_prob >= 0.0 && terminal_prob < 1.0, "terminal probability must lie in [0, 1)");
  const std::size_t terminal = num_states - 1;
  TabularMdp mdp = TabularMdp::with_terminal(num_states, num_actions, terminal, discount);
  SplitMix64 rng(derive_seed(seed, {stream::kInstance}));
  std::uniform_real_distribution<double> reward(reward_lo, reward_hi);
  std::exponential_distribution<double> flat;
  for (std::size_t s = 0; s < terminal; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      mdp.reward(s, a) = reward(rng);
      std::vector<double> w(terminal);
      double total = 0.0;
      for (auto& x : w) total += (x = flat(rng));
      for (std::size_t t = 0; t < terminal; ++t) mdp.prob(s, a, t) = (1.0 - terminal_prob) * w[t] / total;
      mdp.prob(s, a, terminal) = terminal_prob;
    }
  }
  // Re-close rows after the scaling round-off on their largest entry.
  for (std::size_t a = 0; a < num_actions; ++a) {
    for (std::size_t s = 0; s < terminal; ++s) {
      Eigen::Index largest = 0;
      const double sum = mdp.transition[a].row(s).sum();
      mdp.transition[a].row(s).maxCoeff(&largest);
      mdp.prob(s, a, static_cast<std::size_t>(largest)) += 1.0 - sum;
    }
  }
  mdp.validate();
  return mdp;
}

/// Stochastic policy with flat-Dirichlet rows.
inline Policy random_policy(std::size_t num_states, std::size_t num_actions, SplitMix64& rng) {
  Policy p{Matrix(num_states, num_actions)};
  std::exponential_distribution<double> e;
  for (std::size_t s = 0; s < num_states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < num_actions; ++a) total += (p.probs(s, a) = e(rng));
    p.probs.row(static_cast<Eigen::Index>(s)) /= total;
  }
  return p;
}

}  // namespace vdist
