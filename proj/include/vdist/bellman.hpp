#pragma once

#include "vdist/error.hpp"
#include "vdist/mdp.hpp"
#include "vdist/posterior.hpp"
#include "vdist/quantdist.hpp"
#include "vdist/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace vdist {

/// Finite weighted set of posterior models standing in for the posterior mixture.
struct ModelEnsemble {
  std::vector<TabularMdp> models;
  std::vector<double> weights;

  static ModelEnsemble uniform(std::vector<TabularMdp> models) {
    const double w = 1.0 / static_cast<double>(models.size());
    ModelEnsemble e{std::move(models), {}};
    e.weights.assign(e.models.size(), w);
    return e;
  }

  /// K equally weighted draws from `posterior`.
  static ModelEnsemble sample(const MdpPosterior& posterior, const TabularMdp& base, std::size_t k,
                              std::uint64_t seed) {
    detail::require(k >= 1, "ensemble needs at least one model");
    std::vector<TabularMdp> models;
    models.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      models.push_back(sample_mdp(posterior, base, derive_seed(seed, {stream::kEnsemble, i})));
    }
    return uniform(std::move(models));
  }

  std::size_t size() const { return models.size(); }
  std::size_t num_states() const { return models.front().num_states; }
  std::size_t terminal_state() const { return models.front().terminal_state; }
  double discount() const { return models.front().discount; }

  void validate() const {
    detail::require(!models.empty(), "ensemble needs at least one model");
    detail::require(weights.size() == models.size(), "one weight per model required");
    double total = 0.0;
    for (std::size_t k = 0; k < models.size(); ++k) {
      models[k].validate();
      detail::require(weights[k] > 0.0, "ensemble weights must be positive");
      detail::require(models[k].num_states == models[0].num_states && models[k].num_actions == models[0].num_actions &&
                          models[k].terminal_state == models[0].terminal_state &&
                          models[k].discount == models[0].discount,
                      "ensemble models must share shape, terminal state and discount");
      total += weights[k];
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "ensemble weights must sum to 1");
  }

  /// Policy-induced reward processes, one per model.
  std::vector<Mrp> induce(const Policy& policy) const {
    std::vector<Mrp> out;
    out.reserve(models.size());
    for (const auto& m : models) out.push_back(induce_mrp(m, policy));
    return out;
  }

  /// The MRP obtained by averaging transitions and rewards over the ensemble.
  Mrp mean_mrp(const Policy& policy) const {
    Mrp mean{Matrix::Zero(num_states(), num_states()), Vector::Zero(num_states()), discount()};
    for (std::size_t k = 0; k < models.size(); ++k) {
      const Mrp mrp = induce_mrp(models[k], policy);
      mean.transition += weights[k] * mrp.transition;
      mean.reward += weights[k] * mrp.reward;
    }
    return mean;
  }
};

/// Couplings between next-state distributions. Only the comonotone one exists:
/// every next state is read at the same quantile level.
enum class Coupling { comonotone };

struct OperatorConfig {
  Coupling coupling = Coupling::comonotone;
  std::size_t max_atoms = 1u << 20;
};

namespace detail {

/**
 * Backup of one state under one model with comonotone coupling:
 * on every interval of the merged CDF breakpoints of the successors, each
 * successor contributes its atom at that level.
 */
inline void comonotone_backup(const AtomValueFunction& mu, const Matrix& transition, std::size_t s, double reward,
                              double discount, double model_weight, std::vector<Atom>& out) {
  struct Cursor {
    std::size_t state;
    double prob;
    std::size_t index;
    double cum;
  };
  std::vector<Cursor> cursors;
  for (Eigen::Index t = 0; t < transition.cols(); ++t) {
    const double p = transition(static_cast<Eigen::Index>(s), t);
    if (p > 0.0) {
      const auto& atoms = mu[static_cast<std::size_t>(t)].atoms();
      cursors.push_back({static_cast<std::size_t>(t), p, 0, atoms[0].weight});
    }
  }
  double prev = 0.0;
  while (true) {
    double next = std::numeric_limits<double>::infinity();
    double value = 0.0;
    for (const auto& c : cursors) {
      next = std::min(next, c.cum);
      value += c.prob * mu[c.state].atoms()[c.index].value;
    }
    const double len = std::min(next, 1.0) - prev;
    if (len > 0.0) {
      out.push_back({reward + discount * value, model_weight * len});
      prev = next;
    }
    bool advanced = false;
    for (auto& c : cursors) {
      const auto& atoms = mu[c.state].atoms();
      if (c.cum <= next && c.index + 1 < atoms.size()) {
        ++c.index;
        c.cum += atoms[c.index].weight;
        advanced = true;
      }
    }
    if (!advanced) break;
  }
}

}  // namespace detail

/**
 * Exact value-distributional Bellman backup.
 *
 * For each state s, model k and comonotone quantile level, the output atom is
 * r_k(s) + gamma * sum_{s'} p_k(s'|s) F^{-1}_{mu(s')}(tau), weighted by
 * w_k times the length of the level interval. The terminal state stays at
 * the point mass at zero. Throws AtomLimitError rather than projecting when
 * a state would need more than `config.max_atoms` atoms.
 */
inline AtomValueFunction apply_operator_exact(const AtomValueFunction& mu, const ModelEnsemble& ensemble,
                                              const Policy& policy, const OperatorConfig& config = {}) {
  const std::size_t n = ensemble.num_states();
  detail::require(mu.size() == n, "value distribution has wrong state count");
  const std::vector<Mrp> mrps = ensemble.induce(policy);
  AtomValueFunction out(n);
  std::vector<Atom> atoms;
  for (std::size_t s = 0; s < n; ++s) {
    if (s == ensemble.terminal_state()) {
      out[s] = AtomDistribution::point_mass(0.0);
      continue;
    }
    atoms.clear();
    for (std::size_t k = 0; k < mrps.size(); ++k) {
      detail::comonotone_backup(mu, mrps[k].transition, s, mrps[k].reward(static_cast<Eigen::Index>(s)),
                                mrps[k].discount, ensemble.weights[k], atoms);
      if (atoms.size() > config.max_atoms) {
        throw AtomLimitError("exact backup at state " + std::to_string(s) + " exceeds " +
                             std::to_string(config.max_atoms) + " atoms; use the projected operator");
      }
    }
    out[s] = AtomDistribution(std::move(atoms));
    atoms = {};
  }
  return out;
}

/**
 * Projected backup: the exact backup of a quantile value function followed by
 * quantile projection onto the same m. Every input row holds m equally
 * weighted sorted atoms, so the comonotone level intervals are just the m
 * atom slots and the per-model targets r + gamma P Q come out sorted.
 */
inline QuantileValueFunction apply_operator_projected(const QuantileValueFunction& mu, const ModelEnsemble& ensemble,
                                                      const Policy& policy) {
  const std::size_t n = ensemble.num_states();
  const std::size_t m = mu.num_quantiles();
  detail::require(mu.num_states() == n, "value distribution has wrong state count");
  const std::vector<Mrp> mrps = ensemble.induce(policy);
  std::vector<RowMatrix> targets;
  targets.reserve(mrps.size());
  for (const auto& mrp : mrps) {
    RowMatrix t = mrp.discount * (mrp.transition * mu.matrix());
    t.colwise() += mrp.reward;
    targets.push_back(std::move(t));
  }
  RowMatrix out = RowMatrix::Zero(n, m);
  std::vector<Atom> pooled(mrps.size() * m);
  for (std::size_t s = 0; s < n; ++s) {
    if (s == ensemble.terminal_state()) continue;
    for (std::size_t k = 0; k < mrps.size(); ++k) {
      const double w = ensemble.weights[k] / static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) pooled[k * m + j] = {targets[k](s, j), w};
    }
    std::sort(pooled.begin(), pooled.end(), [](const Atom& a, const Atom& b) { return a.value < b.value; });
    std::size_t idx = 0;
    double cum = pooled[0].weight;
    for (std::size_t i = 0; i < m; ++i) {
      const double tau = tau_hat(i, m);
      while (cum < tau - kCdfTolerance && idx + 1 < pooled.size()) cum += pooled[++idx].weight;
      out(s, i) = pooled[idx].value;
    }
  }
  return QuantileValueFunction(std::move(out));
}

struct ProjectedIterationResult {
  QuantileValueFunction value;
  std::vector<double> successive_distances;  // sup-w1 between iterates k and k + 1
  std::size_t iterations = 0;
  bool converged = false;
};

/// Iterates the projected operator until successive iterates are within `tolerance` in sup-w1.
inline ProjectedIterationResult iterate_projected(QuantileValueFunction mu, const ModelEnsemble& ensemble,
                                                  const Policy& policy, double tolerance = 1e-9,
                                                  std::size_t max_iterations = 1000) {
  ProjectedIterationResult result;
  for (std::size_t k = 0; k < max_iterations; ++k) {
    QuantileValueFunction next = apply_operator_projected(mu, ensemble, policy);
    const double d = sup_wasserstein(1.0, mu, next);
    result.successive_distances.push_back(d);
    mu = std::move(next);
    result.iterations = k + 1;
    if (d <= tolerance) {
      result.converged = true;
      break;
    }
  }
  result.value = std::move(mu);
  return result;
}

/// Applies the exact operator `iterations` times.
inline AtomValueFunction iterate_exact(AtomValueFunction mu, const ModelEnsemble& ensemble, const Policy& policy,
                                       std::size_t iterations, const OperatorConfig& config = {}) {
  for (std::size_t k = 0; k < iterations; ++k) mu = apply_operator_exact(mu, ensemble, policy, config);
  return mu;
}

/// Point mass at zero in every state.
inline AtomValueFunction zero_atoms(std::size_t num_states) {
  return AtomValueFunction(num_states, AtomDistribution::point_mass(0.0));
}

struct ContractionTrial {
  std::size_t trial = 0;
  std::size_t state_space_size = 0;
  double gamma = 0.0;
  double w_pre = 0.0;   // sup-w_p(mu, mu')
  double w_post = 0.0;  // sup-w_p(T mu, T mu')
  double ratio = 0.0;   // w_post / (gamma * w_pre), 0 when both vanish
};

struct ContractionReport {
  std::vector<ContractionTrial> trials;
  double max_ratio = 0.0;
  bool violated = false;
};

/// Random per-state atom function with the terminal pinned at zero.
inline AtomValueFunction random_atom_function(std::size_t num_states, std::size_t terminal, std::size_t max_atoms,
                                              double lo, double hi, SplitMix64& rng) {
  AtomValueFunction mu(num_states);
  std::uniform_int_distribution<std::size_t> count(1, max_atoms);
  std::uniform_real_distribution<double> value(lo, hi);
  for (std::size_t s = 0; s < num_states; ++s) {
    if (s == terminal) continue;
    const std::size_t n = count(rng);
    std::vector<Atom> atoms(n);
    double total = 0.0;
    for (auto& a : atoms) {
      a.value = value(rng);
      a.weight = 0.05 + rng.uniform();
      total += a.weight;
    }
    for (auto& a : atoms) a.weight /= total;
    mu[s] = AtomDistribution(std::move(atoms));
  }
  return mu;
}

/**
 * Checks sup-w_p(T mu, T mu') <= gamma * sup-w_p(mu, mu') on random pairs of
 * state-independent atom functions. Violations are reported, not thrown.
 */
inline ContractionReport certify_contraction(const ModelEnsemble& ensemble, const Policy& policy, double p_order,
                                             std::size_t trials, std::uint64_t seed, std::size_t max_atoms_per_state = 5,
                                             const OperatorConfig& config = {}) {
  ensemble.validate();
  ContractionReport report;
  const double gamma = ensemble.discount();
  const std::size_t n = ensemble.num_states();
  double reward_scale = 1.0;
  for (const auto& m : ensemble.models) reward_scale = std::max(reward_scale, m.max_abs_reward());
  const double bound = reward_scale / (1.0 - gamma);
  for (std::size_t t = 0; t < trials; ++t) {
    SplitMix64 rng(derive_seed(seed, {stream::kTrial, t}));
    const AtomValueFunction mu = random_atom_function(n, ensemble.terminal_state(), max_atoms_per_state, -bound, bound, rng);
    // One trial in four compares a function with itself.
    const AtomValueFunction mu2 = (t % 4 == 3) ? mu
        : random_atom_function(n, ensemble.terminal_state(), max_atoms_per_state, -bound, bound, rng);
    ContractionTrial row{t, n, gamma, sup_wasserstein(p_order, mu, mu2), 0.0, 0.0};
    row.w_post = sup_wasserstein(p_order, apply_operator_exact(mu, ensemble, policy, config),
                                 apply_operator_exact(mu2, ensemble, policy, config));
    if (row.w_post == 0.0) {
      row.ratio = 0.0;
    } else {
      const double denom = gamma * row.w_pre;
      row.ratio = denom > 0.0 ? row.w_post / denom : std::numeric_limits<double>::infinity();
    }
    report.max_ratio = std::max(report.max_ratio, row.ratio);
    report.violated = report.violated || row.ratio > 1.0 + 1e-9;
    report.trials.push_back(row);
  }
  return report;
}

}  // namespace vdist
