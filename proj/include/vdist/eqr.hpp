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
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace vdist {

enum class StepSchedule { constant, inverse_t, inverse_sqrt_t };

struct EqrConfig {
  std::size_t num_quantiles = 10;
  double step_size = 0.1;
  StepSchedule schedule = StepSchedule::inverse_sqrt_t;
  std::size_t max_steps = 10000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  bool random_init = false;  // otherwise every atom starts at zero
  double init_scale = 1.0;   // half-width of the uniform random initialisation

  void validate() const {
    detail::require(num_quantiles >= 1, "EQR needs at least one quantile");
    detail::require(step_size > 0.0 && std::isfinite(step_size), "EQR step size must be positive");
    detail::require(eval_every >= 1, "eval_every must be at least 1");
    detail::require(init_scale >= 0.0, "init_scale must be non-negative");
  }

  /// Step size used at 1-based step t.
  double step_size_at(std::size_t t) const {
    const double tt = static_cast<double>(std::max<std::size_t>(t, 1));
    switch (schedule) {
      case StepSchedule::constant: return step_size;
      case StepSchedule::inverse_t: return step_size / tt;
      case StepSchedule::inverse_sqrt_t: return step_size / std::sqrt(tt);
    }
    return step_size;
  }
};

struct EqrSnapshot {
  std::size_t step = 0;
  QuantileValueFunction value;
  std::optional<RowMatrix> error;  // reference - prediction, per state and quantile
};

struct EqrTrace {
  std::vector<EqrSnapshot> snapshots;
};

/**
 * One EQR sweep against a sampled model.
 *
 * Every non-terminal state is updated from the pre-update quantiles (Jacobi):
 * with bootstrap targets t_j(s) = r(s) + gamma * sum_{s'} p(s'|s) q_j(s'),
 *   q_i(s) += alpha * (tau_hat_i - #{j : t_j(s) < q_i(s)} / m).
 * Targets equal to q_i do not count as below. Rows are re-sorted afterwards
 * and the terminal state is pinned to zero.
 */
inline QuantileValueFunction eqr_update(const QuantileValueFunction& q, const TabularMdp& sampled_mdp,
                                        const Policy& policy, double alpha) {
  const std::size_t n = sampled_mdp.num_states;
  const std::size_t m = q.num_quantiles();
  detail::require(q.num_states() == n, "quantile function has wrong state count");
  const Mrp mrp = induce_mrp(sampled_mdp, policy);
  const RowMatrix& cur = q.matrix();
  RowMatrix out = cur;
  std::vector<double> t(m);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t s = 0; s < n; ++s) {
    double* row = out.data() + s * m;
    if (s == sampled_mdp.terminal_state) {
      std::fill(row, row + m, 0.0);
      continue;
    }
    // Transition rows are sparse, so the targets are accumulated per successor.
    std::fill(t.begin(), t.end(), mrp.reward(s));
    for (std::size_t sp = 0; sp < n; ++sp) {
      const double w = mrp.discount * mrp.transition(s, sp);
      if (w == 0.0) continue;
      const double* src = cur.data() + sp * m;
      for (std::size_t j = 0; j < m; ++j) t[j] += w * src[j];
    }
    // Non-negative combinations of sorted rows stay sorted; the sort is a
    // guard against round-off only.
    std::sort(t.begin(), t.end());
    const double* current = cur.data() + s * m;
    std::size_t below = 0;
    for (std::size_t i = 0; i < m; ++i) {
      while (below < m && t[below] < current[i]) ++below;
      row[i] = current[i] + alpha * (tau_hat(i, m) - static_cast<double>(below) * inv_m);
    }
    std::sort(row, row + m);
  }
  return QuantileValueFunction(std::move(out));
}

inline QuantileValueFunction initial_quantiles(std::size_t num_states, std::size_t terminal, const EqrConfig& config) {
  RowMatrix q = RowMatrix::Zero(num_states, config.num_quantiles);
  if (config.random_init) {
    SplitMix64 rng(derive_seed(config.seed, {stream::kEqrInit}));
    std::uniform_real_distribution<double> u(-config.init_scale, config.init_scale);
    for (std::size_t s = 0; s < num_states; ++s) {
      if (s == terminal) continue;
      for (Eigen::Index i = 0; i < q.cols(); ++i) q(s, i) = u(rng);
      std::sort(q.data() + s * config.num_quantiles, q.data() + (s + 1) * config.num_quantiles);
    }
  }
  return QuantileValueFunction(std::move(q));
}

/**
 * Epistemic quantile regression: each step draws a fresh model from the
 * posterior (seed derived from config.seed and the step index) and applies
 * eqr_update. Snapshots are taken every `eval_every` steps and after the
 * last one; when `reference` is given each snapshot carries the per-quantile
 * error reference - prediction.
 */
inline std::pair<QuantileValueFunction, EqrTrace> run_eqr(const MdpPosterior& posterior, const TabularMdp& base,
                                                          const Policy& policy, const EqrConfig& config,
                                                          const std::optional<QuantileValueFunction>& reference = {}) {
  config.validate();
  if (reference) {
    detail::require(reference->num_states() == base.num_states && reference->num_quantiles() == config.num_quantiles,
                    "reference quantiles have the wrong shape");
  }
  QuantileValueFunction q = initial_quantiles(base.num_states, base.terminal_state, config);
  EqrTrace trace;
  auto snapshot = [&](std::size_t step) {
    EqrSnapshot snap{step, q, std::nullopt};
    if (reference) snap.error = RowMatrix(reference->matrix() - q.matrix());
    trace.snapshots.push_back(std::move(snap));
  };
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    const TabularMdp model = sample_mdp(posterior, base, derive_seed(config.seed, {stream::kEqrStep, step}));
    q = eqr_update(q, model, policy, config.step_size_at(step));
    if (step % config.eval_every == 0 || step == config.max_steps) snapshot(step);
  }
  if (trace.snapshots.empty()) snapshot(0);
  return {std::move(q), std::move(trace)};
}

}  // namespace vdist
