#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls into the code path it is used to check.

#include "vdist/mdp.hpp"
#include "vdist/quantdist.hpp"
#include "vdist/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace vdist::testing {

/// Plain Jacobi value iteration.
inline Vector value_iteration(const Mrp& mrp, std::size_t sweeps) {
  Vector v = Vector::Zero(mrp.reward.size());
  for (std::size_t k = 0; k < sweeps; ++k) v = mrp.reward + mrp.discount * mrp.transition * v;
  return v;
}

/// Expected discounted reward over the first `horizon` steps, by loops only.
inline std::vector<double> finite_horizon_values(const Mrp& mrp, std::size_t horizon) {
  const auto n = static_cast<std::size_t>(mrp.reward.size());
  std::vector<double> v(n, 0.0);
  for (std::size_t h = 0; h < horizon; ++h) {
    std::vector<double> next(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      double acc = mrp.reward(s);
      for (std::size_t t = 0; t < n; ++t) acc += mrp.discount * mrp.transition(s, t) * v[t];
      next[s] = acc;
    }
    v = next;
  }
  return v;
}

/// Composite Simpson rule on [a, b] with an even number of panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t panels = 20000) {
  if (panels % 2) ++panels;
  const double h = (b - a) / static_cast<double>(panels);
  double acc = f(a) + f(b);
  for (std::size_t i = 1; i < panels; ++i) acc += f(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

/// Inverse CDF by a direct scan over unsorted (value, weight) pairs.
inline double scan_inverse_cdf(const std::vector<Atom>& atoms, double tau) {
  std::vector<Atom> sorted = atoms;
  std::sort(sorted.begin(), sorted.end(), [](const Atom& a, const Atom& b) { return a.value < b.value; });
  double cum = 0.0;
  for (const auto& a : sorted) {
    cum += a.weight;
    if (cum >= tau - 1e-12) return a.value;
  }
  return sorted.back().value;
}

/// Midpoint-rule approximation of the p-Wasserstein integral.
inline double riemann_wasserstein(double p, const std::vector<Atom>& a, const std::vector<Atom>& b, std::size_t points) {
  double acc = 0.0;
  for (std::size_t k = 0; k < points; ++k) {
    const double tau = (static_cast<double>(k) + 0.5) / static_cast<double>(points);
    acc += std::pow(std::abs(scan_inverse_cdf(a, tau) - scan_inverse_cdf(b, tau)), p);
  }
  return std::pow(acc / static_cast<double>(points), 1.0 / p);
}

inline std::vector<Atom> random_atoms(std::size_t n, double lo, double hi, SplitMix64& rng) {
  std::uniform_real_distribution<double> value(lo, hi);
  std::vector<Atom> atoms(n);
  double total = 0.0;
  for (auto& a : atoms) {
    a.value = value(rng);
    a.weight = 0.1 + rng.uniform();
    total += a.weight;
  }
  for (auto& a : atoms) a.weight /= total;
  return atoms;
}

/// Recursive DFS cycle check over the support graph (terminal self-loop excluded).
inline bool has_cycle(const TabularMdp& mdp) {
  const std::size_t n = mdp.num_states;
  std::vector<int> color(n, 0);
  std::function<bool(std::size_t)> visit = [&](std::size_t s) {
    color[s] = 1;
    if (s != mdp.terminal_state) {
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        for (std::size_t t = 0; t < n; ++t) {
          if (mdp.prob(s, a, t) <= 0.0) continue;
          if (color[t] == 1) return true;
          if (color[t] == 0 && visit(t)) return true;
        }
      }
    }
    color[s] = 2;
    return false;
  };
  for (std::size_t s = 0; s < n; ++s)
    if (color[s] == 0 && visit(s)) return true;
  return false;
}

/// Rejection sampler for N(mean, std) restricted to [lo, hi].
inline double rejection_truncated_normal(double mean, double std, double lo, double hi, std::mt19937_64& rng) {
  std::normal_distribution<double> n(mean, std);
  while (true) {
    const double x = n(rng);
    if (x >= lo && x <= hi) return x;
  }
}

inline double sample_mean(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

inline double sample_std(std::span<const double> xs) {
  const double mu = sample_mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace vdist::testing
