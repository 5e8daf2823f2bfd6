#pragma once

#include "vdist/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vdist {

/// Slack used when comparing cumulative weights against quantile levels.
inline constexpr double kCdfTolerance = 1e-12;

struct Atom {
  double value = 0.0;
  double weight = 0.0;
};

/**
 * Finite-support distribution on the reals.
 *
 * Atoms are kept sorted by value with equal values merged, so the CDF and its
 * left-continuous inverse are well defined. Weights are renormalised on
 * construction after checking that they already sum to one up to round-off.
 */
class AtomDistribution {
 public:
  AtomDistribution() : atoms_{{0.0, 1.0}} {}

  explicit AtomDistribution(std::vector<Atom> atoms) : atoms_(std::move(atoms)) { normalize(); }

  static AtomDistribution point_mass(double value) { return AtomDistribution(std::vector<Atom>{{value, 1.0}}); }

  /// Equal-weight distribution over `values`.
  static AtomDistribution uniform(std::span<const double> values) {
    detail::require(!values.empty(), "uniform distribution needs at least one value");
    const double w = 1.0 / static_cast<double>(values.size());
    std::vector<Atom> atoms;
    atoms.reserve(values.size());
    for (double v : values) atoms.push_back({v, w});
    return AtomDistribution(std::move(atoms));
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  double min() const { return atoms_.front().value; }
  double max() const { return atoms_.back().value; }

  double mean() const {
    double m = 0.0;
    for (const auto& a : atoms_) m += a.value * a.weight;
    return m;
  }

  /// Left-continuous inverse CDF: inf{x : F(x) >= tau}.
  double inverse_cdf(double tau) const {
    double cum = 0.0;
    for (const auto& a : atoms_) {
      cum += a.weight;
      if (cum >= tau - kCdfTolerance) return a.value;
    }
    return atoms_.back().value;
  }

  friend bool operator==(const AtomDistribution& x, const AtomDistribution& y) {
    if (x.atoms_.size() != y.atoms_.size()) return false;
    for (std::size_t i = 0; i < x.atoms_.size(); ++i) {
      if (x.atoms_[i].value != y.atoms_[i].value || x.atoms_[i].weight != y.atoms_[i].weight) return false;
    }
    return true;
  }

 private:
  void normalize() {
    detail::require(!atoms_.empty(), "atom distribution needs at least one atom");
    double total = 0.0;
    for (const auto& a : atoms_) {
      detail::require(std::isfinite(a.value), "atom value must be finite");
      detail::require(a.weight > 0.0 && std::isfinite(a.weight), "atom weight must be positive");
      total += a.weight;
    }
    // Long operator outputs accumulate a little round-off; anything beyond
    // that is a caller bug.
    detail::require(std::abs(total - 1.0) <= 1e-9, "atom weights sum to " + std::to_string(total));
    std::sort(atoms_.begin(), atoms_.end(), [](const Atom& x, const Atom& y) { return x.value < y.value; });
    std::size_t out = 0;
    for (std::size_t i = 1; i < atoms_.size(); ++i) {
      if (atoms_[i].value == atoms_[out].value) {
        atoms_[out].weight += atoms_[i].weight;
      } else {
        atoms_[++out] = atoms_[i];
      }
    }
    atoms_.resize(out + 1);
    for (auto& a : atoms_) a.weight /= total;
  }

  std::vector<Atom> atoms_;
};

/// Quantile level at the midpoint of the i-th (0-based) of m equal bins.
inline double tau_hat(std::size_t i, std::size_t m) {
  return static_cast<double>(2 * i + 1) / static_cast<double>(2 * m);
}

/// m equally weighted atoms at quantile levels tau_hat(0..m-1).
class QuantileDistribution {
 public:
  explicit QuantileDistribution(std::vector<double> atoms) : atoms_(std::move(atoms)) {
    detail::require(!atoms_.empty(), "quantile distribution needs m >= 1");
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      detail::require(std::isfinite(atoms_[i]), "quantile atom must be finite");
      detail::require(i == 0 || atoms_[i - 1] <= atoms_[i], "quantile atoms must be non-decreasing");
    }
  }

  std::size_t size() const { return atoms_.size(); }
  const std::vector<double>& atoms() const { return atoms_; }
  double operator[](std::size_t i) const { return atoms_[i]; }

  AtomDistribution to_atoms() const { return AtomDistribution::uniform(atoms_); }

 private:
  std::vector<double> atoms_;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * Per-state quantile distributions sharing one m. Row s holds the sorted
 * atoms q_1(s) <= ... <= q_m(s).
 */
class QuantileValueFunction {
 public:
  QuantileValueFunction() = default;

  QuantileValueFunction(std::size_t num_states, std::size_t m) : q_(RowMatrix::Zero(num_states, m)) {
    detail::require(m >= 1, "need at least one quantile");
  }

  explicit QuantileValueFunction(RowMatrix q) : q_(std::move(q)) {
    detail::require(q_.cols() >= 1, "need at least one quantile");
    for (Eigen::Index s = 0; s < q_.rows(); ++s) {
      for (Eigen::Index i = 0; i < q_.cols(); ++i) {
        detail::require(std::isfinite(q_(s, i)), "quantile atom must be finite");
        detail::require(i == 0 || q_(s, i - 1) <= q_(s, i), "quantile atoms must be non-decreasing");
      }
    }
  }

  std::size_t num_states() const { return static_cast<std::size_t>(q_.rows()); }
  std::size_t num_quantiles() const { return static_cast<std::size_t>(q_.cols()); }

  std::span<const double> row(std::size_t s) const {
    return {q_.data() + s * num_quantiles(), num_quantiles()};
  }

  QuantileDistribution distribution(std::size_t s) const {
    auto r = row(s);
    return QuantileDistribution(std::vector<double>(r.begin(), r.end()));
  }

  const RowMatrix& matrix() const { return q_; }

  /// Checks the terminal-state convention: the point mass at zero.
  bool terminal_is_zero(std::size_t terminal) const { return (q_.row(terminal).array() == 0.0).all(); }

 private:
  RowMatrix q_;
};

/// Exact (unprojected) value distribution: one atom distribution per state.
using AtomValueFunction = std::vector<AtomDistribution>;

/**
 * p-Wasserstein distance between finite-support distributions, computed
 * exactly by walking the merged breakpoints of the two inverse CDFs.
 */
inline double wasserstein(double p, const AtomDistribution& a, const AtomDistribution& b) {
  detail::require(p >= 1.0, "Wasserstein order must be >= 1");
  const auto& xa = a.atoms();
  const auto& xb = b.atoms();
  std::size_t i = 0;
  std::size_t j = 0;
  double ca = xa[0].weight;
  double cb = xb[0].weight;
  double prev = 0.0;
  double acc = 0.0;
  while (i < xa.size() && j < xb.size()) {
    const double next = std::min(ca, cb);
    const double len = next - prev;
    if (len > 0.0) {
      const double gap = std::abs(xa[i].value - xb[j].value);
      acc += len * (p == 1.0 ? gap : std::pow(gap, p));
      prev = next;
    }
    if (ca <= cb) {
      if (++i < xa.size()) ca += xa[i].weight;
    } else {
      if (++j < xb.size()) cb += xb[j].weight;
    }
  }
  return p == 1.0 ? acc : std::pow(acc, 1.0 / p);
}

inline double wasserstein(double p, const QuantileDistribution& a, const QuantileDistribution& b) {
  if (a.size() == b.size()) {
    detail::require(p >= 1.0, "Wasserstein order must be >= 1");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double gap = std::abs(a[i] - b[i]);
      acc += p == 1.0 ? gap : std::pow(gap, p);
    }
    acc /= static_cast<double>(a.size());
    return p == 1.0 ? acc : std::pow(acc, 1.0 / p);
  }
  return wasserstein(p, a.to_atoms(), b.to_atoms());
}

inline double wasserstein(double p, std::span<const double> quantiles_a, std::span<const double> quantiles_b) {
  return wasserstein(p, QuantileDistribution({quantiles_a.begin(), quantiles_a.end()}),
                     QuantileDistribution({quantiles_b.begin(), quantiles_b.end()}));
}

inline double sup_wasserstein(double p, const AtomValueFunction& a, const AtomValueFunction& b) {
  detail::require(a.size() == b.size(), "state counts differ");
  double worst = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) worst = std::max(worst, wasserstein(p, a[s], b[s]));
  return worst;
}

inline double sup_wasserstein(double p, const QuantileValueFunction& a, const QuantileValueFunction& b) {
  detail::require(a.num_states() == b.num_states(), "state counts differ");
  double worst = 0.0;
  for (std::size_t s = 0; s < a.num_states(); ++s) worst = std::max(worst, wasserstein(p, a.row(s), b.row(s)));
  return worst;
}

/// Quantile projection onto m atoms: atom i is F^{-1}(tau_hat(i, m)).
inline QuantileDistribution project_quantiles(const AtomDistribution& source, std::size_t m) {
  detail::require(m >= 1, "projection needs m >= 1");
  std::vector<double> out(m);
  const auto& atoms = source.atoms();
  std::size_t k = 0;
  double cum = atoms[0].weight;
  for (std::size_t i = 0; i < m; ++i) {
    const double tau = tau_hat(i, m);
    while (cum < tau - kCdfTolerance && k + 1 < atoms.size()) cum += atoms[++k].weight;
    out[i] = atoms[k].value;
  }
  return QuantileDistribution(std::move(out));
}

/**
 * Quantile projection of the empirical distribution of `samples`.
 *
 * The left-continuous inverse CDF of N equally weighted samples at level
 * (2i + 1) / 2m is the order statistic with 0-based index
 * ceil((2i + 1) N / 2m) - 1, evaluated in integer arithmetic.
 */
inline QuantileDistribution project_quantiles(std::span<const double> samples, std::size_t m) {
  detail::require(m >= 1, "projection needs m >= 1");
  detail::require(!samples.empty(), "cannot project an empty sample");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t numerator = (2 * i + 1) * n;
    const std::size_t rank = (numerator + 2 * m - 1) / (2 * m);
    out[i] = sorted[rank - 1];
  }
  return QuantileDistribution(std::move(out));
}

/// Empirical quantile-regression loss of candidate v at level tau.
inline double qr_loss(double tau, double v, std::span<const double> samples) {
  detail::require(!samples.empty(), "qr_loss needs samples");
  double acc = 0.0;
  for (double x : samples) {
    if (x > v) {
      acc += tau * (x - v);
    } else if (x < v) {
      acc += (1.0 - tau) * (v - x);
    }
  }
  return acc / static_cast<double>(samples.size());
}

/// Huber loss L_kappa(u).
inline double huber(double kappa, double u) {
  const double a = std::abs(u);
  return a <= kappa ? 0.5 * u * u : kappa * (a - 0.5 * kappa);
}

/**
 * Quantile Huber loss |tau - 1{u < 0}| * L_kappa(u) / kappa.
 *
 * The 1/kappa normalisation makes kappa -> 0 recover the plain quantile loss
 * |tau - 1{u < 0}| * |u|, which is what kappa = 0 returns. At kappa = 1 the
 * normalised and unnormalised forms coincide.
 */
inline double quantile_huber(double tau, double kappa, double u) {
  detail::require(kappa >= 0.0, "kappa must be non-negative");
  const double weight = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
  if (kappa == 0.0) return weight * std::abs(u);
  return weight * huber(kappa, u) / kappa;
}

}  // namespace vdist
