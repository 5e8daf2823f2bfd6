#pragma once

#include "vdist/error.hpp"
#include "vdist/mdp.hpp"
#include "vdist/random.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace vdist {

/// Transition counts plus per-(s, a) reward statistics collected from an environment.
struct TransitionDataset {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<std::uint64_t> counts;  // (s, a, s2), row-major
  Matrix reward_sums;
  Matrix reward_sq_sums;

  TransitionDataset() = default;
  TransitionDataset(std::size_t states, std::size_t actions)
      : num_states(states),
        num_actions(actions),
        counts(states * actions * states, 0),
        reward_sums(Matrix::Zero(states, actions)),
        reward_sq_sums(Matrix::Zero(states, actions)) {}

  std::uint64_t count(std::size_t s, std::size_t a, std::size_t next) const {
    return counts[(s * num_actions + a) * num_states + next];
  }

  std::uint64_t visits(std::size_t s, std::size_t a) const {
    std::uint64_t total = 0;
    for (std::size_t t = 0; t < num_states; ++t) total += count(s, a, t);
    return total;
  }

  std::uint64_t total() const {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    return total;
  }

  void record(std::size_t s, std::size_t a, std::size_t next, double reward) {
    ++counts[(s * num_actions + a) * num_states + next];
    reward_sums(s, a) += reward;
    reward_sq_sums(s, a) += reward * reward;
  }

  void merge(const TransitionDataset& other) {
    detail::require(other.num_states == num_states && other.num_actions == num_actions, "dataset shape mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    reward_sums += other.reward_sums;
    reward_sq_sums += other.reward_sq_sums;
  }
};

/**
 * Independent Dirichlet beliefs over every next-state row.
 *
 * A zero concentration marks a structurally impossible transition; each
 * row must keep at least one positive entry.
 */
struct DirichletPosterior {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> alpha;  // (s, a, s2), row-major

  double at(std::size_t s, std::size_t a, std::size_t next) const {
    return alpha[(s * num_actions + a) * num_states + next];
  }
  double& at(std::size_t s, std::size_t a, std::size_t next) {
    return alpha[(s * num_actions + a) * num_states + next];
  }

  /// Concentration `value` on every transition `structure` allows.
  static DirichletPosterior from_support(const TabularMdp& structure, double value = 1.0) {
    detail::require(value > 0.0, "Dirichlet concentration must be positive");
    DirichletPosterior d{structure.num_states, structure.num_actions,
                         std::vector<double>(structure.num_states * structure.num_actions * structure.num_states, 0.0)};
    for (std::size_t s = 0; s < d.num_states; ++s)
      for (std::size_t a = 0; a < d.num_actions; ++a)
        for (std::size_t t = 0; t < d.num_states; ++t)
          if (structure.prob(s, a, t) > 0.0) d.at(s, a, t) = value;
    return d;
  }

  void validate() const {
    detail::require(alpha.size() == num_states * num_actions * num_states, "Dirichlet tensor has wrong size");
    for (std::size_t s = 0; s < num_states; ++s) {
      for (std::size_t a = 0; a < num_actions; ++a) {
        bool any = false;
        for (std::size_t t = 0; t < num_states; ++t) {
          const double v = at(s, a, t);
          detail::require(std::isfinite(v) && v >= 0.0, "Dirichlet concentration must be non-negative");
          any = any || v > 0.0;
        }
        detail::require(any, "Dirichlet row (s=" + std::to_string(s) + ", a=" + std::to_string(a) +
                                 ") has no positive concentration");
      }
    }
  }
};

/// Normal distribution restricted to [lower, upper], one mixture component.
struct TruncatedGaussian {
  double mean = 0.0;
  double std = 1.0;
  double weight = 1.0;
  double lower = 0.0;
  double upper = 1.0;

  double standardized(double x) const { return (x - mean) / std; }

  /// Probability mass the untruncated normal puts on [lower, upper].
  double mass() const {
    const boost::math::normal n;
    return boost::math::cdf(n, standardized(upper)) - boost::math::cdf(n, standardized(lower));
  }

  double truncated_mean() const {
    const boost::math::normal n;
    const double a = standardized(lower);
    const double b = standardized(upper);
    return mean + std * (boost::math::pdf(n, a) - boost::math::pdf(n, b)) / mass();
  }

  double pdf(double x) const {
    if (x < lower || x > upper) return 0.0;
    const boost::math::normal n;
    return boost::math::pdf(n, standardized(x)) / (std * mass());
  }

  /// Inverse-CDF draw from uniform u in (0, 1).
  double inverse_cdf(double u) const {
    const boost::math::normal n;
    const double fa = boost::math::cdf(n, standardized(lower));
    const double fb = boost::math::cdf(n, standardized(upper));
    const double level = std::clamp(fa + u * (fb - fa), 1e-300, 1.0 - 1e-16);
    const double x = mean + std * boost::math::quantile(n, level);
    return std::clamp(x, lower, upper);
  }
};

/// Which MDP entry a sampled scalar controls.
struct ScalarBinding {
  enum class Kind { x, one_minus_x, constant };
  std::size_t state = 0;
  std::size_t action = 0;
  std::size_t next_state = 0;
  Kind kind = Kind::x;
  double value = 0.0;  // used by Kind::constant

  double evaluate(double x) const {
    switch (kind) {
      case Kind::x: return x;
      case Kind::one_minus_x: return 1.0 - x;
      case Kind::constant: return value;
    }
    return value;
  }
};

/**
 * Belief over a single scalar X in [0, 1], a mixture of truncated Gaussians,
 * that is written into the MDP through a table of bindings.
 */
struct ParametricScalarPosterior {
  std::vector<TruncatedGaussian> components;
  std::vector<ScalarBinding> bindings;

  void validate() const {
    detail::require(!components.empty(), "parametric posterior needs a component");
    double total = 0.0;
    for (const auto& c : components) {
      detail::require(c.std > 0.0, "component std must be positive");
      detail::require(c.weight > 0.0, "component weight must be positive");
      detail::require(c.lower >= 0.0 && c.upper <= 1.0 && c.lower < c.upper,
                      "truncation interval must lie inside [0, 1]");
      detail::require(c.mass() > 0.0, "truncation interval has no mass");
      total += c.weight;
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "component weights must sum to 1");
  }

  double mean() const {
    double m = 0.0;
    for (const auto& c : components) m += c.weight * c.truncated_mean();
    return m;
  }

  double pdf(double x) const {
    double d = 0.0;
    for (const auto& c : components) d += c.weight * c.pdf(x);
    return d;
  }

  double sample(std::uint64_t seed) const {
    SplitMix64 rng(derive_seed(seed, {stream::kScalar}));
    const double pick = rng.uniform();
    const double u = rng.uniform_open();
    double cum = 0.0;
    for (std::size_t k = 0; k < components.size(); ++k) {
      cum += components[k].weight;
      if (pick < cum || k + 1 == components.size()) return components[k].inverse_cdf(u);
    }
    return components.back().inverse_cdf(u);
  }

  /// Writes the bound entries for scalar `x` into a copy of `base`.
  TabularMdp bind(const TabularMdp& base, double x) const {
    TabularMdp out = base;
    for (const auto& b : bindings) {
      detail::require(b.state < base.num_states && b.action < base.num_actions && b.next_state < base.num_states,
                      "binding index out of range");
      out.prob(b.state, b.action, b.next_state) = b.evaluate(x);
    }
    try {
      out.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("parametric binding leaves the simplex: ") + e.what());
    }
    return out;
  }
};

/**
 * Known-variance Gaussian belief over each mean reward r(s, a).
 *
 * The prior is N(prior_mean, 1 / prior_precision) and observations carry unit
 * noise, so after n observations with sum S the posterior is
 * N((prior_precision * prior_mean + S) / (prior_precision + n), 1 / (prior_precision + n)).
 */
struct RewardPosterior {
  Matrix mean;
  Matrix precision_count;  // observations absorbed so far
  double prior_mean = 0.0;
  double prior_precision = 1.0;
  double noise_variance = 1.0;

  static RewardPosterior standard(std::size_t num_states, std::size_t num_actions) {
    return {Matrix::Zero(num_states, num_actions), Matrix::Zero(num_states, num_actions), 0.0, 1.0, 1.0};
  }

  double precision(std::size_t s, std::size_t a) const {
    return prior_precision + precision_count(s, a) / noise_variance;
  }

  void validate() const {
    detail::require(mean.rows() == precision_count.rows() && mean.cols() == precision_count.cols(),
                    "reward posterior shape mismatch");
    detail::require((precision_count.array() >= 0.0).all(), "precision counts must be non-negative");
    detail::require(prior_precision > 0.0 && noise_variance > 0.0, "reward prior must be proper");
  }
};

/// Dirichlet transitions together with Gaussian rewards.
struct DirichletGaussianPosterior {
  DirichletPosterior transitions;
  RewardPosterior rewards;
};

/// Degenerate belief: the MDP is known exactly.
struct PointMassPosterior {
  TabularMdp mdp;
};

using MdpPosterior =
    std::variant<PointMassPosterior, DirichletPosterior, ParametricScalarPosterior, DirichletGaussianPosterior>;

inline DirichletPosterior update_dirichlet(const DirichletPosterior& prior, const TransitionDataset& data) {
  detail::require(prior.num_states == data.num_states && prior.num_actions == data.num_actions,
                  "dataset shape does not match posterior");
  DirichletPosterior out = prior;
  for (std::size_t i = 0; i < out.alpha.size(); ++i) {
    if (data.counts[i] == 0) continue;
    detail::require(out.alpha[i] > 0.0, "observed a transition the prior rules out");
    out.alpha[i] += static_cast<double>(data.counts[i]);
  }
  return out;
}

inline RewardPosterior update_rewards(const RewardPosterior& prior, const TransitionDataset& data) {
  detail::require(prior.mean.rows() == static_cast<Eigen::Index>(data.num_states) &&
                      prior.mean.cols() == static_cast<Eigen::Index>(data.num_actions),
                  "dataset shape does not match reward posterior");
  RewardPosterior out = prior;
  for (std::size_t s = 0; s < data.num_states; ++s) {
    for (std::size_t a = 0; a < data.num_actions; ++a) {
      const double n = static_cast<double>(data.visits(s, a));
      if (n == 0.0) continue;
      const double before = prior.precision(s, a);
      const double after = before + n / prior.noise_variance;
      out.mean(s, a) = (before * prior.mean(s, a) + data.reward_sums(s, a) / prior.noise_variance) / after;
      out.precision_count(s, a) += n;
    }
  }
  return out;
}

/// Conjugate update for any posterior family that has one.
inline MdpPosterior update_posterior(const MdpPosterior& prior, const TransitionDataset& data) {
  struct Visitor {
    const TransitionDataset& data;
    MdpPosterior operator()(const PointMassPosterior& p) const { return p; }
    MdpPosterior operator()(const DirichletPosterior& p) const { return update_dirichlet(p, data); }
    MdpPosterior operator()(const ParametricScalarPosterior&) const {
      throw ValidationError("parametric scalar posteriors have no conjugate update");
    }
    MdpPosterior operator()(const DirichletGaussianPosterior& p) const {
      return DirichletGaussianPosterior{update_dirichlet(p.transitions, data), update_rewards(p.rewards, data)};
    }
  };
  return std::visit(Visitor{data}, prior);
}

/// Draws one reward table; stream (s, a) depends only on (seed, s, a).
inline Matrix sample_reward_table(const RewardPosterior& posterior, std::uint64_t seed) {
  Matrix out(posterior.mean.rows(), posterior.mean.cols());
  for (Eigen::Index s = 0; s < out.rows(); ++s) {
    for (Eigen::Index a = 0; a < out.cols(); ++a) {
      SplitMix64 rng(derive_seed(seed, {stream::kReward, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(a)}));
      std::normal_distribution<double> z;
      out(s, a) = posterior.mean(s, a) + z(rng) / std::sqrt(posterior.precision(s, a));
    }
  }
  return out;
}

/// Samples every Dirichlet row into `mdp`, each from its own (seed, s, a) stream.
inline void sample_transitions_into(const DirichletPosterior& posterior, std::uint64_t seed, TabularMdp& mdp) {
  std::vector<double> row(posterior.num_states);
  for (std::size_t s = 0; s < posterior.num_states; ++s) {
    for (std::size_t a = 0; a < posterior.num_actions; ++a) {
      std::size_t support = 0;
      std::size_t last = 0;
      for (std::size_t t = 0; t < posterior.num_states; ++t) {
        if (posterior.at(s, a, t) > 0.0) {
          ++support;
          last = t;
        }
      }
      for (std::size_t t = 0; t < posterior.num_states; ++t) mdp.prob(s, a, t) = 0.0;
      if (support == 1) {
        mdp.prob(s, a, last) = 1.0;
        continue;
      }
      SplitMix64 rng(derive_seed(seed, {stream::kModel, s, a}));
      double total = 0.0;
      for (std::size_t t = 0; t < posterior.num_states; ++t) {
        const double alpha = posterior.at(s, a, t);
        row[t] = 0.0;
        if (alpha > 0.0) {
          std::gamma_distribution<double> g(alpha, 1.0);
          row[t] = g(rng);
          total += row[t];
        }
      }
      if (!(total > 0.0)) {
        // Every gamma draw underflowed; only possible for tiny concentrations.
        throw NumericalError("Dirichlet draw underflowed at (s=" + std::to_string(s) + ", a=" + std::to_string(a) + ")");
      }
      for (std::size_t t = 0; t < posterior.num_states; ++t) mdp.prob(s, a, t) = row[t] / total;
    }
  }
}

inline TabularMdp sample_mdp(const DirichletPosterior& posterior, const TabularMdp& base, std::uint64_t seed) {
  detail::require(posterior.num_states == base.num_states && posterior.num_actions == base.num_actions,
                  "posterior shape does not match base MDP");
  TabularMdp out = base;
  sample_transitions_into(posterior, seed, out);
  return out;
}

inline TabularMdp sample_mdp(const ParametricScalarPosterior& posterior, const TabularMdp& base, std::uint64_t seed) {
  return posterior.bind(base, posterior.sample(seed));
}

inline TabularMdp sample_mdp(const DirichletGaussianPosterior& posterior, const TabularMdp& base, std::uint64_t seed) {
  TabularMdp out = sample_mdp(posterior.transitions, base, seed);
  out.reward = sample_reward_table(posterior.rewards, seed);
  out.reward.row(out.terminal_state).setZero();
  return out;
}

inline TabularMdp sample_mdp(const PointMassPosterior& posterior, const TabularMdp&, std::uint64_t) {
  return posterior.mdp;
}

/// Draws one concrete MDP; deterministic in `seed`.
inline TabularMdp sample_mdp(const MdpPosterior& posterior, const TabularMdp& base, std::uint64_t seed) {
  return std::visit([&](const auto& p) { return sample_mdp(p, base, seed); }, posterior);
}

inline TabularMdp posterior_mean_mdp(const DirichletPosterior& posterior, const TabularMdp& base) {
  TabularMdp out = base;
  for (std::size_t s = 0; s < posterior.num_states; ++s) {
    for (std::size_t a = 0; a < posterior.num_actions; ++a) {
      double total = 0.0;
      for (std::size_t t = 0; t < posterior.num_states; ++t) total += posterior.at(s, a, t);
      for (std::size_t t = 0; t < posterior.num_states; ++t) out.prob(s, a, t) = posterior.at(s, a, t) / total;
    }
  }
  return out;
}

inline TabularMdp posterior_mean_mdp(const ParametricScalarPosterior& posterior, const TabularMdp& base) {
  return posterior.bind(base, posterior.mean());
}

inline TabularMdp posterior_mean_mdp(const DirichletGaussianPosterior& posterior, const TabularMdp& base) {
  TabularMdp out = posterior_mean_mdp(posterior.transitions, base);
  out.reward = posterior.rewards.mean;
  out.reward.row(out.terminal_state).setZero();
  return out;
}

inline TabularMdp posterior_mean_mdp(const PointMassPosterior& posterior, const TabularMdp&) { return posterior.mdp; }

inline TabularMdp posterior_mean_mdp(const MdpPosterior& posterior, const TabularMdp& base) {
  return std::visit([&](const auto& p) { return posterior_mean_mdp(p, base); }, posterior);
}

inline void validate_posterior(const MdpPosterior& posterior, const TabularMdp& base) {
  struct Visitor {
    const TabularMdp& base;
    void operator()(const PointMassPosterior& p) const { p.mdp.validate(); }
    void operator()(const DirichletPosterior& p) const {
      p.validate();
      detail::require(p.num_states == base.num_states && p.num_actions == base.num_actions,
                      "posterior shape does not match base MDP");
    }
    void operator()(const ParametricScalarPosterior& p) const {
      p.validate();
      p.bind(base, 0.0);
      p.bind(base, 1.0);
    }
    void operator()(const DirichletGaussianPosterior& p) const {
      (*this)(p.transitions);
      p.rewards.validate();
    }
  };
  std::visit(Visitor{base}, posterior);
}

}  // namespace vdist
