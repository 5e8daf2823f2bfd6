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
#include <span>
#include <string>
#include <vector>

namespace vdist {

/// N exact value samples per state, drawn by solving sampled MDPs.
struct ValueSampleSet {
  RowMatrix values;  // (state, sample)
  std::uint64_t seed = 0;
  std::string provenance;

  std::size_t num_states() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t num_samples() const { return static_cast<std::size_t>(values.cols()); }

  std::span<const double> state(std::size_t s) const {
    return {values.data() + s * num_samples(), num_samples()};
  }

  /// Mean computed about the first sample, so constant rows are reproduced exactly.
  double mean(std::size_t s) const {
    const auto row = values.row(static_cast<Eigen::Index>(s)).array();
    const double pivot = row(0);
    return pivot + (row - pivot).mean();
  }

  /// Sample standard deviation (n - 1 denominator).
  double stddev(std::size_t s) const {
    const auto row = values.row(static_cast<Eigen::Index>(s)).array();
    const double mu = mean(s);
    const double n = static_cast<double>(num_samples());
    if (n < 2.0) return 0.0;
    return std::sqrt((row - mu).square().sum() / (n - 1.0));
  }

  double standard_error(std::size_t s) const {
    return stddev(s) / std::sqrt(static_cast<double>(num_samples()));
  }
};

/// Seed of the k-th oracle sample; depends only on (seed, k).
inline std::uint64_t oracle_sample_seed(std::uint64_t seed, std::size_t k) {
  return derive_seed(seed, {stream::kOracle, k});
}

/**
 * Samples of the value distribution: sample k solves the MRP induced by
 * `policy` on the k-th posterior draw exactly.
 */
inline ValueSampleSet sample_value_distribution(const MdpPosterior& posterior, const TabularMdp& base,
                                                const Policy& policy, std::size_t num_samples, std::uint64_t seed,
                                                std::string provenance = {}) {
  detail::require(num_samples >= 1, "oracle needs at least one sample");
  ValueSampleSet out{RowMatrix(base.num_states, num_samples), seed, std::move(provenance)};
  for (std::size_t k = 0; k < num_samples; ++k) {
    const TabularMdp model = sample_mdp(posterior, base, oracle_sample_seed(seed, k));
    out.values.col(static_cast<Eigen::Index>(k)) = solve_value(model, policy);
  }
  return out;
}

/// Per-state quantile projection of the empirical value distribution.
inline QuantileValueFunction oracle_quantiles(const ValueSampleSet& samples, std::size_t m) {
  RowMatrix q(samples.num_states(), m);
  for (std::size_t s = 0; s < samples.num_states(); ++s) {
    const QuantileDistribution proj = project_quantiles(samples.state(s), m);
    for (std::size_t i = 0; i < m; ++i) q(s, i) = proj[i];
  }
  return QuantileValueFunction(std::move(q));
}

struct MeanIdentityReport {
  Vector sample_mean;
  Vector mean_model_value;  // value under the posterior-mean MDP
  Vector gap;
  Vector standard_error;
  std::vector<bool> flagged;  // gap > 3 standard errors

  bool all_within() const { return std::none_of(flagged.begin(), flagged.end(), [](bool f) { return f; }); }
};

/// Compares sample means with `mean_model_value`, the value under the posterior-mean MDP.
inline MeanIdentityReport mean_identity_report(const ValueSampleSet& samples, const Vector& mean_model_value) {
  const std::size_t n = samples.num_states();
  detail::require(mean_model_value.size() == static_cast<Eigen::Index>(n), "mean-model value has the wrong size");
  MeanIdentityReport r;
  r.sample_mean = Vector(n);
  r.standard_error = Vector(n);
  r.mean_model_value = mean_model_value;
  r.gap = Vector(n);
  r.flagged.assign(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    const auto i = static_cast<Eigen::Index>(s);
    r.sample_mean(i) = samples.mean(s);
    r.standard_error(i) = samples.standard_error(s);
    r.gap(i) = std::abs(r.sample_mean(i) - r.mean_model_value(i));
    // Round-off slack so degenerate posteriors (zero spread) are not flagged.
    const double slack = 1e-12 * std::max(1.0, std::abs(r.mean_model_value(i)));
    r.flagged[s] = r.gap(i) > 3.0 * r.standard_error(i) + slack;
  }
  return r;
}

inline MeanIdentityReport check_mean_identity(const MdpPosterior& posterior, const TabularMdp& base,
                                              const Policy& policy, std::size_t num_samples, std::uint64_t seed) {
  const ValueSampleSet samples = sample_value_distribution(posterior, base, policy, num_samples, seed);
  return mean_identity_report(samples, solve_value(posterior_mean_mdp(posterior, base), policy));
}

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

/// Equal-width histogram over [min, max] of the samples.
inline Histogram histogram(std::span<const double> samples, std::size_t bins) {
  detail::require(bins >= 1 && !samples.empty(), "histogram needs samples and bins");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (double x : samples) {
    auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

}  // namespace vdist
