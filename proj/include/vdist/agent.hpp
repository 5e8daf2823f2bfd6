#pragma once

#include "vdist/error.hpp"
#include "vdist/mdp.hpp"
#include "vdist/posterior.hpp"
#include "vdist/random.hpp"

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace vdist {

/// Improvement margin below which an action does not replace the incumbent.
inline constexpr double kImprovementTolerance = 1e-10;

/// Q(s, a) = r(s, a) + gamma * sum_{s'} p(s'|s, a) v(s').
inline Matrix action_values(const TabularMdp& mdp, const Vector& value) {
  Matrix q(mdp.num_states, mdp.num_actions);
  for (std::size_t a = 0; a < mdp.num_actions; ++a) {
    q.col(static_cast<Eigen::Index>(a)) = mdp.reward.col(static_cast<Eigen::Index>(a)) + mdp.discount * (mdp.transition[a] * value);
  }
  return q;
}

struct PolicyIterationResult {
  std::vector<std::size_t> actions;
  Policy policy;
  Vector value;
  std::size_t iterations = 0;
};

/**
 * Howard policy iteration with exact evaluation. An action only replaces the
 * current one when it improves Q by more than kImprovementTolerance, which
 * guarantees termination.
 */
inline PolicyIterationResult policy_iteration(const TabularMdp& mdp, std::size_t max_iterations = 10000) {
  std::vector<std::size_t> actions(mdp.num_states, 0);
  PolicyIterationResult result;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    Policy pi = Policy::deterministic(actions, mdp.num_actions);
    Vector v = solve_value(mdp, pi);
    const Matrix q = action_values(mdp, v);
    bool changed = false;
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
      std::size_t best = actions[s];
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        if (q(s, a) > q(s, best) + kImprovementTolerance) best = a;
      }
      if (best != actions[s]) {
        actions[s] = best;
        changed = true;
      }
    }
    if (!changed) {
      result.actions = actions;
      result.policy = std::move(pi);
      result.value = std::move(v);
      result.iterations = it;
      return result;
    }
  }
  throw NumericalError("policy iteration did not terminate");
}

/// Draws s' ~ p(.|s, a).
inline std::size_t sample_next_state(const TabularMdp& env, std::size_t s, std::size_t a, SplitMix64& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = s;
  for (std::size_t t = 0; t < env.num_states; ++t) {
    const double p = env.prob(s, a, t);
    if (p <= 0.0) continue;
    cum += p;
    last = t;
    if (u < cum) return t;
  }
  return last;
}

inline std::size_t sample_action(const Policy& policy, std::size_t s, SplitMix64& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  const auto cols = static_cast<std::size_t>(policy.probs.cols());
  std::size_t last = 0;
  for (std::size_t a = 0; a < cols; ++a) {
    const double p = policy.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
    if (p <= 0.0) continue;
    cum += p;
    last = a;
    if (u < cum) return a;
  }
  return last;
}

struct EpisodeOutcome {
  double discounted_return = 0.0;
  std::size_t steps = 0;
};

/// Runs one episode from `start`, recording every transition into `data`.
inline EpisodeOutcome run_episode(const TabularMdp& env, const Policy& policy, std::size_t start, std::size_t horizon,
                                  SplitMix64& rng, TransitionDataset& data) {
  EpisodeOutcome out;
  std::size_t s = start;
  double discount = 1.0;
  for (std::size_t h = 0; h < horizon && s != env.terminal_state; ++h) {
    const std::size_t a = sample_action(policy, s, rng);
    const std::size_t next = sample_next_state(env, s, a, rng);
    const double r = env.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
    data.record(s, a, next, r);
    out.discounted_return += discount * r;
    discount *= env.discount;
    ++out.steps;
    s = next;
  }
  return out;
}

/// Simulated rollouts of `policy` in the true environment.
inline TransitionDataset collect_with_policy(const TabularMdp& env, const Policy& policy, std::size_t start,
                                             std::size_t episodes, std::size_t horizon, std::uint64_t seed) {
  TransitionDataset data(env.num_states, env.num_actions);
  for (std::size_t e = 0; e < episodes; ++e) {
    SplitMix64 rng(derive_seed(seed, {stream::kRollout, e}));
    run_episode(env, policy, start, horizon, rng, data);
  }
  return data;
}

struct PsrlConfig {
  std::size_t num_episodes = 100;
  std::size_t episode_horizon = 100;
  std::uint64_t seed = 0;

  void validate() const { detail::require(episode_horizon >= 1, "PSRL horizon must be at least 1"); }
};

struct EpisodeRecord {
  std::size_t episode = 0;
  double discounted_return = 0.0;
  std::size_t dataset_size = 0;  // transitions collected so far
};

struct PsrlResult {
  Policy policy;                           // optimal for the final posterior-mean MDP
  std::vector<TransitionDataset> episodes;  // data of each episode
  std::vector<EpisodeRecord> log;
  MdpPosterior posterior;
};

/**
 * Posterior sampling RL: each episode samples an MDP, acts with its optimal
 * policy in `env`, and folds the episode into the posterior. The returned
 * policy is the optimal one for the final posterior-mean MDP.
 */
inline PsrlResult psrl_train(const MdpPosterior& prior, const TabularMdp& env, std::size_t start,
                             const PsrlConfig& config) {
  config.validate();
  validate_posterior(prior, env);
  PsrlResult result{Policy{}, {}, {}, prior};
  std::size_t collected = 0;
  for (std::size_t e = 0; e < config.num_episodes; ++e) {
    const TabularMdp sampled = sample_mdp(result.posterior, env, derive_seed(config.seed, {stream::kPsrl, e}));
    const Policy pi = policy_iteration(sampled).policy;
    TransitionDataset data(env.num_states, env.num_actions);
    SplitMix64 rng(derive_seed(config.seed, {stream::kRollout, e}));
    const EpisodeOutcome outcome = run_episode(env, pi, start, config.episode_horizon, rng, data);
    collected += outcome.steps;
    result.posterior = update_posterior(result.posterior, data);
    result.log.push_back({e + 1, outcome.discounted_return, collected});
    result.episodes.push_back(std::move(data));
  }
  result.policy = policy_iteration(posterior_mean_mdp(result.posterior, env)).policy;
  return result;
}

}  // namespace vdist
