#pragma once

#include "vdist/agent.hpp"
#include "vdist/bellman.hpp"
#include "vdist/envs.hpp"
#include "vdist/eqr.hpp"
#include "vdist/error.hpp"
#include "vdist/io.hpp"
#include "vdist/oracle.hpp"
#include "vdist/posterior.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace vdist {

inline constexpr const char* kToolVersion = "0.1.0";

enum class ExperimentKind { toy_convergence, beta_sweep, gridworld, contraction, operator_iterate, oracle_only };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::toy_convergence: return "toy_convergence";
    case ExperimentKind::beta_sweep: return "beta_sweep";
    case ExperimentKind::gridworld: return "gridworld";
    case ExperimentKind::contraction: return "contraction";
    case ExperimentKind::operator_iterate: return "operator_iterate";
    case ExperimentKind::oracle_only: return "oracle_only";
  }
  return "oracle_only";
}

namespace detail {

/// Reads one JSON object, filling defaults into `resolved` and rejecting unknown keys.
class ConfigSection {
 public:
  ConfigSection(const Json& src, std::string where) : src_(src), where_(std::move(where)) {
    if (!src_.is_object()) fail(where_ + " must be a JSON object");
  }

  double number(const std::string& key, std::optional<double> fallback = {}) {
    const Json* j = lookup(key, !fallback);
    double v = fallback.value_or(0.0);
    if (j) {
      if (!j->is_number()) fail(path(key) + " must be a number");
      v = j->get<double>();
    }
    resolved[key] = v;
    return v;
  }

  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> fallback = {}) {
    const Json* j = lookup(key, !fallback);
    std::uint64_t v = fallback.value_or(0);
    if (j) v = unsigned_value(*j, path(key));
    resolved[key] = v;
    return v;
  }

  bool flag(const std::string& key, bool fallback) {
    const Json* j = lookup(key, false);
    bool v = fallback;
    if (j) {
      if (!j->is_boolean()) fail(path(key) + " must be true or false");
      v = j->get<bool>();
    }
    resolved[key] = v;
    return v;
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = {}) {
    const Json* j = lookup(key, !fallback);
    std::string v = fallback.value_or("");
    if (j) {
      if (!j->is_string()) fail(path(key) + " must be a string");
      v = j->get<std::string>();
    }
    resolved[key] = v;
    return v;
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = {}) {
    const Json* j = lookup(key, !fallback);
    std::vector<double> v = fallback.value_or(std::vector<double>{});
    if (j) {
      if (!j->is_array()) fail(path(key) + " must be an array of numbers");
      v.clear();
      for (const auto& x : *j) {
        if (!x.is_number()) fail(path(key) + " must be an array of numbers");
        v.push_back(x.get<double>());
      }
    }
    resolved[key] = v;
    return v;
  }

  std::vector<std::uint64_t> counts(const std::string& key, std::optional<std::vector<std::uint64_t>> fallback = {}) {
    const Json* j = lookup(key, !fallback);
    std::vector<std::uint64_t> v = fallback.value_or(std::vector<std::uint64_t>{});
    if (j) {
      if (!j->is_array()) fail(path(key) + " must be an array of non-negative integers");
      v.clear();
      for (const auto& x : *j) v.push_back(unsigned_value(x, path(key)));
    }
    resolved[key] = v;
    return v;
  }

  /// Marks `key` as consumed; the caller stores its resolved form.
  const Json* raw(const std::string& key) { return lookup(key, false); }

  Json finish() const {
    for (const auto& [key, value] : src_.items()) {
      if (!used_.count(key)) fail(where_ + ": unknown field '" + key + "'");
    }
    return resolved;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  Json resolved = Json::object();

 private:
  const Json* lookup(const std::string& key, bool required) {
    used_.insert(key);
    if (!src_.contains(key)) {
      if (required) fail(where_ + ": missing field '" + key + "'");
      return nullptr;
    }
    return &src_.at(key);
  }

  static std::uint64_t unsigned_value(const Json& j, const std::string& where) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (!j.is_number_integer() || j.get<std::int64_t>() < 0) fail(where + " must be a non-negative integer");
    return static_cast<std::uint64_t>(j.get<std::int64_t>());
  }

  const Json& src_;
  std::string where_;
  std::set<std::string> used_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration

struct RandomAcyclicSpec {
  std::size_t num_layers = 2;
  std::size_t states_per_layer = 2;
  std::size_t num_actions = 1;
  double reward_min = -1.0;
  double reward_max = 1.0;
  double discount = 0.9;
};

struct RandomCyclicSpec {
  std::size_t num_states = 5;
  std::size_t num_actions = 2;
  double terminal_prob = 0.1;
  double reward_min = -1.0;
  double reward_max = 1.0;
  double discount = 0.9;
};

using EnvironmentSpec = std::variant<ToyMdpSpec, GridworldSpec, RandomAcyclicSpec, RandomCyclicSpec, TabularMdp>;

struct PosteriorSpec {
  enum class Type { parametric, dirichlet, dirichlet_gaussian, point_mass };
  Type type = Type::point_mass;
  std::vector<TruncatedGaussian> x_prior;
  double dirichlet_alpha = 1.0;
  double reward_prior_mean = 0.0;
  double reward_prior_precision = 1.0;
  double reward_noise_variance = 1.0;
};

struct PolicySpec {
  enum class Type { uniform, optimal, random, psrl, table };
  Type type = Type::uniform;
  Policy table;
};

struct NamedPrior {
  std::string name;
  std::vector<TruncatedGaussian> components;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::oracle_only;
  EnvironmentSpec environment;
  PosteriorSpec posterior;
  PolicySpec policy;

  // EQR runs (toy_convergence, beta_sweep, gridworld).
  EqrConfig eqr;
  std::size_t trailing_window = 1000;
  std::vector<std::size_t> trace_states;
  std::size_t report_state = 0;

  // beta_sweep
  std::vector<double> betas;
  std::vector<NamedPrior> x_priors;
  std::optional<std::pair<std::size_t, std::size_t>> covariance_edge;

  // gridworld
  PsrlConfig psrl;
  std::vector<std::size_t> snapshots;
  std::size_t collection_horizon = 100;

  // contraction
  std::vector<double> gammas;
  std::vector<double> p_orders;
  std::size_t instances_per_setting = 20;
  std::size_t trials_per_instance = 4;
  std::size_t max_states = 6;
  std::size_t max_ensemble = 3;
  std::size_t max_atoms_per_state = 5;

  // operator_iterate
  std::size_t num_quantiles = 100;
  std::size_t ensemble_size = 32;
  double tolerance = 1e-9;
  std::size_t max_iterations = 10000;
  bool exact_reference = true;
  std::size_t max_atoms = 1u << 20;

  // oracle
  std::size_t oracle_samples = 100000;
  std::uint64_t oracle_seed = 0;
  std::size_t oracle_quantiles_m = 100;
  std::size_t histogram_bins = 50;
  bool write_samples = false;

  std::vector<std::uint64_t> seeds;
  std::string output_dir;

  /// Fully resolved echo of every field, defaults included.
  Json resolved;
};

namespace detail {

inline ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::toy_convergence, ExperimentKind::beta_sweep, ExperimentKind::gridworld,
                 ExperimentKind::contraction, ExperimentKind::operator_iterate, ExperimentKind::oracle_only}) {
    if (s == kind_name(k)) return k;
  }
  fail("unknown experiment kind '" + s + "'");
}

inline SymbolicProb parse_symbolic(const Json& j, const std::string& where) {
  using K = SymbolicProb::Kind;
  if (j.is_number()) return {K::constant, j.get<double>()};
  if (!j.is_string()) fail(where + " must be a number or one of x, one_minus_x, beta, one_minus_beta");
  const auto s = j.get<std::string>();
  if (s == "x") return {K::x, 0.0};
  if (s == "one_minus_x") return {K::one_minus_x, 0.0};
  if (s == "beta") return {K::beta, 0.0};
  if (s == "one_minus_beta") return {K::one_minus_beta, 0.0};
  fail(where + ": unknown probability symbol '" + s + "'");
}

inline Json symbolic_to_json(const SymbolicProb& p) {
  using K = SymbolicProb::Kind;
  switch (p.kind) {
    case K::constant: return p.value;
    case K::x: return "x";
    case K::one_minus_x: return "one_minus_x";
    case K::beta: return "beta";
    case K::one_minus_beta: return "one_minus_beta";
  }
  return p.value;
}

inline Json topology_to_json(const ToyMdpSpec& spec) {
  Json states = Json::array();
  for (const auto& st : spec.states) {
    Json edges = Json::array();
    for (const auto& e : st.edges) edges.push_back({{"next", e.next_state}, {"prob", symbolic_to_json(e.prob)}});
    states.push_back({{"reward", st.reward}, {"edges", edges}});
  }
  return {{"terminal_state", spec.terminal_state}, {"states", states}};
}

inline void parse_topology(const Json& j, ToyMdpSpec& spec) {
  ConfigSection sec(j, "environment.topology");
  spec.terminal_state = sec.count("terminal_state");
  const Json* states = sec.raw("states");
  if (!states || !states->is_array() || states->empty()) fail("environment.topology.states must be a non-empty array");
  spec.states.clear();
  for (std::size_t s = 0; s < states->size(); ++s) {
    const std::string where = "environment.topology.states[" + std::to_string(s) + "]";
    ConfigSection st((*states)[s], where);
    ToyState out;
    out.reward = st.number("reward", 0.0);
    if (const Json* edges = st.raw("edges")) {
      if (!edges->is_array()) fail(where + ".edges must be an array");
      for (std::size_t e = 0; e < edges->size(); ++e) {
        const std::string ew = where + ".edges[" + std::to_string(e) + "]";
        ConfigSection es((*edges)[e], ew);
        ToyEdge edge;
        edge.next_state = es.count("next");
        const Json* prob = es.raw("prob");
        if (!prob) fail(ew + ": missing field 'prob'");
        edge.prob = parse_symbolic(*prob, ew + ".prob");
        es.finish();
        out.edges.push_back(edge);
      }
    }
    st.finish();
    spec.states.push_back(std::move(out));
  }
  sec.finish();
}

inline std::vector<TruncatedGaussian> parse_x_prior(const Json& j, const std::string& where) {
  if (j.is_string()) {
    auto named = named_x_prior(j.get<std::string>());
    if (!named) fail(where + ": unknown prior '" + j.get<std::string>() + "'");
    return *named;
  }
  if (!j.is_array() || j.empty()) fail(where + " must be a prior name or an array of components");
  std::vector<TruncatedGaussian> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    ConfigSection c(j[i], where + "[" + std::to_string(i) + "]");
    TruncatedGaussian g;
    g.mean = c.number("mean");
    g.std = c.number("std");
    g.weight = c.number("weight", 1.0);
    g.lower = c.number("lower", 0.0);
    g.upper = c.number("upper", 1.0);
    c.finish();
    out.push_back(g);
  }
  return out;
}

inline Json x_prior_to_json(const std::vector<TruncatedGaussian>& prior) {
  Json out = Json::array();
  for (const auto& c : prior) out.push_back(to_json(c));
  return out;
}

inline std::optional<GridCell> parse_cell(ConfigSection& sec, const std::string& key, std::optional<GridCell> fallback) {
  const Json* j = sec.raw(key);
  if (!j) {
    if (fallback) sec.resolved[key] = {fallback->row, fallback->col};
    return fallback;
  }
  if (!j->is_array() || j->size() != 2 || !(*j)[0].is_number_unsigned() || !(*j)[1].is_number_unsigned()) {
    fail(sec.path(key) + " must be [row, col]");
  }
  GridCell c{(*j)[0].get<std::size_t>(), (*j)[1].get<std::size_t>()};
  sec.resolved[key] = {c.row, c.col};
  return c;
}

inline EnvironmentSpec parse_environment(const Json& j, Json& resolved) {
  ConfigSection sec(j, "environment");
  const std::string type = sec.text("type");
  EnvironmentSpec env;
  if (type == "toy") {
    const double beta = sec.number("beta", 0.0);
    const double discount = sec.number("discount", 0.9);
    ToyMdpSpec spec = ToyMdpSpec::standard(beta, {}, discount);
    if (const Json* topo = sec.raw("topology")) parse_topology(*topo, spec);
    sec.resolved["topology"] = topology_to_json(spec);
    env = spec;
  } else if (type == "gridworld") {
    GridworldSpec g;
    g.num_rooms = sec.count("num_rooms", 3);
    g.room_size = sec.count("room_size", 5);
    const auto doors = sec.counts("door_rows", std::vector<std::uint64_t>{});
    g.door_rows.assign(doors.begin(), doors.end());
    g.success_prob = sec.number("success_prob", 0.95);
    g.start = *parse_cell(sec, "start", GridCell{0, 0});
    g.goal = parse_cell(sec, "goal", std::nullopt);
    g.goal_reward = sec.number("goal_reward", 1.0);
    g.step_reward = sec.number("step_reward", 0.0);
    g.discount = sec.number("discount", 0.99);
    g.validate();
    if (!g.goal) sec.resolved["goal"] = {g.goal_cell().row, g.goal_cell().col};
    env = g;
  } else if (type == "random_acyclic") {
    RandomAcyclicSpec r;
    r.num_layers = sec.count("num_layers", 2);
    r.states_per_layer = sec.count("states_per_layer", 2);
    r.num_actions = sec.count("num_actions", 1);
    r.reward_min = sec.number("reward_min", -1.0);
    r.reward_max = sec.number("reward_max", 1.0);
    r.discount = sec.number("discount", 0.9);
    require(r.num_layers >= 1 && r.states_per_layer >= 1 && r.num_actions >= 1, "random MDP sizes must be positive");
    require(r.reward_min <= r.reward_max, "environment reward range is empty");
    require(r.discount >= 0.0 && r.discount < 1.0, "discount must lie in [0, 1)");
    env = r;
  } else if (type == "random_cyclic") {
    RandomCyclicSpec r;
    r.num_states = sec.count("num_states", 5);
    r.num_actions = sec.count("num_actions", 2);
    r.terminal_prob = sec.number("terminal_prob", 0.1);
    r.reward_min = sec.number("reward_min", -1.0);
    r.reward_max = sec.number("reward_max", 1.0);
    r.discount = sec.number("discount", 0.9);
    require(r.num_states >= 2 && r.num_actions >= 1, "random cyclic MDP needs two states");
    require(r.terminal_prob >= 0.0 && r.terminal_prob < 1.0, "terminal probability must lie in [0, 1)");
    require(r.reward_min <= r.reward_max, "environment reward range is empty");
    require(r.discount >= 0.0 && r.discount < 1.0, "discount must lie in [0, 1)");
    env = r;
  } else if (type == "mdp") {
    const Json* mdp = sec.raw("mdp");
    if (!mdp) fail("environment: missing field 'mdp'");
    TabularMdp m = mdp_from_json(*mdp);
    sec.resolved["mdp"] = to_json(m);
    env = std::move(m);
  } else {
    fail("unknown environment type '" + type + "'");
  }
  resolved = sec.finish();
  return env;
}

inline PosteriorSpec parse_posterior(const Json& j, Json& resolved) {
  ConfigSection sec(j, "posterior");
  const std::string type = sec.text("type");
  PosteriorSpec p;
  if (type == "parametric") {
    p.type = PosteriorSpec::Type::parametric;
    const Json* prior = sec.raw("x_prior");
    if (!prior) fail("posterior: missing field 'x_prior'");
    p.x_prior = parse_x_prior(*prior, "posterior.x_prior");
    ParametricScalarPosterior{p.x_prior, {}}.validate();
    sec.resolved["x_prior"] = x_prior_to_json(p.x_prior);
  } else if (type == "dirichlet" || type == "dirichlet_gaussian") {
    p.type = type == "dirichlet" ? PosteriorSpec::Type::dirichlet : PosteriorSpec::Type::dirichlet_gaussian;
    p.dirichlet_alpha = sec.number("alpha", 1.0);
    require(p.dirichlet_alpha > 0.0, "posterior.alpha must be positive");
    if (p.type == PosteriorSpec::Type::dirichlet_gaussian) {
      p.reward_prior_mean = sec.number("reward_prior_mean", 0.0);
      p.reward_prior_precision = sec.number("reward_prior_precision", 1.0);
      p.reward_noise_variance = sec.number("reward_noise_variance", 1.0);
      require(p.reward_prior_precision > 0.0 && p.reward_noise_variance > 0.0, "reward prior must be proper");
    }
  } else if (type == "point_mass") {
    p.type = PosteriorSpec::Type::point_mass;
  } else {
    fail("unknown posterior type '" + type + "'");
  }
  resolved = sec.finish();
  return p;
}

inline PolicySpec parse_policy(const Json& j, Json& resolved) {
  PolicySpec p;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "uniform") {
      p.type = PolicySpec::Type::uniform;
    } else if (s == "optimal") {
      p.type = PolicySpec::Type::optimal;
    } else if (s == "random") {
      p.type = PolicySpec::Type::random;
    } else if (s == "psrl") {
      p.type = PolicySpec::Type::psrl;
    } else {
      fail("unknown policy '" + s + "'");
    }
    resolved = s;
    return p;
  }
  p.type = PolicySpec::Type::table;
  p.table = policy_from_json(j);
  resolved = to_json(p.table);
  return p;
}

inline StepSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return StepSchedule::constant;
  if (s == "inverse_t") return StepSchedule::inverse_t;
  if (s == "inverse_sqrt_t") return StepSchedule::inverse_sqrt_t;
  fail("unknown step schedule '" + s + "'");
}

inline EqrConfig parse_eqr(ConfigSection& sec, const EqrConfig& defaults) {
  EqrConfig c;
  c.num_quantiles = sec.count("num_quantiles", defaults.num_quantiles);
  c.step_size = sec.number("step_size", defaults.step_size);
  const char* names[] = {"constant", "inverse_t", "inverse_sqrt_t"};
  c.schedule = parse_schedule(sec.text("schedule", names[static_cast<int>(defaults.schedule)]));
  c.max_steps = sec.count("max_steps", defaults.max_steps);
  c.eval_every = sec.count("eval_every", defaults.eval_every);
  c.random_init = sec.flag("random_init", defaults.random_init);
  c.init_scale = sec.number("init_scale", defaults.init_scale);
  c.validate();
  return c;
}

inline std::size_t environment_states(const EnvironmentSpec& env) {
  struct V {
    std::size_t operator()(const ToyMdpSpec& s) const { return s.states.size(); }
    std::size_t operator()(const GridworldSpec& g) const { return g.width() * g.height() + 1; }
    std::size_t operator()(const RandomAcyclicSpec& r) const { return r.num_layers * r.states_per_layer + 1; }
    std::size_t operator()(const RandomCyclicSpec& r) const { return r.num_states; }
    std::size_t operator()(const TabularMdp& m) const { return m.num_states; }
  };
  return std::visit(V{}, env);
}

inline void require_env(bool ok, ExperimentKind kind, const char* what) {
  if (!ok) fail(std::string(kind_name(kind)) + " requires " + what);
}

}  // namespace detail

/// Parses and validates a configuration document; throws ValidationError on any problem.
inline ExperimentConfig parse_experiment_config(const Json& j) {
  using detail::require;
  detail::ConfigSection top(j, "config");
  ExperimentConfig c;
  c.kind = detail::parse_kind(top.text("kind"));
  const ExperimentKind kind = c.kind;

  const Json* env = top.raw("environment");
  if (!env) detail::fail("config: missing field 'environment'");
  Json env_resolved;
  c.environment = detail::parse_environment(*env, env_resolved);
  top.resolved["environment"] = env_resolved;
  const bool toy = std::holds_alternative<ToyMdpSpec>(c.environment);
  const bool grid = std::holds_alternative<GridworldSpec>(c.environment);

  Json default_posterior;
  if (toy) {
    default_posterior = {{"type", "parametric"}, {"x_prior", "single"}};
  } else if (grid) {
    default_posterior = {{"type", "dirichlet_gaussian"}};
  } else {
    default_posterior = {{"type", "dirichlet"}};
  }
  const Json* post = top.raw("posterior");
  Json post_resolved;
  c.posterior = detail::parse_posterior(post ? *post : default_posterior, post_resolved);
  top.resolved["posterior"] = post_resolved;
  if (toy) {
    require(c.posterior.type == PosteriorSpec::Type::parametric, "toy environments need a parametric posterior");
    std::get<ToyMdpSpec>(c.environment).x_prior = c.posterior.x_prior;
    std::get<ToyMdpSpec>(c.environment).validate();
  } else {
    require(c.posterior.type != PosteriorSpec::Type::parametric,
            "parametric posteriors are only defined for toy environments");
  }

  const Json* pol = top.raw("policy");
  Json pol_resolved;
  c.policy = detail::parse_policy(pol ? *pol : Json(grid && kind == ExperimentKind::gridworld ? "psrl" : "uniform"),
                                  pol_resolved);
  top.resolved["policy"] = pol_resolved;
  if (c.policy.type == PolicySpec::Type::psrl) {
    require(kind == ExperimentKind::gridworld, "the psrl policy is only available to gridworld experiments");
  }
  if (c.policy.type == PolicySpec::Type::table) {
    require(c.policy.table.probs.rows() == static_cast<Eigen::Index>(detail::environment_states(c.environment)),
            "policy table has the wrong number of states");
  }

  const Json empty = Json::object();
  const Json* alg = top.raw("algorithm");
  detail::ConfigSection a(alg ? *alg : empty, "algorithm");
  switch (kind) {
    case ExperimentKind::toy_convergence:
    case ExperimentKind::beta_sweep: {
      detail::require_env(toy, kind, "a toy environment");
      EqrConfig d;
      d.step_size = 0.5;
      c.eqr = detail::parse_eqr(a, d);
      c.report_state = a.count("report_state", 0);
      require(c.report_state < detail::environment_states(c.environment), "report_state out of range");
      if (kind == ExperimentKind::toy_convergence) {
        c.trailing_window = a.count("trailing_window", 1000);
        require(c.trailing_window >= 2 && c.trailing_window <= c.eqr.max_steps,
                "trailing_window must lie in [2, max_steps]");
        const auto ts = a.counts("trace_states", std::vector<std::uint64_t>{c.report_state});
        c.trace_states.assign(ts.begin(), ts.end());
        for (auto s : c.trace_states) require(s < detail::environment_states(c.environment), "trace state out of range");
      } else {
        c.betas = a.numbers("betas", std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
        require(!c.betas.empty(), "betas must not be empty");
        for (double b : c.betas) require(b >= 0.0 && b <= 1.0, "beta must lie in [0, 1]");
        if (const Json* xp = a.raw("x_priors")) {
          require(xp->is_array() && !xp->empty(), "algorithm.x_priors must be a non-empty array");
          Json out = Json::array();
          for (std::size_t i = 0; i < xp->size(); ++i) {
            const Json& e = (*xp)[i];
            NamedPrior np;
            if (e.is_string()) {
              np.name = e.get<std::string>();
              np.components = detail::parse_x_prior(e, "algorithm.x_priors[" + std::to_string(i) + "]");
            } else {
              detail::ConfigSection es(e, "algorithm.x_priors[" + std::to_string(i) + "]");
              np.name = es.text("name");
              const Json* comps = es.raw("components");
              if (!comps) detail::fail("algorithm.x_priors entries need 'components'");
              np.components = detail::parse_x_prior(*comps, es.path("components"));
              es.finish();
            }
            ParametricScalarPosterior{np.components, {}}.validate();
            out.push_back({{"name", np.name}, {"components", detail::x_prior_to_json(np.components)}});
            c.x_priors.push_back(std::move(np));
          }
          a.resolved["x_priors"] = out;
        } else {
          c.x_priors.push_back({"posterior", c.posterior.x_prior});
          a.resolved["x_priors"] = Json::array(
              {{{"name", "posterior"}, {"components", detail::x_prior_to_json(c.posterior.x_prior)}}});
        }
        if (const Json* ce = a.raw("covariance_edge")) {
          if (!ce->is_null()) {
            require(ce->is_array() && ce->size() == 2 && (*ce)[0].is_number_unsigned() && (*ce)[1].is_number_unsigned(),
                    "algorithm.covariance_edge must be [state, next_state]");
            c.covariance_edge = {{(*ce)[0].get<std::size_t>(), (*ce)[1].get<std::size_t>()}};
            const std::size_t n = detail::environment_states(c.environment);
            require(c.covariance_edge->first < n && c.covariance_edge->second < n, "covariance_edge out of range");
          }
        }
        a.resolved["covariance_edge"] =
            c.covariance_edge ? Json{c.covariance_edge->first, c.covariance_edge->second} : Json(nullptr);
      }
      break;
    }
    case ExperimentKind::gridworld: {
      detail::require_env(grid, kind, "a gridworld environment");
      require(c.posterior.type == PosteriorSpec::Type::dirichlet ||
                  c.posterior.type == PosteriorSpec::Type::dirichlet_gaussian,
              "gridworld experiments need a Dirichlet posterior");
      EqrConfig d;
      d.num_quantiles = 100;
      d.step_size = 20.0;
      d.max_steps = 20000;
      d.eval_every = 20000;
      c.eqr = detail::parse_eqr(a, d);
      c.psrl.num_episodes = a.count("psrl_episodes", 500);
      c.psrl.episode_horizon = a.count("psrl_horizon", 100);
      c.psrl.validate();
      const auto snaps = a.counts("snapshots", std::vector<std::uint64_t>{1, 10, 100});
      c.snapshots.assign(snaps.begin(), snaps.end());
      require(!c.snapshots.empty(), "snapshots must not be empty");
      for (std::size_t i = 0; i < c.snapshots.size(); ++i) {
        require(c.snapshots[i] >= 1 && (i == 0 || c.snapshots[i] > c.snapshots[i - 1]),
                "snapshots must be positive and strictly increasing");
      }
      c.collection_horizon = a.count("collection_horizon", 100);
      require(c.collection_horizon >= 1, "collection_horizon must be at least 1");
      break;
    }
    case ExperimentKind::contraction: {
      detail::require_env(std::holds_alternative<RandomAcyclicSpec>(c.environment), kind,
                          "a random_acyclic environment (its sizes act as upper bounds)");
      require(c.posterior.type == PosteriorSpec::Type::dirichlet, "contraction experiments need a Dirichlet posterior");
      c.gammas = a.numbers("gammas", std::vector<double>{0.5, 0.9, 0.99});
      c.p_orders = a.numbers("p_orders", std::vector<double>{1.0, 2.0});
      c.instances_per_setting = a.count("instances_per_setting", 20);
      c.trials_per_instance = a.count("trials_per_instance", 4);
      c.max_states = a.count("max_states", 6);
      c.max_ensemble = a.count("max_ensemble", 3);
      c.max_atoms_per_state = a.count("max_atoms_per_state", 5);
      c.max_atoms = a.count("max_atoms", 1u << 20);
      require(!c.gammas.empty() && !c.p_orders.empty(), "gammas and p_orders must not be empty");
      for (double g : c.gammas) require(g > 0.0 && g < 1.0, "contraction gammas must lie in (0, 1)");
      for (double p : c.p_orders) require(p >= 1.0, "Wasserstein order must be at least 1");
      require(c.instances_per_setting >= 1 && c.trials_per_instance >= 1, "need at least one trial");
      require(c.max_states >= 2 && c.max_ensemble >= 1 && c.max_atoms_per_state >= 1,
              "contraction size limits must be positive");
      break;
    }
    case ExperimentKind::operator_iterate: {
      c.num_quantiles = a.count("num_quantiles", 100);
      c.ensemble_size = a.count("ensemble_size", 32);
      c.tolerance = a.number("tolerance", 1e-9);
      c.max_iterations = a.count("max_iterations", 10000);
      c.exact_reference = a.flag("exact_reference", true);
      c.max_atoms = a.count("max_atoms", 1u << 20);
      require(c.num_quantiles >= 1 && c.ensemble_size >= 1 && c.max_iterations >= 1, "operator sizes must be positive");
      require(c.tolerance > 0.0, "tolerance must be positive");
      break;
    }
    case ExperimentKind::oracle_only: {
      c.write_samples = a.flag("write_samples", false);
      break;
    }
  }
  top.resolved["algorithm"] = a.finish();

  const Json* orc = top.raw("oracle");
  detail::ConfigSection o(orc ? *orc : empty, "oracle");
  const bool gridworld_kind = kind == ExperimentKind::gridworld;
  c.oracle_samples = o.count("num_samples", gridworld_kind ? 10000 : 100000);
  c.oracle_seed = o.count("seed", 0);
  c.oracle_quantiles_m = o.count("num_quantiles", gridworld_kind || kind == ExperimentKind::oracle_only
                                                       ? 100 : c.eqr.num_quantiles);
  c.histogram_bins = o.count("histogram_bins", 50);
  require(c.oracle_samples >= 2, "oracle.num_samples must be at least 2");
  require(c.oracle_quantiles_m >= 1 && c.histogram_bins >= 1, "oracle sizes must be positive");
  if (kind == ExperimentKind::toy_convergence || kind == ExperimentKind::beta_sweep || gridworld_kind) {
    require(c.oracle_quantiles_m == c.eqr.num_quantiles, "oracle.num_quantiles must equal algorithm.num_quantiles");
  }
  top.resolved["oracle"] = o.finish();

  c.seeds = top.counts("seeds");
  require(!c.seeds.empty(), "seeds must not be empty");
  require(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(), "seeds must be distinct");
  c.output_dir = top.text("output_dir", std::string("out/") + kind_name(kind));
  top.finish();
  c.resolved = top.resolved;
  c.resolved["kind"] = kind_name(kind);
  return c;
}

/// Re-resolves after command-line overrides so the echo matches what runs.
inline ExperimentConfig apply_overrides(const ExperimentConfig& config, std::optional<std::uint64_t> seed,
                                        std::optional<std::string> output_dir) {
  Json j = config.resolved;
  if (seed) j["seeds"] = Json::array({*seed});
  if (output_dir) j["output_dir"] = *output_dir;
  return parse_experiment_config(j);
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) detail::fail("cannot read config file " + path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    detail::fail("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Running

struct ExperimentOutcome {
  Json summary;
  std::vector<std::string> violations;
  std::filesystem::path output_dir;

  bool ok() const { return violations.empty(); }
  int exit_code() const { return ok() ? 0 : 3; }
};

namespace detail {

inline double mean_of(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  return xs.empty() ? 0.0 : m / static_cast<double>(xs.size());
}

/// Standard error of the mean across seeds (0 for a single seed).
inline double standard_error_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
}

inline std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

inline TabularMdp instantiate_environment(const EnvironmentSpec& env, std::uint64_t seed) {
  struct V {
    std::uint64_t seed;
    TabularMdp operator()(const ToyMdpSpec& s) const {
      return build_toy_mdp(s, ParametricScalarPosterior{s.x_prior, {}}.mean());
    }
    TabularMdp operator()(const GridworldSpec& g) const { return build_gridworld(g).mdp; }
    TabularMdp operator()(const RandomAcyclicSpec& r) const {
      return random_acyclic_mdp(r.num_layers, r.states_per_layer, r.num_actions, r.reward_min, r.reward_max, r.discount,
                                derive_seed(seed, {stream::kInstance}));
    }
    TabularMdp operator()(const RandomCyclicSpec& r) const {
      return random_cyclic_mdp(r.num_states, r.num_actions, r.terminal_prob, r.reward_min, r.reward_max, r.discount,
                               derive_seed(seed, {stream::kInstance}));
    }
    TabularMdp operator()(const TabularMdp& m) const { return m; }
  };
  return std::visit(V{seed}, env);
}

/// Prior over MDPs sharing the structure of `support`.
inline MdpPosterior make_posterior(const PosteriorSpec& spec, const EnvironmentSpec& env, const TabularMdp& support) {
  switch (spec.type) {
    case PosteriorSpec::Type::parametric: return toy_posterior(std::get<ToyMdpSpec>(env));
    case PosteriorSpec::Type::dirichlet: return DirichletPosterior::from_support(support, spec.dirichlet_alpha);
    case PosteriorSpec::Type::dirichlet_gaussian: {
      RewardPosterior r = RewardPosterior::standard(support.num_states, support.num_actions);
      r.mean.setConstant(spec.reward_prior_mean);
      r.mean.row(support.terminal_state).setZero();
      r.prior_mean = spec.reward_prior_mean;
      r.prior_precision = spec.reward_prior_precision;
      r.noise_variance = spec.reward_noise_variance;
      return DirichletGaussianPosterior{DirichletPosterior::from_support(support, spec.dirichlet_alpha), r};
    }
    case PosteriorSpec::Type::point_mass: return PointMassPosterior{support};
  }
  return PointMassPosterior{support};
}

inline Policy make_policy(const PolicySpec& spec, const TabularMdp& mdp, std::uint64_t seed) {
  switch (spec.type) {
    case PolicySpec::Type::uniform: return Policy::uniform(mdp.num_states, mdp.num_actions);
    case PolicySpec::Type::optimal: return policy_iteration(mdp).policy;
    case PolicySpec::Type::random: {
      SplitMix64 rng(derive_seed(seed, {stream::kInstance, 1}));
      return random_policy(mdp.num_states, mdp.num_actions, rng);
    }
    case PolicySpec::Type::table:
      require(spec.table.probs.cols() == static_cast<Eigen::Index>(mdp.num_actions), "policy table has the wrong action count");
      return spec.table;
    case PolicySpec::Type::psrl: break;
  }
  fail("policy must be resolved by the experiment");
}

inline void check_quantiles(const QuantileValueFunction& q, std::size_t terminal, const std::string& label,
                            std::vector<std::string>& violations) {
  if (!q.terminal_is_zero(terminal)) violations.push_back(label + ": terminal quantiles are not the point mass at 0");
}

inline Json quantile_row_json(std::span<const double> row) { return std::vector<double>(row.begin(), row.end()); }

class Runner {
 public:
  explicit Runner(const ExperimentConfig& config) : c_(config), out_(config.output_dir) {}

  ExperimentOutcome run() {
    Json per_seed = Json::object();
    Json aggregate;
    switch (c_.kind) {
      case ExperimentKind::toy_convergence: aggregate = toy_convergence(per_seed); break;
      case ExperimentKind::beta_sweep: aggregate = beta_sweep(per_seed); break;
      case ExperimentKind::gridworld: aggregate = gridworld(per_seed); break;
      case ExperimentKind::contraction: aggregate = contraction(per_seed); break;
      case ExperimentKind::operator_iterate: aggregate = operator_iterate(per_seed); break;
      case ExperimentKind::oracle_only: aggregate = oracle_only(per_seed); break;
    }
    ExperimentOutcome outcome;
    outcome.violations = violations_;
    outcome.output_dir = out_;
    outcome.summary = {{"kind", kind_name(c_.kind)},
                       {"seeds", c_.seeds},
                       {"per_seed", per_seed},
                       {"aggregate", aggregate},
                       {"violations", violations_}};
    write("summary.json", outcome.summary.dump(2) + "\n");
    return outcome;
  }

 private:
  void write(const std::string& rel, const std::string& contents) const { write_file_atomic(out_ / rel, contents); }

  // -- toy_convergence ------------------------------------------------------

  Json toy_convergence(Json& per_seed) {
    const ToyMdpSpec& spec = std::get<ToyMdpSpec>(c_.environment);
    const ParametricScalarPosterior post = toy_posterior(spec);
    const TabularMdp base = instantiate_environment(c_.environment, 0);
    const Policy pi = Policy::uniform(base.num_states, base.num_actions);
    const ValueSampleSet samples = sample_value_distribution(post, base, pi, c_.oracle_samples, c_.oracle_seed, "toy");
    const QuantileValueFunction oq = oracle_quantiles(samples, c_.eqr.num_quantiles);
    write("oracle_quantiles.csv", quantiles_to_csv(oq));
    const std::size_t rs = c_.report_state;
    const auto rs_row = samples.values.row(static_cast<Eigen::Index>(rs));
    const double range = rs_row.maxCoeff() - rs_row.minCoeff();
    const std::size_t m = c_.eqr.num_quantiles;

    std::map<std::size_t, std::vector<double>> w1_by_step;
    std::vector<double> finals;
    for (std::uint64_t seed : c_.seeds) {
      EqrConfig cfg = c_.eqr;
      cfg.seed = seed;
      cfg.eval_every = 1;
      auto [q, trace] = run_eqr(post, base, pi, cfg, oq);
      check_quantiles(q, base.terminal_state, "seed " + std::to_string(seed), violations_);

      EqrTrace thinned;
      CsvWriter w1csv({"step", "w1"});
      for (const auto& snap : trace.snapshots) {
        if (snap.step % c_.eqr.eval_every != 0 && snap.step != cfg.max_steps) continue;
        const double w = wasserstein(1.0, snap.value.row(rs), oq.row(rs));
        w1csv.add(snap.step, w);
        w1_by_step[snap.step].push_back(w);
        thinned.snapshots.push_back(snap);
      }
      const std::string dir = seed_dir(seed) + "/";
      write(dir + "trace.csv", trace_to_csv(thinned, c_.trace_states));
      write(dir + "w1.csv", w1csv.str());

      // Per-quantile error statistics over the trailing window of steps.
      const std::size_t total = trace.snapshots.size();
      const std::size_t window = std::min(c_.trailing_window, total);
      CsvWriter tcsv({"quantile", "tau_hat", "mean_error", "std_error", "abs_mean_over_std"});
      Json trailing = Json::array();
      for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> errs;
        for (std::size_t k = total - window; k < total; ++k) errs.push_back((*trace.snapshots[k].error)(rs, i));
        const double mu = mean_of(errs);
        double ss = 0.0;
        for (double e : errs) ss += (e - mu) * (e - mu);
        const double sd = std::sqrt(ss / static_cast<double>(errs.size() - 1));
        const double ratio = sd > 0.0 ? std::abs(mu) / sd : (mu == 0.0 ? 0.0 : HUGE_VAL);
        tcsv.add(i, tau_hat(i, m), mu, sd, ratio);
        trailing.push_back({{"quantile", i}, {"mean_error", mu}, {"std_error", sd}, {"abs_mean_over_std", ratio}});
      }
      write(dir + "trailing.csv", tcsv.str());
      write(dir + "final_quantiles.csv", quantiles_to_csv(q));

      const double final_w1 = wasserstein(1.0, q.row(rs), oq.row(rs));
      finals.push_back(final_w1);
      per_seed[std::to_string(seed)] = {{"final_w1", final_w1},
                                        {"final_w1_over_range", range > 0.0 ? final_w1 / range : 0.0},
                                        {"trailing", trailing},
                                        {"final_quantiles", quantile_row_json(q.row(rs))}};
    }

    CsvWriter agg({"step", "mean_w1", "se_w1"});
    for (const auto& [step, ws] : w1_by_step) agg.add(step, mean_of(ws), standard_error_of(ws));
    write("w1_trace.csv", agg.str());
    return {{"report_state", rs},
            {"oracle_value_range", range},
            {"oracle_mean", samples.mean(rs)},
            {"oracle_quantiles", quantile_row_json(oq.row(rs))},
            {"final_w1_mean", mean_of(finals)},
            {"final_w1_se", standard_error_of(finals)}};
  }

  // -- beta_sweep -----------------------------------------------------------

  struct SweepCell {
    std::string prior;
    double beta = 0.0;
    ParametricScalarPosterior posterior;
    TabularMdp base;
    QuantileValueFunction oracle;
    double range = 0.0;
    std::optional<double> covariance;
    std::vector<double> w1;
  };

  Json beta_sweep(Json& per_seed) {
    std::vector<SweepCell> cells;
    const std::size_t rs = c_.report_state;
    for (const auto& prior : c_.x_priors) {
      for (double beta : c_.betas) {
        ToyMdpSpec spec = std::get<ToyMdpSpec>(c_.environment);
        spec.beta = beta;
        spec.x_prior = prior.components;
        SweepCell cell{prior.name, beta, toy_posterior(spec), instantiate_environment(spec, 0), {}, 0.0, {}, {}};
        const Policy pi = Policy::uniform(cell.base.num_states, 1);
        const ValueSampleSet samples =
            sample_value_distribution(cell.posterior, cell.base, pi, c_.oracle_samples, c_.oracle_seed, "toy");
        cell.oracle = oracle_quantiles(samples, c_.eqr.num_quantiles);
        const auto row = samples.values.row(static_cast<Eigen::Index>(rs));
        cell.range = row.maxCoeff() - row.minCoeff();
        if (c_.covariance_edge) {
          // Covariance between P(next | state) and V(next) across posterior draws.
          const auto [s, t] = *c_.covariance_edge;
          std::vector<double> p(samples.num_samples());
          for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] = sample_mdp(cell.posterior, cell.base, oracle_sample_seed(c_.oracle_seed, k)).prob(s, 0, t);
          }
          const auto v = samples.state(t);
          const double mp = mean_of(p);
          const double mv = samples.mean(t);
          double acc = 0.0;
          for (std::size_t k = 0; k < p.size(); ++k) acc += (p[k] - mp) * (v[k] - mv);
          cell.covariance = acc / static_cast<double>(p.size() - 1);
        }
        cells.push_back(std::move(cell));
      }
    }
    for (std::uint64_t seed : c_.seeds) {
      CsvWriter csv({"x_prior", "beta", "w1"});
      Json rows = Json::array();
      for (auto& cell : cells) {
        EqrConfig cfg = c_.eqr;
        cfg.seed = seed;
        cfg.eval_every = cfg.max_steps;
        const Policy pi = Policy::uniform(cell.base.num_states, 1);
        const auto [q, trace] = run_eqr(cell.posterior, cell.base, pi, cfg);
        check_quantiles(q, cell.base.terminal_state, "seed " + std::to_string(seed), violations_);
        const double w = wasserstein(1.0, q.row(rs), cell.oracle.row(rs));
        cell.w1.push_back(w);
        csv.add(cell.prior, cell.beta, w);
        rows.push_back({{"x_prior", cell.prior}, {"beta", cell.beta}, {"w1", w}});
      }
      write(seed_dir(seed) + "/final_w1.csv", csv.str());
      per_seed[std::to_string(seed)] = rows;
    }
    std::vector<std::string> header{"x_prior", "beta", "mean_w1", "se_w1", "value_range"};
    if (c_.covariance_edge) header.push_back("covariance");
    CsvWriter agg(header);
    Json cells_json = Json::array();
    for (const auto& cell : cells) {
      if (cell.covariance) {
        agg.add(cell.prior, cell.beta, mean_of(cell.w1), standard_error_of(cell.w1), cell.range, *cell.covariance);
      } else {
        agg.add(cell.prior, cell.beta, mean_of(cell.w1), standard_error_of(cell.w1), cell.range);
      }
      Json jc = {{"x_prior", cell.prior},        {"beta", cell.beta},
                 {"mean_w1", mean_of(cell.w1)}, {"se_w1", standard_error_of(cell.w1)},
                 {"value_range", cell.range}};
      if (cell.covariance) jc["covariance"] = *cell.covariance;
      cells_json.push_back(jc);
    }
    write("beta_sweep.csv", agg.str());
    return {{"report_state", rs}, {"cells", cells_json}};
  }

  // -- gridworld ------------------------------------------------------------

  Json gridworld(Json& per_seed) {
    const GridworldSpec& spec = std::get<GridworldSpec>(c_.environment);
    const Gridworld g = build_gridworld(spec);
    const MdpPosterior prior = make_posterior(c_.posterior, c_.environment, gridworld_support(g));
    const double optimal = policy_iteration(g.mdp).value(static_cast<Eigen::Index>(g.start_state));
    const std::size_t start = g.start_state;
    const std::size_t m = c_.eqr.num_quantiles;
    std::map<std::size_t, std::vector<double>> w1s, spreads;

    for (std::uint64_t seed : c_.seeds) {
      const std::string dir = seed_dir(seed) + "/";
      Policy pi;
      Json psrl_json = nullptr;
      if (c_.policy.type == PolicySpec::Type::psrl) {
        PsrlConfig pc = c_.psrl;
        pc.seed = derive_seed(seed, {stream::kPsrl});
        const PsrlResult trained = psrl_train(prior, g.mdp, start, pc);
        pi = trained.policy;
        CsvWriter log({"episode", "discounted_return", "dataset_size"});
        for (const auto& r : trained.log) log.add(r.episode, r.discounted_return, r.dataset_size);
        write(dir + "psrl_log.csv", log.str());
      } else {
        pi = make_policy(c_.policy, g.mdp, seed);
      }
      const double policy_value = solve_value(g.mdp, pi)(static_cast<Eigen::Index>(start));
      write(dir + "policy.json", to_json(pi).dump() + "\n");

      MdpPosterior post = prior;
      std::size_t collected = 0;
      std::size_t episode = 0;
      const std::uint64_t collect_seed = derive_seed(seed, {stream::kRollout});
      CsvWriter snaps({"episode", "dataset_size", "oracle_mean", "oracle_std", "oracle_spread", "policy_value", "w1"});
      Json snap_json = Json::array();
      for (std::size_t target : c_.snapshots) {
        for (; episode < target; ++episode) {
          TransitionDataset data(g.mdp.num_states, g.mdp.num_actions);
          SplitMix64 rng(derive_seed(collect_seed, {stream::kRollout, episode}));
          collected += run_episode(g.mdp, pi, start, c_.collection_horizon, rng, data).steps;
          post = update_posterior(post, data);
        }
        const ValueSampleSet samples = sample_value_distribution(
            post, g.mdp, pi, c_.oracle_samples, derive_seed(seed, {stream::kOracle, target}), "gridworld");
        const QuantileValueFunction oq = oracle_quantiles(samples, m);
        EqrConfig cfg = c_.eqr;
        cfg.seed = derive_seed(seed, {stream::kEqrStep, target});
        cfg.eval_every = cfg.max_steps;
        const auto [q, trace] = run_eqr(post, g.mdp, pi, cfg);
        check_quantiles(q, g.mdp.terminal_state, "seed " + std::to_string(seed) + " episode " + std::to_string(target),
                        violations_);

        const std::string prefix = dir + "episode_" + std::to_string(target) + "_";
        const Histogram h = histogram(samples.state(start), c_.histogram_bins);
        CsvWriter hist({"bin_lo", "bin_hi", "count"});
        for (std::size_t b = 0; b < h.counts.size(); ++b) hist.add(h.edges[b], h.edges[b + 1], h.counts[b]);
        write(prefix + "histogram.csv", hist.str());
        CsvWriter qcsv({"quantile", "tau_hat", "oracle", "eqr"});
        for (std::size_t i = 0; i < m; ++i) qcsv.add(i, tau_hat(i, m), oq.row(start)[i], q.row(start)[i]);
        write(prefix + "quantiles.csv", qcsv.str());

        const double w = wasserstein(1.0, q.row(start), oq.row(start));
        const double spread = oq.row(start)[m - 1] - oq.row(start)[0];
        w1s[target].push_back(w);
        spreads[target].push_back(spread);
        snaps.add(target, collected, samples.mean(start), samples.stddev(start), spread, policy_value, w);
        snap_json.push_back({{"episode", target},
                             {"dataset_size", collected},
                             {"oracle_mean", samples.mean(start)},
                             {"oracle_std", samples.stddev(start)},
                             {"oracle_spread", spread},
                             {"w1", w}});
      }
      write(dir + "snapshots.csv", snaps.str());
      per_seed[std::to_string(seed)] = {{"policy_value", policy_value}, {"snapshots", snap_json}};
    }
    CsvWriter agg({"episode", "mean_w1", "se_w1", "mean_spread", "se_spread"});
    Json snaps = Json::array();
    for (std::size_t target : c_.snapshots) {
      agg.add(target, mean_of(w1s[target]), standard_error_of(w1s[target]), mean_of(spreads[target]),
              standard_error_of(spreads[target]));
      snaps.push_back({{"episode", target}, {"mean_w1", mean_of(w1s[target])}, {"mean_spread", mean_of(spreads[target])}});
    }
    write("snapshots.csv", agg.str());
    return {{"start_state", start}, {"optimal_value", optimal}, {"snapshots", snaps}};
  }

  // -- contraction ----------------------------------------------------------

  Json contraction(Json& per_seed) {
    const auto& env = std::get<RandomAcyclicSpec>(c_.environment);
    double max_ratio = 0.0;
    std::size_t total_trials = 0;
    for (std::uint64_t seed : c_.seeds) {
      CsvWriter csv({"gamma", "p", "instance", "trial", "num_states", "ensemble_size", "w_pre", "w_post", "ratio"});
      double seed_max = 0.0;
      std::size_t seed_trials = 0;
      for (std::size_t gi = 0; gi < c_.gammas.size(); ++gi) {
        for (std::size_t pi = 0; pi < c_.p_orders.size(); ++pi) {
          for (std::size_t inst = 0; inst < c_.instances_per_setting; ++inst) {
            const std::uint64_t iseed = derive_seed(seed, {stream::kInstance, gi, pi, inst});
            SplitMix64 rng(iseed);
            const std::size_t layers = 1 + rng() % std::min<std::size_t>(env.num_layers, c_.max_states - 1);
            const std::size_t per_layer =
                1 + rng() % std::min<std::size_t>(env.states_per_layer, (c_.max_states - 1) / layers);
            const std::size_t actions = 1 + rng() % env.num_actions;
            const std::size_t k = 1 + rng() % c_.max_ensemble;
            const TabularMdp base =
                random_acyclic_mdp(layers, per_layer, actions, env.reward_min, env.reward_max, c_.gammas[gi], iseed);
            const ModelEnsemble ens = ModelEnsemble::sample(
                DirichletPosterior::from_support(base, c_.posterior.dirichlet_alpha), base, k, iseed);
            const Policy policy = c_.policy.type == PolicySpec::Type::uniform
                                      ? Policy::uniform(base.num_states, actions)
                                      : random_policy(base.num_states, actions, rng);
            const ContractionReport rep = certify_contraction(ens, policy, c_.p_orders[pi], c_.trials_per_instance,
                                                              iseed, c_.max_atoms_per_state, {Coupling::comonotone, c_.max_atoms});
            for (const auto& t : rep.trials) {
              csv.add(c_.gammas[gi], c_.p_orders[pi], inst, t.trial, t.state_space_size, k, t.w_pre, t.w_post, t.ratio);
            }
            seed_max = std::max(seed_max, rep.max_ratio);
            seed_trials += rep.trials.size();
            if (rep.violated) {
              violations_.push_back("seed " + std::to_string(seed) + ": contraction ratio " +
                                    format_double(rep.max_ratio) + " at gamma " + format_double(c_.gammas[gi]) +
                                    ", p " + format_double(c_.p_orders[pi]));
            }
          }
        }
      }
      write(seed_dir(seed) + "/contraction.csv", csv.str());
      per_seed[std::to_string(seed)] = {{"max_ratio", seed_max}, {"trials", seed_trials}};
      max_ratio = std::max(max_ratio, seed_max);
      total_trials += seed_trials;
    }
    return {{"max_ratio", max_ratio}, {"trials", total_trials}, {"tolerance", 1e-9}};
  }

  // -- operator_iterate -----------------------------------------------------

  Json operator_iterate(Json& per_seed) {
    std::vector<double> iters, exact_w1;
    for (std::uint64_t seed : c_.seeds) {
      const TabularMdp base = instantiate_environment(c_.environment, seed);
      const MdpPosterior post = make_posterior(c_.posterior, c_.environment, base);
      const Policy pi = make_policy(c_.policy, base, seed);
      const ModelEnsemble ens = ModelEnsemble::sample(post, base, c_.ensemble_size, derive_seed(seed, {stream::kEnsemble}));
      const std::size_t n = base.num_states;
      const ProjectedIterationResult res =
          iterate_projected(QuantileValueFunction(n, c_.num_quantiles), ens, pi, c_.tolerance, c_.max_iterations);
      check_quantiles(res.value, base.terminal_state, "seed " + std::to_string(seed), violations_);

      const std::string dir = seed_dir(seed) + "/";
      CsvWriter csv({"iteration", "successive_w1"});
      for (std::size_t k = 0; k < res.successive_distances.size(); ++k) csv.add(k + 1, res.successive_distances[k]);
      write(dir + "iterations.csv", csv.str());
      write(dir + "quantiles.csv", quantiles_to_csv(res.value));

      const double gamma = base.discount;
      const double d0 = res.successive_distances.front();
      std::size_t bound = 50;
      if (d0 > c_.tolerance && gamma > 0.0) {
        bound += static_cast<std::size_t>(std::ceil(std::log(c_.tolerance / d0) / std::log(gamma)));
      }
      Json result = {{"iterations", res.iterations},
                     {"converged", res.converged},
                     {"initial_distance", d0},
                     {"iteration_bound", bound},
                     {"within_bound", res.converged && res.iterations <= bound},
                     {"acyclic", is_acyclic(base)}};
      iters.push_back(static_cast<double>(res.iterations));
      if (c_.exact_reference) {
        try {
          const OperatorConfig oc{Coupling::comonotone, c_.max_atoms};
          AtomValueFunction mu = zero_atoms(n);
          std::size_t k = 0;
          for (; k < c_.max_iterations; ++k) {
            AtomValueFunction next = apply_operator_exact(mu, ens, pi, oc);
            const double d = sup_wasserstein(1.0, mu, next);
            mu = std::move(next);
            if (d <= c_.tolerance) break;
          }
          double lo = 0.0;
          double hi = 0.0;
          for (const auto& d : mu) {
            lo = std::min(lo, d.min());
            hi = std::max(hi, d.max());
          }
          double w = 0.0;
          for (std::size_t s = 0; s < n; ++s) w = std::max(w, wasserstein(1.0, res.value.distribution(s).to_atoms(), mu[s]));
          result["exact_iterations"] = k + 1;
          result["exact_w1"] = w;
          result["exact_value_range"] = hi - lo;
          result["exact_bound"] = 2.0 * (hi - lo) / static_cast<double>(c_.num_quantiles);
          exact_w1.push_back(w);
          CsvWriter ecsv({"state", "value", "weight"});
          for (std::size_t s = 0; s < n; ++s) {
            for (const auto& a : mu[s].atoms()) ecsv.add(s, a.value, a.weight);
          }
          write(dir + "exact_atoms.csv", ecsv.str());
        } catch (const AtomLimitError& e) {
          result["exact_error"] = e.what();
        }
      }
      per_seed[std::to_string(seed)] = result;
    }
    Json agg = {{"mean_iterations", mean_of(iters)}};
    if (!exact_w1.empty()) agg["mean_exact_w1"] = mean_of(exact_w1);
    return agg;
  }

  // -- oracle_only ----------------------------------------------------------

  Json oracle_only(Json& per_seed) {
    for (std::uint64_t seed : c_.seeds) {
      const TabularMdp base = instantiate_environment(c_.environment, seed);
      const MdpPosterior post = make_posterior(c_.posterior, c_.environment, base);
      const Policy pi = make_policy(c_.policy, base, seed);
      const ValueSampleSet samples = sample_value_distribution(post, base, pi, c_.oracle_samples, seed, "oracle_only");
      const std::string dir = seed_dir(seed) + "/";
      write(dir + "quantiles.csv", quantiles_to_csv(oracle_quantiles(samples, c_.oracle_quantiles_m)));
      if (c_.write_samples) write(dir + "samples.csv", samples_to_csv(samples));
      std::vector<std::size_t> states;
      for (std::size_t s = 0; s < base.num_states; ++s) states.push_back(s);
      write(dir + "histograms.json", histogram_json(samples, c_.histogram_bins, states).dump() + "\n");
      const MeanIdentityReport r = mean_identity_report(samples, solve_value(posterior_mean_mdp(post, base), pi));
      CsvWriter csv({"state", "sample_mean", "mean_model_value", "gap", "standard_error", "flagged"});
      std::size_t flagged = 0;
      for (std::size_t s = 0; s < base.num_states; ++s) {
        const auto i = static_cast<Eigen::Index>(s);
        csv.add(s, r.sample_mean(i), r.mean_model_value(i), r.gap(i), r.standard_error(i), r.flagged[s] ? 1 : 0);
        flagged += r.flagged[s] ? 1 : 0;
        if (!std::isfinite(r.sample_mean(i))) violations_.push_back("seed " + std::to_string(seed) + ": non-finite value");
      }
      write(dir + "mean_identity.csv", csv.str());
      std::vector<double> means(r.sample_mean.data(), r.sample_mean.data() + r.sample_mean.size());
      per_seed[std::to_string(seed)] = {{"acyclic", is_acyclic(base)}, {"flagged_states", flagged}, {"sample_mean", means}};
    }
    return Json::object();
  }

  const ExperimentConfig& c_;
  std::filesystem::path out_;
  std::vector<std::string> violations_;
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/**
 * Runs an experiment and writes its artifacts under config.output_dir:
 * config.json (resolved echo), per-seed CSVs in seed_<k>/, aggregate CSVs,
 * summary.json, and metadata.json, the only file carrying timestamps.
 */
inline ExperimentOutcome run_experiment(const ExperimentConfig& config) {
  const auto started = std::chrono::system_clock::now();
  const std::filesystem::path out(config.output_dir);
  write_file_atomic(out / "config.json", config.resolved.dump(2) + "\n");
  ExperimentOutcome outcome = detail::Runner(config).run();
  const auto finished = std::chrono::system_clock::now();
  const Json meta = {{"tool_version", kToolVersion},
                     {"started_at", detail::utc_timestamp(started)},
                     {"finished_at", detail::utc_timestamp(finished)},
                     {"wall_seconds", std::chrono::duration<double>(finished - started).count()},
                     {"exit_code", outcome.exit_code()}};
  write_file_atomic(out / "metadata.json", meta.dump(2) + "\n");
  return outcome;
}

}  // namespace vdist
