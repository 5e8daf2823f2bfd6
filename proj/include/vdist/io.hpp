#pragma once

#include "vdist/bellman.hpp"
#include "vdist/eqr.hpp"
#include "vdist/error.hpp"
#include "vdist/mdp.hpp"
#include "vdist/oracle.hpp"
#include "vdist/posterior.hpp"
#include "vdist/quantdist.hpp"

#include <json.hpp>

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace vdist {

using Json = nlohmann::json;

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace detail {

template <typename T>
T get_field(const Json& j, const char* key) {
  if (!j.contains(key)) fail(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("field '") + key + "' has the wrong type: " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MDP

inline Json to_json(const TabularMdp& mdp) {
  Json transition = Json::array();
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    Json per_action = Json::array();
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      Json row = Json::array();
      for (std::size_t t = 0; t < mdp.num_states; ++t) row.push_back(mdp.prob(s, a, t));
      per_action.push_back(std::move(row));
    }
    transition.push_back(std::move(per_action));
  }
  Json reward = Json::array();
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    Json row = Json::array();
    for (std::size_t a = 0; a < mdp.num_actions; ++a) row.push_back(mdp.reward(s, a));
    reward.push_back(std::move(row));
  }
  return {{"num_states", mdp.num_states},   {"num_actions", mdp.num_actions}, {"terminal_state", mdp.terminal_state},
          {"discount", mdp.discount},       {"transition", transition},       {"reward", reward}};
}

/// Parses and validates an MDP document; errors name the offending (s, a).
inline TabularMdp mdp_from_json(const Json& j) {
  const auto n = detail::get_field<std::size_t>(j, "num_states");
  const auto na = detail::get_field<std::size_t>(j, "num_actions");
  const auto terminal = detail::get_field<std::size_t>(j, "terminal_state");
  const auto discount = detail::get_field<double>(j, "discount");
  TabularMdp mdp = TabularMdp::with_terminal(n, na, terminal, discount);
  const auto transition = detail::get_field<std::vector<std::vector<std::vector<double>>>>(j, "transition");
  const auto reward = detail::get_field<std::vector<std::vector<double>>>(j, "reward");
  detail::require(transition.size() == n, "transition must have num_states rows");
  detail::require(reward.size() == n, "reward must have num_states rows");
  for (std::size_t s = 0; s < n; ++s) {
    detail::require(transition[s].size() == na && reward[s].size() == na,
                    "state " + std::to_string(s) + " must list num_actions entries");
    for (std::size_t a = 0; a < na; ++a) {
      detail::require(transition[s][a].size() == n, "transition row (s=" + std::to_string(s) + ", a=" +
                                                        std::to_string(a) + ") must have num_states entries");
      for (std::size_t t = 0; t < n; ++t) mdp.prob(s, a, t) = transition[s][a][t];
      mdp.reward(s, a) = reward[s][a];
    }
  }
  mdp.validate();
  return mdp;
}

// ---------------------------------------------------------------------------
// Posteriors

inline Json to_json(const TruncatedGaussian& c) {
  return {{"mean", c.mean}, {"std", c.std}, {"weight", c.weight}, {"lower", c.lower}, {"upper", c.upper}};
}

inline TruncatedGaussian truncated_gaussian_from_json(const Json& j) {
  TruncatedGaussian c;
  c.mean = detail::get_field<double>(j, "mean");
  c.std = detail::get_field<double>(j, "std");
  c.weight = j.value("weight", 1.0);
  c.lower = j.value("lower", 0.0);
  c.upper = j.value("upper", 1.0);
  return c;
}

inline const char* binding_kind_name(ScalarBinding::Kind k) {
  switch (k) {
    case ScalarBinding::Kind::x: return "x";
    case ScalarBinding::Kind::one_minus_x: return "one_minus_x";
    case ScalarBinding::Kind::constant: return "constant";
  }
  return "constant";
}

inline Json to_json(const MdpPosterior& posterior) {
  struct Visitor {
    Json operator()(const PointMassPosterior& p) const { return {{"type", "point_mass"}, {"mdp", to_json(p.mdp)}}; }
    Json operator()(const DirichletPosterior& p) const {
      return {{"type", "dirichlet"}, {"num_states", p.num_states}, {"num_actions", p.num_actions}, {"alpha", p.alpha}};
    }
    Json operator()(const ParametricScalarPosterior& p) const {
      Json comps = Json::array();
      for (const auto& c : p.components) comps.push_back(to_json(c));
      Json binds = Json::array();
      for (const auto& b : p.bindings) {
        Json jb = {{"state", b.state}, {"action", b.action}, {"next_state", b.next_state},
                   {"kind", binding_kind_name(b.kind)}};
        if (b.kind == ScalarBinding::Kind::constant) jb["value"] = b.value;
        binds.push_back(std::move(jb));
      }
      return {{"type", "parametric"}, {"components", comps}, {"bindings", binds}};
    }
    Json operator()(const DirichletGaussianPosterior& p) const {
      Json j = (*this)(p.transitions);
      j["type"] = "dirichlet_gaussian";
      std::vector<double> mean(p.rewards.mean.data(), p.rewards.mean.data() + p.rewards.mean.size());
      std::vector<double> count(p.rewards.precision_count.data(),
                                p.rewards.precision_count.data() + p.rewards.precision_count.size());
      j["reward_mean_colmajor"] = mean;
      j["reward_count_colmajor"] = count;
      j["reward_prior"] = {{"mean", p.rewards.prior_mean},
                           {"precision", p.rewards.prior_precision},
                           {"noise_variance", p.rewards.noise_variance}};
      return j;
    }
  };
  return std::visit(Visitor{}, posterior);
}

inline MdpPosterior posterior_from_json(const Json& j) {
  const auto type = detail::get_field<std::string>(j, "type");
  if (type == "point_mass") return PointMassPosterior{mdp_from_json(j.at("mdp"))};
  auto dirichlet = [&]() {
    DirichletPosterior d{detail::get_field<std::size_t>(j, "num_states"), detail::get_field<std::size_t>(j, "num_actions"),
                         detail::get_field<std::vector<double>>(j, "alpha")};
    d.validate();
    return d;
  };
  if (type == "dirichlet") return dirichlet();
  if (type == "parametric") {
    ParametricScalarPosterior p;
    for (const auto& c : j.at("components")) p.components.push_back(truncated_gaussian_from_json(c));
    for (const auto& b : j.value("bindings", Json::array())) {
      ScalarBinding sb;
      sb.state = detail::get_field<std::size_t>(b, "state");
      sb.action = b.value("action", std::size_t{0});
      sb.next_state = detail::get_field<std::size_t>(b, "next_state");
      const auto kind = detail::get_field<std::string>(b, "kind");
      if (kind == "x") {
        sb.kind = ScalarBinding::Kind::x;
      } else if (kind == "one_minus_x") {
        sb.kind = ScalarBinding::Kind::one_minus_x;
      } else if (kind == "constant") {
        sb.kind = ScalarBinding::Kind::constant;
        sb.value = detail::get_field<double>(b, "value");
      } else {
        detail::fail("unknown binding kind '" + kind + "'");
      }
      p.bindings.push_back(sb);
    }
    p.validate();
    return p;
  }
  if (type == "dirichlet_gaussian") {
    DirichletGaussianPosterior p{dirichlet(), RewardPosterior::standard(0, 0)};
    const auto n = static_cast<Eigen::Index>(p.transitions.num_states);
    const auto na = static_cast<Eigen::Index>(p.transitions.num_actions);
    p.rewards = RewardPosterior::standard(p.transitions.num_states, p.transitions.num_actions);
    if (j.contains("reward_mean_colmajor")) {
      const auto mean = detail::get_field<std::vector<double>>(j, "reward_mean_colmajor");
      const auto count = detail::get_field<std::vector<double>>(j, "reward_count_colmajor");
      detail::require(mean.size() == static_cast<std::size_t>(n * na) && count.size() == mean.size(),
                      "reward posterior tables have the wrong size");
      p.rewards.mean = Eigen::Map<const Matrix>(mean.data(), n, na);
      p.rewards.precision_count = Eigen::Map<const Matrix>(count.data(), n, na);
    }
    if (j.contains("reward_prior")) {
      const Json& prior = j.at("reward_prior");
      p.rewards.prior_mean = prior.value("mean", 0.0);
      p.rewards.prior_precision = prior.value("precision", 1.0);
      p.rewards.noise_variance = prior.value("noise_variance", 1.0);
    }
    p.rewards.validate();
    return p;
  }
  detail::fail("unknown posterior type '" + type + "'");
}

inline Json to_json(const Policy& policy) {
  Json rows = Json::array();
  for (Eigen::Index s = 0; s < policy.probs.rows(); ++s) {
    Json row = Json::array();
    for (Eigen::Index a = 0; a < policy.probs.cols(); ++a) row.push_back(policy.probs(s, a));
    rows.push_back(std::move(row));
  }
  return {{"probs", rows}};
}

inline Policy policy_from_json(const Json& j) {
  const auto rows = detail::get_field<std::vector<std::vector<double>>>(j, "probs");
  detail::require(!rows.empty(), "policy needs at least one state");
  Policy p{Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()))};
  for (std::size_t s = 0; s < rows.size(); ++s) {
    detail::require(rows[s].size() == rows[0].size(), "ragged policy table");
    for (std::size_t a = 0; a < rows[s].size(); ++a) p.probs(s, a) = rows[s][a];
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// CSV

/// Minimal CSV builder; values are written in shortest round-trip form.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  template <typename... Cells>
  void add(const Cells&... cells) {
    bool first = true;
    ((cell(cells, first)), ...);
    out_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  void cell(double v, bool& first) { sep(first) << format_double(v); }
  void cell(const std::string& v, bool& first) { sep(first) << v; }
  void cell(const char* v, bool& first) { sep(first) << v; }
  template <typename Int>
    requires std::is_integral_v<Int>
  void cell(Int v, bool& first) {
    sep(first) << v;
  }

  std::ostream& sep(bool& first) {
    if (!first) out_ << ',';
    first = false;
    return out_;
  }

  std::ostringstream out_;
};

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << contents;
  }
  std::filesystem::rename(tmp, path);
}

/// Header row of tau_hat levels, then one row of quantiles per state.
inline std::string quantiles_to_csv(const QuantileValueFunction& q) {
  std::vector<std::string> header{"state"};
  for (std::size_t i = 0; i < q.num_quantiles(); ++i) header.push_back(format_double(tau_hat(i, q.num_quantiles())));
  CsvWriter csv(header);
  for (std::size_t s = 0; s < q.num_states(); ++s) {
    std::vector<std::string> row{std::to_string(s)};
    for (double v : q.row(s)) row.push_back(format_double(v));
    csv.row(row);
  }
  return csv.str();
}

inline QuantileValueFunction quantiles_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');  // state index
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  detail::require(!rows.empty(), "quantile CSV has no rows");
  RowMatrix q(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t s = 0; s < rows.size(); ++s) {
    detail::require(rows[s].size() == rows[0].size(), "ragged quantile CSV");
    for (std::size_t i = 0; i < rows[s].size(); ++i) q(s, i) = rows[s][i];
  }
  return QuantileValueFunction(std::move(q));
}

inline std::string contraction_to_csv(const std::vector<ContractionTrial>& trials) {
  CsvWriter csv({"trial", "state_space_size", "gamma", "w_pre", "w_post", "ratio"});
  for (const auto& t : trials) csv.add(t.trial, t.state_space_size, t.gamma, t.w_pre, t.w_post, t.ratio);
  return csv.str();
}

/// Long-format trace: one row per (snapshot, state, quantile).
inline std::string trace_to_csv(const EqrTrace& trace, const std::vector<std::size_t>& states = {}) {
  const bool has_error = !trace.snapshots.empty() && trace.snapshots.front().error.has_value();
  std::vector<std::string> header{"step", "state", "tau_hat", "q_value"};
  if (has_error) header.push_back("error");
  CsvWriter csv(header);
  for (const auto& snap : trace.snapshots) {
    const std::size_t m = snap.value.num_quantiles();
    std::vector<std::size_t> which = states;
    if (which.empty())
      for (std::size_t s = 0; s < snap.value.num_states(); ++s) which.push_back(s);
    for (std::size_t s : which) {
      for (std::size_t i = 0; i < m; ++i) {
        if (has_error) {
          csv.add(snap.step, s, tau_hat(i, m), snap.value.matrix()(s, i), (*snap.error)(s, i));
        } else {
          csv.add(snap.step, s, tau_hat(i, m), snap.value.matrix()(s, i));
        }
      }
    }
  }
  return csv.str();
}

inline std::string samples_to_csv(const ValueSampleSet& samples) {
  CsvWriter csv({"state", "sample_index", "value"});
  for (std::size_t s = 0; s < samples.num_states(); ++s) {
    const auto row = samples.state(s);
    for (std::size_t k = 0; k < row.size(); ++k) csv.add(s, k, row[k]);
  }
  return csv.str();
}

inline Json histogram_json(const ValueSampleSet& samples, std::size_t bins, const std::vector<std::size_t>& states) {
  Json out = Json::object();
  for (std::size_t s : states) {
    const Histogram h = histogram(samples.state(s), bins);
    out[std::to_string(s)] = {{"edges", h.edges}, {"counts", h.counts}};
  }
  return out;
}

}  // namespace vdist
