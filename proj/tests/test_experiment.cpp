#include "vdist/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

namespace vdist {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "vdist_experiment_test" / name;
  fs::remove_all(p);
  return p;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Every output file except the timing metadata, keyed by relative path.
std::map<std::string, std::string> outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "metadata.json") continue;
    files[fs::relative(e.path(), dir).string()] = read_text(e.path());
  }
  return files;
}

std::string validation_message(const Json& j) {
  try {
    parse_experiment_config(j);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

Json small_toy() {
  return Json::parse(R"({
    "kind": "toy_convergence",
    "environment": {"type": "toy", "beta": 0.5},
    "posterior": {"type": "parametric", "x_prior": "bimodal"},
    "algorithm": {"num_quantiles": 4, "max_steps": 200, "eval_every": 50, "trailing_window": 100},
    "oracle": {"num_samples": 2000},
    "seeds": [0, 1]
  })");
}

std::vector<Json> small_configs() {
  std::vector<Json> out{small_toy()};
  out.push_back(Json::parse(R"({
    "kind": "beta_sweep",
    "environment": {"type": "toy"},
    "algorithm": {"num_quantiles": 4, "max_steps": 200, "eval_every": 200, "betas": [0.0, 0.5],
                  "x_priors": ["gaussian", {"name": "wide", "components": [{"mean": 0.5, "std": 0.3}]}],
                  "covariance_edge": [0, 2]},
    "oracle": {"num_samples": 2000},
    "seeds": [0, 1]
  })"));
  out.push_back(Json::parse(R"({
    "kind": "gridworld",
    "environment": {"type": "gridworld", "num_rooms": 1, "room_size": 3},
    "algorithm": {"num_quantiles": 4, "step_size": 1.0, "max_steps": 50, "eval_every": 50,
                  "psrl_episodes": 3, "psrl_horizon": 20, "snapshots": [1, 2], "collection_horizon": 20},
    "oracle": {"num_samples": 200, "num_quantiles": 4},
    "seeds": [0, 1]
  })"));
  out.push_back(Json::parse(R"({
    "kind": "contraction",
    "environment": {"type": "random_acyclic", "num_layers": 2, "states_per_layer": 2},
    "policy": "random",
    "algorithm": {"gammas": [0.9], "p_orders": [1, 2], "instances_per_setting": 3, "trials_per_instance": 2},
    "seeds": [0, 1]
  })"));
  out.push_back(Json::parse(R"({
    "kind": "operator_iterate",
    "environment": {"type": "random_acyclic", "num_layers": 2, "states_per_layer": 2, "num_actions": 2},
    "policy": "random",
    "algorithm": {"num_quantiles": 8, "ensemble_size": 4},
    "seeds": [0, 1]
  })"));
  out.push_back(Json::parse(R"({
    "kind": "oracle_only",
    "environment": {"type": "random_cyclic", "num_states": 4},
    "algorithm": {"write_samples": true},
    "oracle": {"num_samples": 500, "num_quantiles": 5, "histogram_bins": 7},
    "seeds": [0, 1]
  })"));
  return out;
}

TEST(Experiment, ResolvedEchoIsAFixedPoint) {
  for (const Json& j : small_configs()) {
    const ExperimentConfig c = parse_experiment_config(j);
    const ExperimentConfig again = parse_experiment_config(c.resolved);
    EXPECT_EQ(again.resolved, c.resolved) << c.resolved.dump();
    EXPECT_EQ(c.resolved["kind"], j["kind"]);
    EXPECT_TRUE(c.resolved.contains("output_dir"));
  }
}

TEST(Experiment, DefaultsAreFilledIn) {
  const ExperimentConfig c = parse_experiment_config(small_toy());
  EXPECT_EQ(c.eqr.step_size, 0.5);
  EXPECT_EQ(c.resolved["algorithm"]["schedule"], "inverse_sqrt_t");
  EXPECT_EQ(c.resolved["environment"]["discount"], 0.9);
  EXPECT_EQ(c.output_dir, "out/toy_convergence");
  EXPECT_EQ(c.resolved["posterior"]["x_prior"].size(), 2u);
}

TEST(Experiment, RejectsUnknownFields) {
  Json j = small_toy();
  j["algorithm"]["step_sise"] = 0.1;
  EXPECT_NE(validation_message(j).find("step_sise"), std::string::npos);
  Json top = small_toy();
  top["extra"] = 1;
  EXPECT_NE(validation_message(top).find("extra"), std::string::npos);
}

TEST(Experiment, RejectsBadValues) {
  Json beta = small_toy();
  beta["environment"]["beta"] = 1.5;
  EXPECT_FALSE(validation_message(beta).empty());

  Json seeds = small_toy();
  seeds["seeds"] = Json::array();
  EXPECT_NE(validation_message(seeds).find("seeds"), std::string::npos);

  Json dup = small_toy();
  dup["seeds"] = {3, 3};
  EXPECT_FALSE(validation_message(dup).empty());

  Json kind = small_toy();
  kind["kind"] = "bogus";
  EXPECT_FALSE(validation_message(kind).empty());

  Json mismatch = small_configs()[2];
  mismatch["oracle"]["num_quantiles"] = 5;
  EXPECT_FALSE(validation_message(mismatch).empty());

  Json sweep = small_configs()[1];
  sweep["algorithm"]["betas"] = {0.0, -0.1};
  EXPECT_FALSE(validation_message(sweep).empty());

  Json negative = small_toy();
  negative["algorithm"]["max_steps"] = -5;
  EXPECT_FALSE(validation_message(negative).empty());
}

TEST(Experiment, MdpEnvironmentErrorsNameTheRow) {
  TabularMdp m = TabularMdp::with_terminal(3, 2, 2, 0.9);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t a = 0; a < 2; ++a) m.prob(s, a, 2) = 1.0;
  Json j = {{"kind", "oracle_only"}, {"environment", {{"type", "mdp"}, {"mdp", to_json(m)}}}, {"seeds", Json::array({0})}};
  EXPECT_EQ(validation_message(j), "");
  j["environment"]["mdp"]["transition"][1][0] = {0.5, 0.0, 0.4};
  const std::string msg = validation_message(j);
  EXPECT_NE(msg.find("s=1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("a=0"), std::string::npos) << msg;
}

TEST(Experiment, PosteriorMustSuitEnvironment) {
  Json toy = small_toy();
  toy["posterior"] = {{"type", "dirichlet"}};
  EXPECT_FALSE(validation_message(toy).empty());
  Json grid = small_configs()[2];
  grid["kind"] = "toy_convergence";
  EXPECT_FALSE(validation_message(grid).empty());
}

TEST(Experiment, OverridesReplaceSeedsAndOutput) {
  const ExperimentConfig c = apply_overrides(parse_experiment_config(small_toy()), 7, std::string("elsewhere"));
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{7});
  EXPECT_EQ(c.output_dir, "elsewhere");
  EXPECT_EQ(c.resolved["seeds"], Json::array({7}));
}

TEST(Experiment, RunsAreDeterministicAndSeedSeparable) {
  for (const Json& j : small_configs()) {
    const std::string kind = j["kind"];
    ExperimentConfig c = parse_experiment_config(j);
    const fs::path a = scratch(kind + "_a");
    const fs::path b = scratch(kind + "_b");
    const fs::path single = scratch(kind + "_single");

    const ExperimentOutcome ra = run_experiment(apply_overrides(c, std::nullopt, a.string()));
    EXPECT_EQ(ra.exit_code(), 0) << kind;
    const ExperimentOutcome rb = run_experiment(apply_overrides(c, std::nullopt, b.string()));
    EXPECT_EQ(ra.summary, rb.summary) << kind;

    const auto fa = outputs(a);
    const auto fb = outputs(b);
    EXPECT_EQ(fa.size(), fb.size()) << kind;
    for (const auto& [name, text] : fa) {
      ASSERT_TRUE(fb.count(name)) << kind << ": " << name;
      if (name == "config.json") continue;  // echoes the output directory
      EXPECT_EQ(text, fb.at(name)) << kind << ": " << name;
    }
    EXPECT_TRUE(fa.count("summary.json")) << kind;
    EXPECT_TRUE(fs::exists(a / "metadata.json")) << kind;

    // A single-seed rerun reproduces that seed's files from the full run.
    run_experiment(apply_overrides(c, 1, single.string()));
    const auto fs1 = outputs(single);
    std::size_t compared = 0;
    for (const auto& [name, text] : fs1) {
      if (name.rfind("seed_1/", 0) != 0) continue;
      ASSERT_TRUE(fa.count(name)) << kind << ": " << name;
      EXPECT_EQ(text, fa.at(name)) << kind << ": " << name;
      ++compared;
    }
    EXPECT_GT(compared, 0u) << kind;
    EXPECT_FALSE(fs::exists(single / "seed_0")) << kind;
  }
  fs::remove_all(fs::temp_directory_path() / "vdist_experiment_test");
}

TEST(Experiment, ConfigEchoMatchesResolved) {
  const fs::path dir = scratch("echo");
  const ExperimentConfig c = apply_overrides(parse_experiment_config(small_configs()[4]), std::nullopt, dir.string());
  run_experiment(c);
  EXPECT_EQ(Json::parse(read_text(dir / "config.json")), c.resolved);
  const Json meta = Json::parse(read_text(dir / "metadata.json"));
  EXPECT_EQ(meta["tool_version"], kToolVersion);
  EXPECT_EQ(meta["exit_code"], 0);
  fs::remove_all(dir);
}

TEST(Experiment, ToyOutputsHaveExpectedShape) {
  const fs::path dir = scratch("toy_shape");
  const ExperimentOutcome r = run_experiment(apply_overrides(parse_experiment_config(small_toy()), 0, dir.string()));
  const std::string w1 = read_text(dir / "seed_0" / "w1.csv");
  // Header plus snapshots at steps 50, 100, 150, 200.
  EXPECT_EQ(std::count(w1.begin(), w1.end(), '\n'), 1 + 4);
  const QuantileValueFunction q = quantiles_from_csv(read_text(dir / "seed_0" / "final_quantiles.csv"));
  EXPECT_EQ(q.num_quantiles(), 4u);
  EXPECT_EQ(q.num_states(), 4u);
  for (double v : q.row(3)) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(r.summary["per_seed"]["0"].contains("final_w1"));
  fs::remove_all(dir);
}

TEST(Experiment, ExitCodeReflectsViolations) {
  ExperimentOutcome o;
  EXPECT_EQ(o.exit_code(), 0);
  o.violations.push_back("ratio above one");
  EXPECT_EQ(o.exit_code(), 3);
}

TEST(Experiment, LoadReportsMissingAndMalformedFiles) {
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), ValidationError);
  const fs::path dir = scratch("malformed");
  write_file_atomic(dir / "bad.json", "{\"kind\": ");
  EXPECT_THROW(load_experiment_config(dir / "bad.json"), ValidationError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace vdist
