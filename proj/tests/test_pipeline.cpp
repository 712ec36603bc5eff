#include "ndi/errors.hpp"
#include "ndi/occupancy.hpp"
#include "ndi/pipeline.hpp"
#include "ndi/verify.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace ndi;
using namespace ndi::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ndi_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig quick_grid(std::uint64_t seed = 0) {
  ExperimentConfig c;
  c.seed = seed;
  c.density_epochs = 40;
  c.rl_iterations = 4;
  return c;
}

ckpt::Checkpoint policy_checkpoint(const SoftmaxPolicy& pi) {
  ckpt::Checkpoint c;
  c.kind = "softmax";
  c.widths = {std::uint32_t(pi.n_states()), std::uint32_t(pi.n_actions())};
  c.arrays["logits"] = pi.logits();
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NDI_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_config(R"({"env": "chain-5", "lambda_f": 0.1, "lambda_pi": 0.25, "seed": 3})");
  EXPECT_EQ(c.env, "chain-5");
  EXPECT_EQ(c.lambda_f, 0.1);
  ASSERT_TRUE(c.lambda_pi.has_value());
  EXPECT_EQ(*c.lambda_pi, 0.25);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.rl_iterations, ExperimentConfig{}.rl_iterations);
  EXPECT_FALSE(parse_config(R"({"lambda_pi": "auto"})").lambda_pi.has_value());
}

TEST(Config, StrictSchema) {
  EXPECT_THROW(parse_config(R"({"lamda_f": 0.1})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"rl_iterations": "ten"})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"rl_iterations": -1})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"density": "flow"})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"gamma": 1.0})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"lambda_pi": "sometimes"})"), std::invalid_argument);
  EXPECT_THROW(parse_config("[1, 2]"), std::invalid_argument);
  EXPECT_THROW(parse_config("{"), std::invalid_argument);
  try {
    parse_config(R"({"lamda_f": 0.1})");
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("lamda_f"), std::string::npos);
  }
}

TEST(Config, RoundTripAndHash) {
  ExperimentConfig c = quick_grid(4);
  c.lambda_pi = 0.5;
  const auto back = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);

  ExperimentConfig other_seed = c;
  other_seed.seed = 99;
  other_seed.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(other_seed), config_hash(c));
  ExperimentConfig other_lf = c;
  other_lf.lambda_f = 0.1;
  EXPECT_NE(config_hash(other_lf), config_hash(c));
}

TEST(Config, UnknownEnvironment) {
  ExperimentConfig c;
  c.env = "maze";
  EXPECT_THROW(generate_demos(c), std::invalid_argument);
}

// ---------------------------------------------------------------- demos

TEST(Demos, DeterministicFile) {
  ExperimentConfig c;
  c.env = "chain-5";
  c.seed = 7;
  const auto dir = fresh_dir("demos");
  write_demos(generate_demos(c), dir / "a.csv");
  write_demos(generate_demos(c), dir / "b.csv");
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  const std::string text = slurp(dir / "a.csv");
  EXPECT_NE(text.find("# config_hash=" + config_hash(c)), std::string::npos);
  EXPECT_NE(text.find("# seed=7"), std::string::npos);
  EXPECT_NE(text.find("episode,t,s_0"), std::string::npos);
}

TEST(Demos, RowCountAndRoundTrip) {
  ExperimentConfig c;
  c.n_trajectories = 25;
  const auto d = generate_demos(c);
  EXPECT_EQ(d.records.size(), 25u * c.episode_length);
  const auto path = fresh_dir("roundtrip") / "d.csv";
  write_demos(d, path);
  const auto back = read_demos(path);
  ASSERT_EQ(back.records.size(), d.records.size());
  EXPECT_EQ(back.env, d.env);
  EXPECT_EQ(back.expert_return, d.expert_return);
  EXPECT_EQ(back.joint_samples(), d.joint_samples());
}

TEST(Demos, ExpertReturnMatchesOracle) {
  ExperimentConfig c;
  c.env = "chain-5";
  const auto env = make_environment(c);
  const auto& mdp = *env.tabular;
  const auto expert = rl::soft_policy_iteration(mdp, c.expert_temperature, 1e-12).policy;
  const auto occ = occupancy_measure(mdp, expert, 1e-12);
  const double oracle = (occ.rho.array() * mdp.reward().array()).sum();
  EXPECT_NEAR(generate_demos(c).expert_return, oracle, 1e-9);
}

TEST(Demos, RejectsMalformedFiles) {
  const auto dir = fresh_dir("malformed");
  auto check = [&](const std::string& body) {
    std::ofstream(dir / "x.csv") << "# env=chain-5\n# expert=e\n# seed=0\n# count=1\n"
                                    "# expert_return=1\n# config_hash=0\n"
                                 << body;
    EXPECT_THROW(read_demos(dir / "x.csv"), std::runtime_error) << body;
  };
  check("episode,t,s_0,a_0\n0,0,1\n");                // ragged
  check("episode,t,s_0,a_0\n0,0,1,0\n0,2,1,0\n");     // gap in t
  check("episode,t,s_0,a_0\n0,1,1,0\n");              // does not start at 0
  check("episode,t,s_0,a_0\n0,0,abc,0\n");            // not a number
  check("0,0,1,0\n");                                 // no column header
  EXPECT_THROW(read_demos(dir / "missing.csv"), std::runtime_error);
}

// ---------------------------------------------------------------- density

TEST(FitDensity, BitwiseDeterministic) {
  ExperimentConfig c = quick_grid();
  const auto demos = generate_demos(c);
  const auto a = fit_density(c, demos);
  const auto b = fit_density(c, demos);
  EXPECT_EQ(ckpt::serialize(a.checkpoint), ckpt::serialize(b.checkpoint));
  EXPECT_EQ(a.curve.epoch_loss.size(), c.density_epochs);
  c.density = "ebm";
  c.density_epochs = 5;
  const auto e1 = fit_density(c, demos);
  EXPECT_EQ(ckpt::serialize(e1.checkpoint), ckpt::serialize(fit_density(c, demos).checkpoint));
  EXPECT_EQ(e1.checkpoint.kind, "ebm");
}

// ---------------------------------------------------------------- train

TEST(Train, ZeroCoefficientsEqualGreedyOnLogQ) {
  ExperimentConfig c = quick_grid();
  c.lambda_pi = 0.0;
  c.lambda_f = 0.0;
  const auto fit = fit_density(c, generate_demos(c));
  const auto result = train(c, fit.checkpoint);
  const auto env = make_environment(c);
  const auto oracle =
      rl::greedy_policy_iteration(env.tabular->with_reward(tabular_log_q(fit.checkpoint, env)), 1e-10);
  const MatrixXd got = softmax_from_checkpoint(result.policy).probabilities();
  EXPECT_LT((got - oracle.policy.probabilities()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Train, FixedTemperatureWithoutCriticEqualsSoftIteration) {
  ExperimentConfig c = quick_grid();
  c.lambda_pi = 0.5;
  c.lambda_f = 0.0;
  const auto fit = fit_density(c, generate_demos(c));
  const auto result = train(c, fit.checkpoint);
  const auto env = make_environment(c);
  const auto oracle = rl::soft_policy_iteration(
      env.tabular->with_reward(tabular_log_q(fit.checkpoint, env)), 0.5, 1e-12);
  const MatrixXd got = softmax_from_checkpoint(result.policy).probabilities();
  EXPECT_LT((got - oracle.policy.probabilities()).cwiseAbs().maxCoeff(), 1e-9);
  for (const auto& row : result.metrics) EXPECT_EQ(row.lambda_pi, 0.5);
}

TEST(Train, SelectsBestAugmentedReturn) {
  ExperimentConfig c = quick_grid();
  c.lambda_f = 0.1;
  const auto fit = fit_density(c, generate_demos(c));
  const auto result = train(c, fit.checkpoint);
  ASSERT_EQ(result.metrics.size(), c.rl_iterations);
  std::size_t best = 0;
  for (std::size_t i = 0; i < result.metrics.size(); ++i) {
    if (result.metrics[i].augmented_return > result.metrics[best].augmented_return) best = i;
  }
  EXPECT_EQ(result.selected_iteration, result.metrics[best].iteration);
  EXPECT_EQ(result.selected_augmented_return, result.metrics[best].augmented_return);
  EXPECT_EQ(result.policy.meta.at("selected_iteration"), double(result.selected_iteration));
  EXPECT_NE(result.audit.back().find("selected iteration " + std::to_string(best + 1)),
            std::string::npos);
}

TEST(Train, RejectsMismatchedCheckpoint) {
  ExperimentConfig c = quick_grid();
  const auto fit = fit_density(c, generate_demos(c));
  c.density = "ebm";
  EXPECT_THROW(train(c, fit.checkpoint), std::invalid_argument);
}

TEST(Train, DivergenceIsReported) {
  ExperimentConfig c = quick_grid();
  auto fit = fit_density(c, generate_demos(c));
  auto& scale = fit.checkpoint.arrays.at("standardizer.scale");
  scale(0, 0) = std::nan("");
  const auto dir = fresh_dir("diverge");
  EXPECT_THROW(train(c, fit.checkpoint, dir), DivergenceError);
  const std::string audit = slurp(RunPaths::in(dir, c.seed).audit);
  EXPECT_NE(audit.find("diverged"), std::string::npos);
}

TEST(Train, FiveSeedsShareMetricsFile) {
  const auto dir = fresh_dir("seeds");
  std::set<std::string> seeds_seen;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = quick_grid(seed);
    train(c, fit_density(c, generate_demos(c)).checkpoint, dir);
    EXPECT_TRUE(fs::exists(RunPaths::in(dir, seed).policy));
  }
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, rl::MetricsWriter::kHeader);
  std::size_t rows = 0;
  const std::string hash = config_hash(quick_grid());
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(line.rfind(hash + ",", 0), 0u);
    seeds_seen.insert(line.substr(hash.size() + 1, line.find(',', hash.size() + 1) - hash.size() - 1));
  }
  EXPECT_EQ(rows, 5u * quick_grid().rl_iterations);
  EXPECT_EQ(seeds_seen.size(), 5u);
}

TEST(Train, RerunsAreByteIdentical) {
  const auto c = quick_grid(2);
  std::vector<std::string> files;
  for (const char* name : {"rerun_a", "rerun_b"}) {
    const auto dir = fresh_dir(name);
    const auto paths = RunPaths::in(dir, c.seed);
    write_demos(generate_demos(c), paths.demos);
    const auto fit = fit_density(c, read_demos(paths.demos));
    ckpt::save(fit.checkpoint, paths.density.string());
    train(c, ckpt::load(paths.density.string()), dir);
    std::ofstream(paths.eval) << evaluate(c, ckpt::load(paths.policy.string())).to_json();
    files.push_back(slurp(paths.demos) + slurp(paths.density) + slurp(paths.policy) +
                    slurp(paths.audit) + slurp(paths.eval));
  }
  EXPECT_EQ(files[0], files[1]);
}

TEST(Train, PointMassSmoke) {
  ExperimentConfig c;
  c.env = "pointmass";
  c.gamma = 0.99;
  c.episode_length = 20;
  c.n_trajectories = 3;
  c.density_epochs = 5;
  c.sac_steps = 300;
  c.sac_warmup = 100;
  c.sac_hidden = 8;
  c.sac_batch = 16;
  c.eval_interval = 100;
  c.eval_episodes = 2;
  c.eval_states = 20;
  const auto fit = fit_density(c, generate_demos(c));
  const auto result = train(c, fit.checkpoint);
  ASSERT_EQ(result.metrics.size(), 3u);
  EXPECT_EQ(result.metrics.back().env_steps, 300u);
  const auto pi = gaussian_from_checkpoint(ckpt::deserialize(ckpt::serialize(result.policy)));
  EXPECT_EQ(pi.action_dim(), 2);
  const auto summary = evaluate(c, result.policy);
  EXPECT_TRUE(std::isfinite(summary.normalized_kl));
  EXPECT_FALSE(summary.reverse_kl.has_value());
}

// ---------------------------------------------------------------- eval

TEST(Evaluate, ExpertAgainstItselfIsZero) {
  const auto c = quick_grid();
  const auto env = make_environment(c);
  const auto summary = evaluate(c, policy_checkpoint(tabular_expert(c, *env.tabular)));
  EXPECT_NEAR(summary.normalized_kl, 0.0, 1e-12);
  ASSERT_TRUE(summary.reverse_kl.has_value());
  EXPECT_NEAR(*summary.reverse_kl, 0.0, 1e-12);
  EXPECT_NEAR(summary.env_return_mean, summary.expert_return, 1e-12);
}

TEST(Evaluate, RandomPolicyIsOne) {
  const auto c = quick_grid();
  const auto env = make_environment(c);
  const auto uniform = SoftmaxPolicy::uniform(env.tabular->n_states(), env.tabular->n_actions());
  const auto summary = evaluate(c, policy_checkpoint(uniform));
  EXPECT_NEAR(summary.normalized_kl, 1.0, 1e-12);
  EXPECT_NEAR(*summary.reverse_kl, *summary.random_reverse_kl, 1e-12);
  EXPECT_NE(summary.to_json().find("\"normalized_kl\""), std::string::npos);
}

// ---------------------------------------------------------------- verify

TEST(Verify, AllSuitesPass) {
  const auto reports = verify::run_suite("all");
  EXPECT_EQ(reports.size(), verify::suite_names().size());
  for (const auto& r : reports) EXPECT_TRUE(r.passed()) << verify::format(r);
}

TEST(Verify, Theorem1ListsExpectedFailure) {
  const auto r = verify::run_suite("theorem1").front();
  ASSERT_EQ(r.expected_failures.size(), 1u);
  EXPECT_NE(r.expected_failures[0].find("-23.03"), std::string::npos);
  EXPECT_THROW(verify::run_suite("lemma3"), std::invalid_argument);
}

// ---------------------------------------------------------------- CLI

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("verify --suite lemma2"), 0);
  EXPECT_EQ(run_cli("verify --suite coordinate-ascent"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("verify --suite nope"), 1);
  const auto dir = fresh_dir("cli");
  EXPECT_EQ(run_cli("train --out " + dir.string()), 1);  // no density checkpoint yet
  std::ofstream(dir / "bad.json") << R"({"unknown": 1})";
  EXPECT_EQ(run_cli("gen-demos --config " + (dir / "bad.json").string()), 1);
}

TEST(Cli, FullRun) {
  const auto dir = fresh_dir("cli_run");
  std::ofstream(dir / "cfg.json") << R"({"env": "chain-5", "density_epochs": 20, "rl_iterations": 3})";
  const std::string common = " --config " + (dir / "cfg.json").string() + " --seed 1 --out " + dir.string();
  for (const char* cmd : {"gen-demos", "fit-density", "train", "eval"}) {
    EXPECT_EQ(run_cli(cmd + common), 0) << cmd;
  }
  const auto paths = RunPaths::in(dir, 1);
  for (const auto& p : {paths.demos, paths.density, paths.density_curve, paths.policy, paths.metrics,
                        paths.audit, paths.eval}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  EXPECT_NE(slurp(paths.eval).find("\"seed\": 1"), std::string::npos);
}
