#pragma once

// End-to-end imitation pipeline: demonstrations, density fitting, occupancy
// entropy RL and evaluation, driven by an ExperimentConfig.

#include "ndi/checkpoint.hpp"
#include "ndi/density.hpp"
#include "ndi/envs.hpp"
#include "ndi/rl.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ndi::pipeline {

/// Flat configuration. Every key is optional; unknown keys and mistyped
/// values are rejected.
struct ExperimentConfig {
  std::string env = "grid-5x5";
  double gamma = 0.9;

  // Experts: soft value iteration (tabular) or noisy PD control (point-mass).
  double expert_temperature = 0.05;
  double expert_kp = 4.0;
  double expert_kd = 3.0;
  double expert_noise = 0.1;
  std::size_t n_trajectories = 1;
  std::size_t episode_length = 30;

  std::string density = "made";  // "made" | "ebm"
  std::size_t density_hidden = 64;
  std::size_t density_layers = 2;
  std::size_t density_components = 5;
  std::size_t density_epochs = 200;
  std::size_t density_batch = 32;
  double density_lr = 1e-3;
  bool density_spectral = true;
  std::string ssm_variant = "standard";  // "standard" | "sliced_norm"
  std::size_t ssm_slices = 1;

  std::optional<double> lambda_pi;  // empty: tuned automatically
  double lambda_pi_max = 1.0;
  double target_entropy_scale = 0.5;
  double lambda_f = 0.005;
  std::string reward_form = "alg1";  // "alg1" | "theorem"

  std::size_t rl_iterations = 10;
  std::size_t sac_steps = 20000;
  std::size_t sac_warmup = 1000;
  std::size_t sac_hidden = 64;
  std::size_t sac_batch = 128;
  double sac_lr = 3e-4;
  std::size_t eval_interval = 1000;
  std::size_t n_marginal_samples = 16;
  std::size_t replay_capacity = 1024;

  std::size_t eval_episodes = 20;
  std::size_t eval_states = 1000;

  std::uint64_t seed = 0;
  std::string out_dir = "runs";
};

/// Throws std::invalid_argument naming the offending key.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON of every field.
std::string config_to_json(const ExperimentConfig& config);
/// FNV-1a 64 of the canonical JSON without seed and out_dir, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// The configured environment (episode_length applied to the point-mass).
envs::RegisteredEnv make_environment(const ExperimentConfig& config);

// ---------------------------------------------------------------- demos

struct DemoRecord {
  std::size_t episode = 0;
  std::size_t t = 0;
  VectorXd s;
  VectorXd a;
};

struct DemoSet {
  std::string env;
  std::string expert;
  std::uint64_t seed = 0;
  std::size_t count = 0;  // trajectories
  double expert_return = 0.0;
  std::string config_hash;
  Index state_dim = 0;
  Index action_dim = 0;
  std::vector<DemoRecord> records;

  // (state_dim + action_dim) x n matrix of (s, a) columns.
  MatrixXd joint_samples() const;
};

/// The in-repo expert of a tabular environment.
SoftmaxPolicy tabular_expert(const ExperimentConfig& config, const TabularMdp& mdp);
/// The point-mass expert as a Gaussian action model.
rl::GaussianActionModel continuous_expert(const ExperimentConfig& config, const ContinuousEnv& env);

DemoSet generate_demos(const ExperimentConfig& config);
/// CSV: "# key=value" provenance lines, then "episode,t,s_0..,a_0..", values
/// printed with 17 significant digits.
void write_demos(const DemoSet& demos, const std::filesystem::path& path);
/// Throws std::runtime_error on malformed files, ragged rows or
/// non-contiguous timesteps.
DemoSet read_demos(const std::filesystem::path& path);

// ---------------------------------------------------------------- density

struct DensityFit {
  ckpt::Checkpoint checkpoint;
  density::TrainingCurve curve;
};

DensityFit fit_density(const ExperimentConfig& config, const DemoSet& demos);

/// Raw-space log density (normalized for MADE, unnormalized for EBM) of the
/// (state_dim + action_dim) x n samples under a density checkpoint.
VectorXd density_log_q(const ckpt::Checkpoint& model, const MatrixXd& samples);

/// log q at every (state, action) pair of a tabular environment.
MatrixXd tabular_log_q(const ckpt::Checkpoint& model, const envs::RegisteredEnv& env);

// ---------------------------------------------------------------- training

struct TrainResult {
  ckpt::Checkpoint policy;
  std::vector<rl::MetricsRow> metrics;
  std::size_t selected_iteration = 0;
  double selected_augmented_return = 0.0;
  std::vector<std::string> audit;
};

/// Mutual-information reward table r_f(s, a) on a tabular environment, with
/// the marginal pairs drawn from the policy's normalized discounted state
/// distribution and the RBF critic on standardized state features.
MatrixXd tabular_reward_f(const envs::RegisteredEnv& env, const SoftmaxPolicy& policy,
                          const rl::AugmentedRewardConfig& reward_config);

/// Runs the occupancy entropy RL phase. When out_dir is given, the best
/// checkpoint is written there as soon as it improves, so a divergence
/// (std::runtime_error subclass DivergenceError) leaves the last good one.
TrainResult train(const ExperimentConfig& config, const ckpt::Checkpoint& density_model,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

SoftmaxPolicy softmax_from_checkpoint(const ckpt::Checkpoint& c);
GaussianPolicy gaussian_from_checkpoint(const ckpt::Checkpoint& c);

// ---------------------------------------------------------------- evaluation

struct EvalSummary {
  std::string env;
  std::uint64_t seed = 0;
  std::string config_hash;
  double env_return_mean = 0.0;
  double env_return_stderr = 0.0;
  double expert_return = 0.0;
  double normalized_kl = 0.0;
  // Tabular only.
  std::optional<double> reverse_kl;
  std::optional<double> random_reverse_kl;
  std::size_t env_steps = 0;

  std::string to_json() const;
};

EvalSummary evaluate(const ExperimentConfig& config, const ckpt::Checkpoint& policy);

// ---------------------------------------------------------------- files

/// Output file names inside out_dir for one seed. metrics.csv is shared by
/// every seed and only ever appended to.
struct RunPaths {
  std::filesystem::path demos, density, density_curve, policy, metrics, audit, eval;
  static RunPaths in(const std::filesystem::path& dir, std::uint64_t seed);
};

}  // namespace ndi::pipeline
