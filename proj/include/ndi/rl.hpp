#pragma once

// Reinforcement-learning side of imitation: augmented rewards, the fixed RBF
// critic, a timestep-indexed replay buffer, exact soft policy iteration for
// tabular MDPs, a compact soft actor-critic, and evaluation metrics.

#include "ndi/gaussian_policy.hpp"
#include "ndi/mdp.hpp"
#include "ndi/nn.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ndi::rl {

struct AugmentedRewardConfig {
  double lambda_pi = 0.0;
  double lambda_f = 0.005;
  double gamma = 0.9;
  // true: -log pi and f - (gamma/e) E[...]; false: -(1+gamma) log pi and
  // gamma f - (gamma/e) E[...].
  bool use_alg1_form = true;
};

// ---------------------------------------------------------------- buffer

/// States grouped by the trajectory index at which they were observed. Each
/// bucket is a FIFO ring of fixed capacity.
class TimestepReplayBuffer {
 public:
  struct Entry {
    VectorXd state;
    std::size_t t = 0;
  };

  explicit TimestepReplayBuffer(std::size_t capacity_per_bucket = 1024, std::uint64_t seed = 0);

  void add(std::size_t t, const VectorXd& state);
  std::size_t bucket_size(std::size_t t) const;
  std::size_t size() const { return total_; }
  std::size_t capacity() const { return capacity_; }
  // Current contents of bucket t, oldest first.
  std::vector<Entry> bucket(std::size_t t) const;

  // Uniform over bucket t. An empty bucket falls back to the pooled buffer
  // and increments fallback_count(). Throws std::logic_error when the whole
  // buffer is empty.
  const Entry& sample(std::size_t t);
  std::size_t fallback_count() const { return fallbacks_; }

 private:
  struct Ring {
    std::vector<Entry> items;
    std::size_t next = 0;
  };

  std::size_t capacity_;
  std::map<std::size_t, Ring> buckets_;
  std::size_t total_ = 0;
  std::size_t fallbacks_ = 0;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------- critic

/// f(s, s') = -|s - s'|^2 / bandwidth - ln(normalizer) + 1, where the
/// normalizer is the mean kernel value over pairs drawn from the marginals.
class RbfCritic {
 public:
  explicit RbfCritic(double bandwidth = 1.0);

  double kernel(const VectorXd& a, const VectorXd& b) const;
  double value(const VectorXd& s, const VectorXd& s_next) const;

  // Folds the pairs' kernel values into the running mean.
  void observe(std::span<const std::pair<VectorXd, VectorXd>> marginal_pairs);
  void set_normalizer(double n);
  double normalizer() const { return normalizer_; }
  double bandwidth() const { return bandwidth_; }

 private:
  double bandwidth_;
  double normalizer_ = 1.0;
  std::size_t count_ = 0;
};

/// ln(k(s, s_next) / mean_pairs k) + 1 with the normalizer taken from the
/// given pairs. Throws std::invalid_argument on an empty pair set.
double rbf_critic_value(const RbfCritic& critic, const VectorXd& s, const VectorXd& s_next,
                        std::span<const std::pair<VectorXd, VectorXd>> marginal_pairs);

// ---------------------------------------------------------------- rewards

double reward_pi(double log_prob, const AugmentedRewardConfig& config);
double reward_pi(const SoftmaxPolicy& policy, Index s, Index a, const AugmentedRewardConfig& config);
double reward_pi(const GaussianPolicy& policy, const VectorXd& s, const VectorXd& a,
                 const AugmentedRewardConfig& config);

/// Mutual-information reward with explicit marginal samples:
/// f(s_t, s_next) - (gamma/e) mean over (x, y) in samples_t x samples_next of
/// [e^{f(s_next, x)} + e^{f(y, s_t)}]; with use_alg1_form off the first term
/// is scaled by gamma. Both expectations average over every listed sample.
double reward_f(const RbfCritic& critic, const VectorXd& s_t, const VectorXd& s_next,
                std::span<const VectorXd> samples_t, std::span<const VectorXd> samples_next,
                const AugmentedRewardConfig& config);

/// Same, drawing n_marginal_samples states from buckets t and t + 1.
double reward_f(const RbfCritic& critic, const VectorXd& s_t, const VectorXd& s_next,
                TimestepReplayBuffer& buffer, std::size_t t, const AugmentedRewardConfig& config,
                std::size_t n_marginal_samples);

/// log_q + lambda_pi r_pi + lambda_f r_f.
double augmented_reward(double log_q, double r_pi, double r_f, const AugmentedRewardConfig& config);

// ---------------------------------------------------------------- tabular

struct SoftPolicyResult {
  SoftmaxPolicy policy;
  MatrixXd q;
  VectorXd v;
  double residual = 0.0;
  std::size_t iterations = 0;
};

/// Fixed point of Q = r + gamma V(s'), V = tau logsumexp(Q / tau); the policy
/// is softmax(Q / tau). Throws std::invalid_argument for tau <= 0 and
/// std::runtime_error (with the residual) after max_iterations.
SoftPolicyResult soft_policy_iteration(const TabularMdp& mdp, double temperature, double tol,
                                       std::size_t max_iterations = 100000);

/// Hard value iteration; ties go to the lowest action index.
SoftPolicyResult greedy_policy_iteration(const TabularMdp& mdp, double tol,
                                         std::size_t max_iterations = 100000);

/// Occupancy-weighted mean of H(pi(.|s)) under the policy's own normalized
/// discounted state distribution.
double mean_policy_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy);

// ---------------------------------------------------------------- SAC

struct SacConfig {
  double gamma = 0.99;
  double polyak = 0.005;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  std::size_t batch_size = 128;
  Index hidden = 64;
  // Executed actions are clipped to [-action_bound, action_bound].
  double action_bound = 1.0;
  bool auto_alpha = true;
  double initial_alpha = 0.1;
  // Defaults to -action_dim when unset.
  std::optional<double> target_entropy;
};

struct Transition {
  VectorXd s;
  VectorXd a;
  double r = 0.0;
  VectorXd s_next;
  bool done = false;
};

/// Uniform FIFO transition store for the critic updates.
class TransitionBuffer {
 public:
  explicit TransitionBuffer(std::size_t capacity = 100000) : capacity_(capacity) {}
  void add(Transition t);
  std::size_t size() const { return items_.size(); }
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t next_ = 0;
};

struct SacLearner {
  GaussianPolicy policy;
  nn::Mlp q1, q2, q1_target, q2_target;
  nn::Var log_alpha;
  nn::AdamState actor_opt, q1_opt, q2_opt, alpha_opt;
  SacConfig config;

  SacLearner(Index state_dim, Index action_dim, const SacConfig& config, std::mt19937_64& rng);

  double alpha() const;
  // min(Q1, Q2) at a single pair.
  double q_value(const VectorXd& s, const VectorXd& a) const;
};

struct SacStepStats {
  double q_loss = 0.0;
  double policy_loss = 0.0;
  double alpha = 0.0;
  double mean_log_prob = 0.0;
};

/// One twin-Q update, one reparameterized actor update, one temperature
/// update and a Polyak step of the target networks. Throws
/// std::invalid_argument if the buffer holds fewer than batch_size
/// transitions and std::runtime_error on a non-finite loss.
SacStepStats sac_step(SacLearner& learner, const TransitionBuffer& buffer, std::mt19937_64& rng);

// ---------------------------------------------------------------- evaluation

struct ReturnEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Exact discounted return sum rho(s, a) r(s, a) (stderr 0).
ReturnEstimate exact_return(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                            const MatrixXd& reward);
/// Monte-Carlo discounted return over n_episodes rollouts truncated where
/// gamma^T < 1e-12. Throws std::invalid_argument for n_episodes == 0.
ReturnEstimate evaluate_return(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                               const MatrixXd& reward, std::size_t n_episodes, std::uint64_t seed);
/// Undiscounted episode return; actions are the policy mean when
/// deterministic is set.
ReturnEstimate evaluate_return(const ContinuousEnv& env, const GaussianPolicy& policy,
                               std::size_t n_episodes, std::uint64_t seed,
                               bool deterministic = false);

/// KL(N(m1, s1^2) || N(m2, s2^2)) summed over independent coordinates.
double gaussian_kl(const VectorXd& m1, const VectorXd& s1, const VectorXd& m2, const VectorXd& s2);

/// E_{s~d_pi}[KL(pi || pi_E)] / E_{s~d_rand}[KL(uniform || pi_E)], with d the
/// normalized discounted state occupancy computed exactly. Throws
/// std::domain_error when the denominator is zero.
double evaluate_policy_kl(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                          const SoftmaxPolicy& expert);

/// State-conditioned diagonal Gaussian given by a mean function.
struct GaussianActionModel {
  std::function<VectorXd(const VectorXd&)> mean;
  VectorXd std_dev;

  static GaussianActionModel of(const GaussianPolicy& policy);
};

/// Continuous version: n_eval_states states visited by each model (rollouts
/// from env.reset, actions clipped), analytic Gaussian KL against the expert.
double evaluate_policy_kl(const ContinuousEnv& env, const GaussianActionModel& policy,
                          const GaussianActionModel& expert,
                          const GaussianActionModel& random_baseline, std::size_t n_eval_states,
                          std::uint64_t seed);

// ---------------------------------------------------------------- metrics

struct MetricsRow {
  std::size_t iteration = 0;
  std::size_t env_steps = 0;
  double augmented_return = 0.0;
  double env_return = 0.0;
  double normalized_kl = 0.0;
  double lambda_pi = 0.0;
  double wallclock = 0.0;
};

/// Append-only CSV; every row carries the config hash and seed.
class MetricsWriter {
 public:
  static constexpr const char* kHeader =
      "config_hash,seed,iteration,env_steps,augmented_return,env_return,normalized_kl,lambda_pi,"
      "wallclock";

  // Writes the header when the file is new or empty. Throws
  // std::runtime_error if the file cannot be opened.
  MetricsWriter(const std::string& path, std::string config_hash, std::uint64_t seed);
  void append(const MetricsRow& row);

 private:
  std::ofstream out_;
  std::string hash_;
  std::uint64_t seed_;
};

}  // namespace ndi::rl
