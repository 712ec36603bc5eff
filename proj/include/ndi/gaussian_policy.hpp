#pragma once

#include "ndi/mdp.hpp"
#include "ndi/nn.hpp"

#include <cstdint>
#include <random>

namespace ndi {

/// Deterministic continuous-control environment.
class ContinuousEnv {
 public:
  virtual ~ContinuousEnv() = default;
  virtual Index state_dim() const = 0;
  virtual Index action_dim() const = 0;
  virtual double action_bound() const = 0;
  virtual std::size_t episode_length() const = 0;
  virtual VectorXd reset(std::mt19937_64& rng) const = 0;
  virtual VectorXd step(const VectorXd& s, const VectorXd& a) const = 0;
  virtual double reward(const VectorXd& s, const VectorXd& a) const = 0;
};

/// State-conditioned diagonal Gaussian: a ~ N(mean_net(s), exp(log_std)^2).
/// The log standard deviation is state-independent and clamped to [-5, 2].
class GaussianPolicy {
 public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  GaussianPolicy(nn::Mlp mean_net, VectorXd log_std);
  GaussianPolicy(Index state_dim, Index action_dim, Index hidden, std::mt19937_64& rng,
                 double initial_log_std = 0.0);

  Index state_dim() const { return mean_net_.input_width(); }
  Index action_dim() const { return mean_net_.output_width(); }

  // Graph-building versions; states is (state_dim x batch).
  nn::Var mean(const nn::Var& states) const;
  nn::Var log_std() const;  // (action_dim x 1), clamped

  VectorXd mean(const VectorXd& s) const;
  VectorXd std_dev() const;
  VectorXd sample(const VectorXd& s, std::mt19937_64& rng) const;
  double log_prob(const VectorXd& s, const VectorXd& a) const;

  std::vector<nn::Var> parameters() const;
  const nn::Mlp& mean_net() const { return mean_net_; }
  nn::Mlp& mean_net() { return mean_net_; }
  const nn::Var& raw_log_std() const { return log_std_; }

 private:
  nn::Mlp mean_net_;
  nn::Var log_std_;
};

double policy_log_prob(const GaussianPolicy& policy, const VectorXd& s, const VectorXd& a);

/// Gaussian log-density of a under N(mean, diag(std^2)).
double gaussian_log_density(const VectorXd& a, const VectorXd& mean, const VectorXd& std_dev);

/// Rolls out the policy with actions clipped to the environment bound.
/// Throws std::runtime_error if the policy produces a non-finite action.
ContinuousTrajectory sample_trajectory(const ContinuousEnv& env, const GaussianPolicy& policy,
                                       std::size_t max_steps, std::uint64_t seed);

}  // namespace ndi
