#include "ndi/gaussian_policy.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ndi {

GaussianPolicy::GaussianPolicy(nn::Mlp mean_net, VectorXd log_std)
    : mean_net_(std::move(mean_net)), log_std_(nn::parameter(std::move(log_std))) {
  if (log_std_->rows() != mean_net_.output_width()) {
    throw std::invalid_argument("GaussianPolicy: log_std size differs from action dimension");
  }
}

GaussianPolicy::GaussianPolicy(Index state_dim, Index action_dim, Index hidden,
                               std::mt19937_64& rng, double initial_log_std)
    : mean_net_({state_dim, hidden, hidden, action_dim}, false, rng),
      log_std_(nn::parameter(nn::Matrix::Constant(action_dim, 1, initial_log_std))) {}

nn::Var GaussianPolicy::mean(const nn::Var& states) const { return mean_net_.forward(states); }

nn::Var GaussianPolicy::log_std() const { return nn::clamp(log_std_, kLogStdMin, kLogStdMax); }

VectorXd GaussianPolicy::mean(const VectorXd& s) const {
  return mean_net_.forward(nn::constant(s))->value.col(0);
}

VectorXd GaussianPolicy::std_dev() const { return log_std()->value.col(0).array().exp(); }

VectorXd GaussianPolicy::sample(const VectorXd& s, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  VectorXd a = mean(s);
  const VectorXd sd = std_dev();
  for (Index i = 0; i < a.size(); ++i) a(i) += sd(i) * normal(rng);
  return a;
}

double GaussianPolicy::log_prob(const VectorXd& s, const VectorXd& a) const {
  return gaussian_log_density(a, mean(s), std_dev());
}

std::vector<nn::Var> GaussianPolicy::parameters() const {
  auto out = mean_net_.parameters();
  out.push_back(log_std_);
  return out;
}

double policy_log_prob(const GaussianPolicy& policy, const VectorXd& s, const VectorXd& a) {
  return policy.log_prob(s, a);
}

double gaussian_log_density(const VectorXd& a, const VectorXd& mean, const VectorXd& std_dev) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const auto z = (a - mean).array() / std_dev.array();
  return (-0.5 * z.square() - std_dev.array().log() - half_log_2pi).sum();
}

ContinuousTrajectory sample_trajectory(const ContinuousEnv& env, const GaussianPolicy& policy,
                                       std::size_t max_steps, std::uint64_t seed) {
  if (max_steps == 0) throw std::invalid_argument("sample_trajectory: max_steps must be >= 1");
  std::mt19937_64 rng(seed);
  VectorXd s = env.reset(rng);
  ContinuousTrajectory traj;
  traj.steps.reserve(max_steps);
  const double bound = env.action_bound();
  for (std::size_t t = 0; t < max_steps; ++t) {
    VectorXd a = policy.sample(s, rng);
    if (!a.allFinite()) {
      throw std::runtime_error("sample_trajectory: non-finite action at step " +
                               std::to_string(t));
    }
    a = a.cwiseMax(-bound).cwiseMin(bound);
    VectorXd next = env.step(s, a);
    const double r = env.reward(s, a);
    traj.steps.push_back({t, s, a, next, r});
    s = std::move(next);
  }
  return traj;
}

}  // namespace ndi
