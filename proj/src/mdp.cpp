#include "ndi/mdp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace ndi {

TabularMdp::TabularMdp(MatrixXi transition, VectorXd initial_dist, MatrixXd reward,
                       double discount)
    : transition_(std::move(transition)),
      initial_(std::move(initial_dist)),
      reward_(std::move(reward)),
      discount_(discount) {
  if (transition_.rows() < 1 || transition_.cols() < 1) {
    throw std::invalid_argument("TabularMdp: need at least one state and one action");
  }
  if (initial_.size() != transition_.rows()) {
    throw std::invalid_argument("TabularMdp: initial_dist size differs from state count");
  }
  if ((initial_.array() < 0.0).any() || std::abs(initial_.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("TabularMdp: initial_dist is not a probability vector");
  }
  if ((transition_.array() < 0).any() || (transition_.array() >= transition_.rows()).any()) {
    throw std::invalid_argument("TabularMdp: transition entry out of range");
  }
  if (reward_.rows() != transition_.rows() || reward_.cols() != transition_.cols()) {
    throw std::invalid_argument("TabularMdp: reward shape differs from transition shape");
  }
  if (!(discount_ >= 0.0 && discount_ < 1.0)) {
    throw std::invalid_argument("TabularMdp: discount must lie in [0, 1)");
  }
}

TabularMdp TabularMdp::with_reward(MatrixXd reward) const {
  return TabularMdp(transition_, initial_, std::move(reward), discount_);
}

TabularMdp TabularMdp::with_discount(double discount) const {
  return TabularMdp(transition_, initial_, reward_, discount);
}

SoftmaxPolicy::SoftmaxPolicy(MatrixXd logits) : logits_(std::move(logits)) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  probs_.resize(logits_.rows(), logits_.cols());
  log_probs_.resize(logits_.rows(), logits_.cols());
  for (Index s = 0; s < logits_.rows(); ++s) {
    const auto row = logits_.row(s);
    if (row.hasNaN() || (row.array() == inf).any()) {
      throw std::invalid_argument("SoftmaxPolicy: logits must be finite or -inf");
    }
    const double mx = row.maxCoeff();
    if (!std::isfinite(mx)) {
      throw std::invalid_argument("SoftmaxPolicy: row " + std::to_string(s) +
                                  " has no finite logit");
    }
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    log_probs_.row(s) = row.array() - lse;
    probs_.row(s) = log_probs_.row(s).array().exp();
  }
}

SoftmaxPolicy SoftmaxPolicy::uniform(Index n_states, Index n_actions) {
  return SoftmaxPolicy(MatrixXd::Zero(n_states, n_actions));
}

SoftmaxPolicy SoftmaxPolicy::from_probabilities(const MatrixXd& probabilities) {
  if ((probabilities.array() < 0.0).any()) {
    throw std::invalid_argument("SoftmaxPolicy: negative probability");
  }
  MatrixXd logits = probabilities.array().log();
  return SoftmaxPolicy(std::move(logits));
}

bool check_injective_dynamics(const TabularMdp& mdp) {
  for (Index s = 0; s < mdp.n_states(); ++s) {
    std::unordered_set<int> targets;
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      if (!targets.insert(mdp.next(s, a)).second) return false;
    }
  }
  return true;
}

MatrixXd policy_transition_matrix(const TabularMdp& mdp, const SoftmaxPolicy& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
    throw std::invalid_argument("policy shape does not match MDP");
  }
  MatrixXd p = MatrixXd::Zero(mdp.n_states(), mdp.n_states());
  const auto& pi = policy.probabilities();
  for (Index s = 0; s < mdp.n_states(); ++s) {
    for (Index a = 0; a < mdp.n_actions(); ++a) p(s, mdp.next(s, a)) += pi(s, a);
  }
  return p;
}

MarginalSchedule state_marginals(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                 std::size_t horizon) {
  if (horizon == 0) throw std::invalid_argument("state_marginals: horizon must be >= 1");
  const MatrixXd step = policy_transition_matrix(mdp, policy).transpose();
  MarginalSchedule out;
  out.horizon = horizon;
  out.per_timestep.reserve(horizon);
  out.per_timestep.push_back(mdp.initial_dist());
  for (std::size_t t = 1; t < horizon; ++t) {
    out.per_timestep.push_back(step * out.per_timestep.back());
  }
  return out;
}

TabularTrajectory sample_trajectory(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                    std::size_t max_steps, std::uint64_t seed) {
  if (max_steps == 0) throw std::invalid_argument("sample_trajectory: max_steps must be >= 1");
  std::mt19937_64 rng(seed);
  const auto& init = mdp.initial_dist();
  std::discrete_distribution<int> start(init.data(), init.data() + init.size());
  int s = start(rng);
  TabularTrajectory traj;
  traj.steps.reserve(max_steps);
  const auto& pi = policy.probabilities();
  for (std::size_t t = 0; t < max_steps; ++t) {
    std::vector<double> row(pi.cols());
    for (Index a = 0; a < pi.cols(); ++a) row[a] = pi(s, a);
    std::discrete_distribution<int> choose(row.begin(), row.end());
    const int a = choose(rng);
    const int next = mdp.next(s, a);
    traj.steps.push_back({t, s, a, next, mdp.reward()(s, a)});
    s = next;
  }
  return traj;
}

double policy_log_prob(const SoftmaxPolicy& policy, Index s, Index a) {
  return policy.log_probabilities()(s, a);
}

std::size_t truncation_horizon(double gamma, double bound, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("truncation_horizon: tol must be positive");
  if (gamma <= 0.0 || bound <= tol) return 1;
  const double t = std::log(tol / bound) / std::log(gamma);
  const auto horizon = static_cast<std::size_t>(std::floor(t)) + 1;
  if (horizon > 10'000'000) throw std::runtime_error("truncation_horizon: horizon too large");
  return std::max<std::size_t>(horizon, 1);
}

}  // namespace ndi
