#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace ndi {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;

/// Finite MDP with deterministic transitions s' = transition(s, a).
class TabularMdp {
 public:
  // Throws std::invalid_argument if any invariant fails: initial_dist is a
  // probability vector (sum within 1e-12), transitions are valid indices,
  // reward matches the transition shape, discount in [0, 1).
  TabularMdp(MatrixXi transition, VectorXd initial_dist, MatrixXd reward, double discount);

  Index n_states() const { return transition_.rows(); }
  Index n_actions() const { return transition_.cols(); }
  int next(Index s, Index a) const { return transition_(s, a); }
  const MatrixXi& transition() const { return transition_; }
  const VectorXd& initial_dist() const { return initial_; }
  const MatrixXd& reward() const { return reward_; }
  double discount() const { return discount_; }

  TabularMdp with_reward(MatrixXd reward) const;
  TabularMdp with_discount(double discount) const;

 private:
  MatrixXi transition_;
  VectorXd initial_;
  MatrixXd reward_;
  double discount_;
};

/// Softmax policy over a logit table (state x action). Logits may be -inf to
/// express zero-probability actions; every row needs one finite entry.
class SoftmaxPolicy {
 public:
  explicit SoftmaxPolicy(MatrixXd logits);

  static SoftmaxPolicy uniform(Index n_states, Index n_actions);
  // Logits = log(probabilities); zero entries become -inf.
  static SoftmaxPolicy from_probabilities(const MatrixXd& probabilities);

  const MatrixXd& logits() const { return logits_; }
  const MatrixXd& probabilities() const { return probs_; }
  const MatrixXd& log_probabilities() const { return log_probs_; }
  Index n_states() const { return logits_.rows(); }
  Index n_actions() const { return logits_.cols(); }

 private:
  MatrixXd logits_;
  MatrixXd probs_;
  MatrixXd log_probs_;
};

/// Exact per-timestep state marginals p_t, t = 0 .. horizon-1.
struct MarginalSchedule {
  std::vector<VectorXd> per_timestep;
  std::size_t horizon = 0;

  const VectorXd& operator[](std::size_t t) const { return per_timestep[t]; }
};

template <typename State, typename Action>
struct Step {
  std::size_t t = 0;
  State s{};
  Action a{};
  State s_next{};
  double r_env = 0.0;
};

template <typename State, typename Action>
struct Trajectory {
  std::vector<Step<State, Action>> steps;

  std::size_t size() const { return steps.size(); }
};

using TabularTrajectory = Trajectory<int, int>;
using ContinuousTrajectory = Trajectory<VectorXd, VectorXd>;

/// True iff for every state the map a -> transition(s, a) has no collisions.
bool check_injective_dynamics(const TabularMdp& mdp);

/// P_pi(s, s') = sum_a pi(a|s) [transition(s, a) = s'].
MatrixXd policy_transition_matrix(const TabularMdp& mdp, const SoftmaxPolicy& policy);

/// Forward recursion p_{t+1} = P_pi^T p_t. Throws on horizon 0.
MarginalSchedule state_marginals(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                 std::size_t horizon);

/// Samples s_0 ~ initial_dist, then max_steps transitions. Throws on max_steps 0.
TabularTrajectory sample_trajectory(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                    std::size_t max_steps, std::uint64_t seed);

double policy_log_prob(const SoftmaxPolicy& policy, Index s, Index a);

/// Smallest T >= 1 with gamma^T * bound < tol (1 when gamma is 0).
std::size_t truncation_horizon(double gamma, double bound, double tol);

}  // namespace ndi
