#pragma once

// Exact information-theoretic quantities on tabular MDPs: occupancy measures,
// generalized entropies, mutual information and its NWJ lower bound, the
// state-action entropy lower bound, and both sides of its gradient identity.

#include "ndi/mdp.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ndi {

/// Non-normalized discounted occupancy rho(s, a) with total mass 1/(1-gamma).
struct OccupancyTable {
  MatrixXd rho;
  double mass = 0.0;
  // 0 when computed by the exact linear solve, else the recursion length.
  std::size_t truncation_T = 0;

  VectorXd state_occupancy() const { return rho.rowwise().sum(); }
};

enum class OccupancyMethod { LinearSolve, Recursion };

/// rho(s, a) = sum_t gamma^t p_t(s) pi(a|s). The linear solve computes
/// rho_state = (I - gamma P_pi^T)^{-1} p_0; the recursion truncates at the
/// first T with gamma^T / (1 - gamma) < tol.
OccupancyTable occupancy_measure(const TabularMdp& mdp, const SoftmaxPolicy& policy, double tol,
                                 OccupancyMethod method = OccupancyMethod::LinearSolve);

/// -sum p log p over a non-normalized density, with 0 log 0 := 0.
/// Throws std::invalid_argument on a negative entry.
template <typename Derived>
double generalized_entropy(const Eigen::DenseBase<Derived>& density) {
  double h = 0.0;
  for (Index j = 0; j < density.cols(); ++j) {
    for (Index i = 0; i < density.rows(); ++i) {
      const double p = density(i, j);
      if (p < 0.0) throw std::invalid_argument("generalized_entropy: negative entry");
      if (p > 0.0) h -= p * std::log(p);
    }
  }
  return h;
}

/// Discounted causal entropy -sum rho(s, a) log pi(a|s).
double discounted_policy_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy, double tol);

/// Expected discounted reward sum rho(s, a) r(s, a).
double expected_return(const OccupancyTable& occupancy, const MatrixXd& reward);

/// Joint distribution of (x, y) with its marginals; rows index x.
class JointTable {
 public:
  // Throws unless entries are >= 0 and sum to 1 within 1e-10.
  explicit JointTable(MatrixXd joint);

  const MatrixXd& joint() const { return joint_; }
  const VectorXd& marg_x() const { return marg_x_; }
  const VectorXd& marg_y() const { return marg_y_; }

 private:
  MatrixXd joint_;
  VectorXd marg_x_;
  VectorXd marg_y_;
};

/// Critic f(x, y); rows index x.
struct CriticTable {
  MatrixXd values;

  // Throws std::invalid_argument on a non-finite value.
  explicit CriticTable(MatrixXd v);
  static CriticTable constant(Index n, double value);
};

inline constexpr double kCriticFloor = -30.0;

double mutual_information(const JointTable& joint);

/// E_joint[f] - e^{-1} E_x E_y [e^f]. Throws std::overflow_error naming the
/// cell where e^f overflows.
double nwj_bound(const JointTable& joint, const CriticTable& critic);

/// log(joint / (marg_x marg_y)) + 1 on supported cells, kCriticFloor elsewhere.
CriticTable optimal_critic_table(const JointTable& joint);

/// Joint of (s_t, s_{t+1}) given the marginal p_t of s_t.
JointTable consecutive_joint(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                             const VectorXd& p_t);

/// H(s_t | s_{t-1}) = H(s_{t-1}, s_t) - H(s_{t-1}); requires t >= 1.
double conditional_state_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                 std::size_t t);
/// H(a_t | s_t) = sum_s p_t(s) H(pi(.|s)).
double conditional_action_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                  std::size_t t);

/// Per-timestep critics f_t(s_t, s_{t+1}); timesteps past the end reuse the
/// last table.
class CriticFamily {
 public:
  static CriticFamily constant(CriticTable critic);
  static CriticFamily schedule(std::vector<CriticTable> critics);

  const CriticTable& at(std::size_t t) const;
  std::size_t size() const { return tables_.size(); }
  // Upper bound on |I_NWJ| for any member: max|f| + e^{max f - 1}.
  double nwj_magnitude_bound() const;

 private:
  explicit CriticFamily(std::vector<CriticTable> tables);
  std::vector<CriticTable> tables_;
};

/// Optimal critics for t = 0 .. horizon-1 under the policy's own marginals.
std::vector<CriticTable> optimal_critics(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                         std::size_t horizon);

struct SaelboReport {
  double h_s0 = 0.0;
  double h_policy = 0.0;
  double mi_sum = 0.0;
  double constant_c_gamma = 0.0;
  double saelbo = 0.0;
  std::size_t truncation_T = 0;
};

/// ln(1 - gamma) / (1 - gamma); the normalization gap between entropies of
/// normalized state marginals and the non-normalized occupancy.
double occupancy_entropy_constant(double gamma);

/// h_s0 + (1 + gamma) h_policy + gamma sum_t gamma^t I_NWJ(s_{t+1}; s_t),
/// the sum truncated at T with gamma^T * bound < tol.
SaelboReport saelbo(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                    const CriticFamily& critics, double tol);

/// Generalized reverse KL sum p log(p / q). Throws std::invalid_argument on
/// unequal masses or when q vanishes where p does not (naming the cell).
double reverse_kl_occupancy(const OccupancyTable& p, const OccupancyTable& q);

/// Time-indexed reward tables r_t(s, a), t = 0 .. T-1.
using RewardSchedule = std::vector<MatrixXd>;

/// Exact discounted policy gradient with respect to softmax logits of
/// J = sum_t gamma^t E[r_t(s_t, a_t)], truncated after the schedule.
MatrixXd exact_policy_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                               const RewardSchedule& rewards);

/// Augmented rewards r_pi + r_f with the policy and marginals frozen at
/// their current values, for t = 0 .. horizon-1.
RewardSchedule saelbo_rewards(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                              const CriticFamily& critics, std::size_t horizon);

/// Central finite differences of the SAELBO in the logits theta, with the
/// policy, marginals and joints recomputed at theta +/- eps.
MatrixXd saelbo_gradient_fd(const TabularMdp& mdp, const MatrixXd& theta,
                            const CriticFamily& critics, double eps, double tol);

/// Policy gradient of J(pi, r_pi + r_f).
MatrixXd saelbo_gradient_pg(const TabularMdp& mdp, const MatrixXd& theta,
                            const CriticFamily& critics, double tol);

/// Horizon used by the SAELBO truncation for the given critics.
std::size_t saelbo_horizon(const TabularMdp& mdp, const CriticFamily& critics, double tol);

}  // namespace ndi
