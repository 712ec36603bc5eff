#include "ndi/occupancy.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <string>

namespace ndi {
namespace {

constexpr double kInvE = 1.0 / std::numbers::e;

void require_tol(double tol, const char* who) {
  if (!(tol > 0.0)) throw std::invalid_argument(std::string(who) + ": tol must be positive");
}

}  // namespace

OccupancyTable occupancy_measure(const TabularMdp& mdp, const SoftmaxPolicy& policy, double tol,
                                 OccupancyMethod method) {
  require_tol(tol, "occupancy_measure");
  const double gamma = mdp.discount();
  const MatrixXd p_pi = policy_transition_matrix(mdp, policy);
  OccupancyTable out;
  out.mass = 1.0 / (1.0 - gamma);
  VectorXd state;
  if (method == OccupancyMethod::LinearSolve) {
    const Index n = mdp.n_states();
    const MatrixXd system = MatrixXd::Identity(n, n) - gamma * p_pi.transpose();
    Eigen::FullPivLU<MatrixXd> lu(system);
    if (!lu.isInvertible()) {
      throw std::runtime_error("occupancy_measure: singular occupancy system");
    }
    state = lu.solve(mdp.initial_dist());
  } else {
    const std::size_t horizon = truncation_horizon(gamma, out.mass, tol);
    out.truncation_T = horizon;
    VectorXd p = mdp.initial_dist();
    state = p;
    double weight = 1.0;
    const MatrixXd step = p_pi.transpose();
    for (std::size_t t = 1; t < horizon; ++t) {
      p = step * p;
      weight *= gamma;
      state += weight * p;
    }
  }
  out.rho = policy.probabilities().array().colwise() * state.array();
  return out;
}

double discounted_policy_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy, double tol) {
  const auto occ = occupancy_measure(mdp, policy, tol);
  const auto& logp = policy.log_probabilities();
  double h = 0.0;
  for (Index s = 0; s < occ.rho.rows(); ++s) {
    for (Index a = 0; a < occ.rho.cols(); ++a) {
      if (occ.rho(s, a) > 0.0) h -= occ.rho(s, a) * logp(s, a);
    }
  }
  return h;
}

double expected_return(const OccupancyTable& occupancy, const MatrixXd& reward) {
  if (reward.rows() != occupancy.rho.rows() || reward.cols() != occupancy.rho.cols()) {
    throw std::invalid_argument("expected_return: reward shape mismatch");
  }
  double j = 0.0;
  for (Index i = 0; i < reward.size(); ++i) {
    if (occupancy.rho.data()[i] > 0.0) j += occupancy.rho.data()[i] * reward.data()[i];
  }
  return j;
}

JointTable::JointTable(MatrixXd joint) : joint_(std::move(joint)) {
  if ((joint_.array() < 0.0).any() || !joint_.allFinite()) {
    throw std::invalid_argument("JointTable: entries must be finite and non-negative");
  }
  if (std::abs(joint_.sum() - 1.0) > 1e-10) {
    throw std::invalid_argument("JointTable: entries must sum to 1");
  }
  marg_x_ = joint_.rowwise().sum();
  marg_y_ = joint_.colwise().sum().transpose();
}

CriticTable::CriticTable(MatrixXd v) : values(std::move(v)) {
  if (!values.allFinite()) throw std::invalid_argument("CriticTable: non-finite value");
}

CriticTable CriticTable::constant(Index n, double value) {
  return CriticTable(MatrixXd::Constant(n, n, value));
}

double mutual_information(const JointTable& joint) {
  const auto& j = joint.joint();
  double mi = 0.0;
  for (Index x = 0; x < j.rows(); ++x) {
    for (Index y = 0; y < j.cols(); ++y) {
      const double p = j(x, y);
      if (p > 0.0) {
        mi += p * (std::log(p) - std::log(joint.marg_x()(x)) - std::log(joint.marg_y()(y)));
      }
    }
  }
  return mi;
}

double nwj_bound(const JointTable& joint, const CriticTable& critic) {
  const auto& j = joint.joint();
  const auto& f = critic.values;
  if (f.rows() != j.rows() || f.cols() != j.cols()) {
    throw std::invalid_argument("nwj_bound: critic shape differs from joint");
  }
  double on_joint = 0.0;
  double on_product = 0.0;
  for (Index x = 0; x < j.rows(); ++x) {
    for (Index y = 0; y < j.cols(); ++y) {
      const double ef = std::exp(f(x, y));
      if (!std::isfinite(ef)) {
        throw std::overflow_error("nwj_bound: exp(f) overflows at cell (" + std::to_string(x) +
                                  ", " + std::to_string(y) + ")");
      }
      if (j(x, y) > 0.0) on_joint += j(x, y) * f(x, y);
      on_product += joint.marg_x()(x) * joint.marg_y()(y) * ef;
    }
  }
  return on_joint - kInvE * on_product;
}

CriticTable optimal_critic_table(const JointTable& joint) {
  const auto& j = joint.joint();
  MatrixXd f = MatrixXd::Constant(j.rows(), j.cols(), kCriticFloor);
  for (Index x = 0; x < j.rows(); ++x) {
    for (Index y = 0; y < j.cols(); ++y) {
      if (j(x, y) > 0.0) {
        f(x, y) = std::log(j(x, y)) - std::log(joint.marg_x()(x)) - std::log(joint.marg_y()(y)) + 1.0;
      }
    }
  }
  return CriticTable(std::move(f));
}

JointTable consecutive_joint(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                             const VectorXd& p_t) {
  const MatrixXd p_pi = policy_transition_matrix(mdp, policy);
  return JointTable(p_pi.array().colwise() * p_t.array());
}

double conditional_state_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                 std::size_t t) {
  if (t < 1) throw std::invalid_argument("conditional_state_entropy: need t >= 1");
  const auto marginals = state_marginals(mdp, policy, t);
  const VectorXd& prev = marginals[t - 1];
  const auto joint = consecutive_joint(mdp, policy, prev);
  return generalized_entropy(joint.joint()) - generalized_entropy(prev);
}

double conditional_action_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                  std::size_t t) {
  const auto marginals = state_marginals(mdp, policy, t + 1);
  const VectorXd& p = marginals[t];
  const auto& pi = policy.probabilities();
  double h = 0.0;
  for (Index s = 0; s < pi.rows(); ++s) {
    if (p(s) > 0.0) h += p(s) * generalized_entropy(pi.row(s));
  }
  return h;
}

CriticFamily::CriticFamily(std::vector<CriticTable> tables) : tables_(std::move(tables)) {
  if (tables_.empty()) throw std::invalid_argument("CriticFamily: no critics");
}

CriticFamily CriticFamily::constant(CriticTable critic) {
  return CriticFamily(std::vector<CriticTable>{std::move(critic)});
}

CriticFamily CriticFamily::schedule(std::vector<CriticTable> critics) {
  return CriticFamily(std::move(critics));
}

const CriticTable& CriticFamily::at(std::size_t t) const {
  return tables_[std::min(t, tables_.size() - 1)];
}

double CriticFamily::nwj_magnitude_bound() const {
  double max_abs = 0.0;
  double max_val = -std::numeric_limits<double>::infinity();
  for (const auto& c : tables_) {
    max_abs = std::max(max_abs, c.values.cwiseAbs().maxCoeff());
    max_val = std::max(max_val, c.values.maxCoeff());
  }
  return max_abs + std::exp(max_val - 1.0);
}

std::vector<CriticTable> optimal_critics(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                         std::size_t horizon) {
  const auto marginals = state_marginals(mdp, policy, horizon);
  std::vector<CriticTable> out;
  out.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    out.push_back(optimal_critic_table(consecutive_joint(mdp, policy, marginals[t])));
  }
  return out;
}

double occupancy_entropy_constant(double gamma) { return std::log(1.0 - gamma) / (1.0 - gamma); }

std::size_t saelbo_horizon(const TabularMdp& mdp, const CriticFamily& critics, double tol) {
  require_tol(tol, "saelbo");
  return truncation_horizon(mdp.discount(), std::max(1.0, critics.nwj_magnitude_bound()), tol);
}

SaelboReport saelbo(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                    const CriticFamily& critics, double tol) {
  const double gamma = mdp.discount();
  SaelboReport r;
  r.truncation_T = saelbo_horizon(mdp, critics, tol);
  r.h_s0 = generalized_entropy(mdp.initial_dist());
  r.h_policy = discounted_policy_entropy(mdp, policy, tol);
  const MatrixXd p_pi = policy_transition_matrix(mdp, policy);
  const MatrixXd step = p_pi.transpose();
  VectorXd p = mdp.initial_dist();
  double weight = 1.0;
  for (std::size_t t = 0; t < r.truncation_T; ++t) {
    const JointTable joint(p_pi.array().colwise() * p.array());
    r.mi_sum += weight * nwj_bound(joint, critics.at(t));
    p = step * p;
    weight *= gamma;
  }
  r.constant_c_gamma = occupancy_entropy_constant(gamma);
  r.saelbo = r.h_s0 + (1.0 + gamma) * r.h_policy + gamma * r.mi_sum;
  return r;
}

double reverse_kl_occupancy(const OccupancyTable& p, const OccupancyTable& q) {
  if (p.rho.rows() != q.rho.rows() || p.rho.cols() != q.rho.cols()) {
    throw std::invalid_argument("reverse_kl_occupancy: shape mismatch");
  }
  if (std::abs(p.rho.sum() - q.rho.sum()) > 1e-8 * std::max(1.0, p.rho.sum())) {
    throw std::invalid_argument("reverse_kl_occupancy: masses differ");
  }
  double kl = 0.0;
  for (Index s = 0; s < p.rho.rows(); ++s) {
    for (Index a = 0; a < p.rho.cols(); ++a) {
      const double x = p.rho(s, a);
      if (x <= 0.0) continue;
      const double y = q.rho(s, a);
      if (!(y > 0.0)) {
        throw std::invalid_argument("reverse_kl_occupancy: q vanishes at cell (" +
                                    std::to_string(s) + ", " + std::to_string(a) +
                                    ") where p has mass");
      }
      kl += x * std::log(x / y);
    }
  }
  return kl;
}

MatrixXd exact_policy_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                               const RewardSchedule& rewards) {
  const std::size_t horizon = rewards.size();
  if (horizon == 0) throw std::invalid_argument("exact_policy_gradient: empty schedule");
  const Index n_s = mdp.n_states();
  const Index n_a = mdp.n_actions();
  const auto& pi = policy.probabilities();
  const double gamma = mdp.discount();
  const auto marginals = state_marginals(mdp, policy, horizon);

  // Backward pass: Q_t = r_t + gamma V_{t+1}(s'), V_T = 0.
  std::vector<MatrixXd> q(horizon);
  VectorXd v_next = VectorXd::Zero(n_s);
  for (std::size_t t = horizon; t-- > 0;) {
    MatrixXd qt = rewards[t];
    for (Index s = 0; s < n_s; ++s) {
      for (Index a = 0; a < n_a; ++a) qt(s, a) += gamma * v_next(mdp.next(s, a));
    }
    v_next = pi.cwiseProduct(qt).rowwise().sum();
    q[t] = std::move(qt);
  }

  // d log pi(a|s) / d theta(s, b) = [a = b] - pi(b|s).
  MatrixXd grad = MatrixXd::Zero(n_s, n_a);
  double weight = 1.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    const VectorXd v = pi.cwiseProduct(q[t]).rowwise().sum();
    const MatrixXd advantage = q[t].colwise() - v;
    grad += weight * (pi.cwiseProduct(advantage).array().colwise() * marginals[t].array()).matrix();
    weight *= gamma;
  }
  return grad;
}

RewardSchedule saelbo_rewards(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                              const CriticFamily& critics, std::size_t horizon) {
  const double gamma = mdp.discount();
  const auto marginals = state_marginals(mdp, policy, horizon + 1);
  const MatrixXd r_pi = -(1.0 + gamma) * policy.log_probabilities();
  RewardSchedule out;
  out.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const MatrixXd& f = critics.at(t).values;
    const MatrixXd ef = f.array().exp();
    if (!ef.allFinite()) throw std::overflow_error("saelbo_rewards: exp(f) overflows");
    // h(s') = E_{x ~ q_t} e^{f(x, s')}, g(s) = E_{y ~ q_{t+1}} e^{f(s, y)}.
    const VectorXd h = ef.transpose() * marginals[t];
    const VectorXd g = ef * marginals[t + 1];
    MatrixXd r = r_pi;
    for (Index s = 0; s < mdp.n_states(); ++s) {
      for (Index a = 0; a < mdp.n_actions(); ++a) {
        const int sn = mdp.next(s, a);
        r(s, a) += gamma * f(s, sn) - gamma * kInvE * (h(sn) + g(s));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

MatrixXd saelbo_gradient_fd(const TabularMdp& mdp, const MatrixXd& theta,
                            const CriticFamily& critics, double eps, double tol) {
  if (!(eps > 0.0)) throw std::invalid_argument("saelbo_gradient_fd: eps must be positive");
  MatrixXd grad(theta.rows(), theta.cols());
  MatrixXd probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    probe.data()[i] = theta.data()[i] + eps;
    const double up = saelbo(mdp, SoftmaxPolicy(probe), critics, tol).saelbo;
    probe.data()[i] = theta.data()[i] - eps;
    const double down = saelbo(mdp, SoftmaxPolicy(probe), critics, tol).saelbo;
    probe.data()[i] = theta.data()[i];
    grad.data()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

MatrixXd saelbo_gradient_pg(const TabularMdp& mdp, const MatrixXd& theta,
                            const CriticFamily& critics, double tol) {
  const SoftmaxPolicy policy(theta);
  const std::size_t horizon = saelbo_horizon(mdp, critics, tol);
  return exact_policy_gradient(mdp, policy, saelbo_rewards(mdp, policy, critics, horizon));
}

}  // namespace ndi
