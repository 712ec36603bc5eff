#include "ndi/rl.hpp"

#include "ndi/errors.hpp"
#include "ndi/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ndi::rl {

// ---------------------------------------------------------------- buffer

TimestepReplayBuffer::TimestepReplayBuffer(std::size_t capacity_per_bucket, std::uint64_t seed)
    : capacity_(capacity_per_bucket), rng_(seed) {
  if (capacity_ == 0) throw std::invalid_argument("TimestepReplayBuffer: capacity must be >= 1");
}

void TimestepReplayBuffer::add(std::size_t t, const VectorXd& state) {
  Ring& ring = buckets_[t];
  if (ring.items.size() < capacity_) {
    ring.items.push_back({state, t});
    ++total_;
  } else {
    ring.items[ring.next] = {state, t};
  }
  ring.next = (ring.next + 1) % capacity_;
}

std::size_t TimestepReplayBuffer::bucket_size(std::size_t t) const {
  auto it = buckets_.find(t);
  return it == buckets_.end() ? 0 : it->second.items.size();
}

std::vector<TimestepReplayBuffer::Entry> TimestepReplayBuffer::bucket(std::size_t t) const {
  auto it = buckets_.find(t);
  if (it == buckets_.end()) return {};
  const Ring& ring = it->second;
  if (ring.items.size() < capacity_) return ring.items;
  std::vector<Entry> out;
  out.reserve(ring.items.size());
  for (std::size_t i = 0; i < ring.items.size(); ++i) {
    out.push_back(ring.items[(ring.next + i) % ring.items.size()]);
  }
  return out;
}

const TimestepReplayBuffer::Entry& TimestepReplayBuffer::sample(std::size_t t) {
  if (total_ == 0) throw std::logic_error("TimestepReplayBuffer: sampling from an empty buffer");
  auto it = buckets_.find(t);
  if (it != buckets_.end() && !it->second.items.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, it->second.items.size() - 1);
    return it->second.items[pick(rng_)];
  }
  if (fallbacks_++ == 0) {
    std::clog << "warning: replay bucket " << t << " is empty; sampling the pooled buffer\n";
  }
  std::uniform_int_distribution<std::size_t> pick(0, total_ - 1);
  std::size_t k = pick(rng_);
  for (const auto& [_, ring] : buckets_) {
    if (k < ring.items.size()) return ring.items[k];
    k -= ring.items.size();
  }
  throw std::logic_error("TimestepReplayBuffer: inconsistent size");
}

// ---------------------------------------------------------------- critic

RbfCritic::RbfCritic(double bandwidth) : bandwidth_(bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("RbfCritic: bandwidth must be positive");
}

double RbfCritic::kernel(const VectorXd& a, const VectorXd& b) const {
  return std::exp(-(a - b).squaredNorm() / bandwidth_);
}

double RbfCritic::value(const VectorXd& s, const VectorXd& s_next) const {
  return -(s - s_next).squaredNorm() / bandwidth_ - std::log(normalizer_) + 1.0;
}

void RbfCritic::observe(std::span<const std::pair<VectorXd, VectorXd>> marginal_pairs) {
  for (const auto& [x, y] : marginal_pairs) {
    const double k = kernel(x, y);
    if (count_ == 0) normalizer_ = 0.0;
    ++count_;
    normalizer_ += (k - normalizer_) / double(count_);
  }
}

void RbfCritic::set_normalizer(double n) {
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("RbfCritic: normalizer must be positive and finite");
  }
  normalizer_ = n;
  count_ = 0;
}

double rbf_critic_value(const RbfCritic& critic, const VectorXd& s, const VectorXd& s_next,
                        std::span<const std::pair<VectorXd, VectorXd>> marginal_pairs) {
  if (marginal_pairs.empty()) throw std::invalid_argument("rbf_critic_value: no marginal pairs");
  double mean = 0.0;
  for (const auto& [x, y] : marginal_pairs) mean += critic.kernel(x, y);
  mean /= double(marginal_pairs.size());
  return -(s - s_next).squaredNorm() / critic.bandwidth() - std::log(mean) + 1.0;
}

// ---------------------------------------------------------------- rewards

double reward_pi(double log_prob, const AugmentedRewardConfig& config) {
  return config.use_alg1_form ? -log_prob : -(1.0 + config.gamma) * log_prob;
}

double reward_pi(const SoftmaxPolicy& policy, Index s, Index a,
                 const AugmentedRewardConfig& config) {
  return reward_pi(policy_log_prob(policy, s, a), config);
}

double reward_pi(const GaussianPolicy& policy, const VectorXd& s, const VectorXd& a,
                 const AugmentedRewardConfig& config) {
  return reward_pi(policy.log_prob(s, a), config);
}

double reward_f(const RbfCritic& critic, const VectorXd& s_t, const VectorXd& s_next,
                std::span<const VectorXd> samples_t, std::span<const VectorXd> samples_next,
                const AugmentedRewardConfig& config) {
  if (samples_t.empty() || samples_next.empty()) {
    throw std::invalid_argument("reward_f: empty marginal sample set");
  }
  double e_first = 0.0;
  for (const auto& x : samples_t) e_first += std::exp(critic.value(s_next, x));
  e_first /= double(samples_t.size());
  double e_second = 0.0;
  for (const auto& y : samples_next) e_second += std::exp(critic.value(y, s_t));
  e_second /= double(samples_next.size());
  const double f = critic.value(s_t, s_next);
  const double lead = config.use_alg1_form ? f : config.gamma * f;
  return lead - config.gamma / std::numbers::e * (e_first + e_second);
}

double reward_f(const RbfCritic& critic, const VectorXd& s_t, const VectorXd& s_next,
                TimestepReplayBuffer& buffer, std::size_t t, const AugmentedRewardConfig& config,
                std::size_t n_marginal_samples) {
  if (n_marginal_samples == 0) throw std::invalid_argument("reward_f: need at least one sample");
  std::vector<VectorXd> xs, ys;
  xs.reserve(n_marginal_samples);
  ys.reserve(n_marginal_samples);
  for (std::size_t i = 0; i < n_marginal_samples; ++i) {
    xs.push_back(buffer.sample(t).state);
    ys.push_back(buffer.sample(t + 1).state);
  }
  return reward_f(critic, s_t, s_next, xs, ys, config);
}

double augmented_reward(double log_q, double r_pi, double r_f,
                        const AugmentedRewardConfig& config) {
  return log_q + config.lambda_pi * r_pi + config.lambda_f * r_f;
}

// ---------------------------------------------------------------- tabular

namespace {

MatrixXd backup_q(const TabularMdp& mdp, const VectorXd& v) {
  MatrixXd q = mdp.reward();
  for (Index s = 0; s < mdp.n_states(); ++s) {
    for (Index a = 0; a < mdp.n_actions(); ++a) q(s, a) += mdp.discount() * v(mdp.next(s, a));
  }
  return q;
}

VectorXd soft_value(const MatrixXd& q, double tau) {
  VectorXd v(q.rows());
  for (Index s = 0; s < q.rows(); ++s) {
    const double m = q.row(s).maxCoeff();
    v(s) = m + tau * std::log(((q.row(s).array() - m) / tau).exp().sum());
  }
  return v;
}

}  // namespace

SoftPolicyResult soft_policy_iteration(const TabularMdp& mdp, double temperature, double tol,
                                       std::size_t max_iterations) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("soft_policy_iteration: temperature must be positive");
  }
  VectorXd v = VectorXd::Zero(mdp.n_states());
  double residual = 0.0;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const MatrixXd q = backup_q(mdp, v);
    VectorXd v_new = soft_value(q, temperature);
    residual = (v_new - v).lpNorm<Eigen::Infinity>();
    v = std::move(v_new);
    if (!std::isfinite(residual)) break;
    if (residual < tol) {
      MatrixXd q_final = backup_q(mdp, v);
      SoftmaxPolicy policy(q_final / temperature);
      return {std::move(policy), std::move(q_final), std::move(v), residual, it};
    }
  }
  std::ostringstream msg;
  msg << "soft_policy_iteration: no convergence after " << max_iterations
      << " iterations (residual " << residual << ")";
  throw std::runtime_error(msg.str());
}

SoftPolicyResult greedy_policy_iteration(const TabularMdp& mdp, double tol,
                                         std::size_t max_iterations) {
  VectorXd v = VectorXd::Zero(mdp.n_states());
  double residual = 0.0;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const MatrixXd q = backup_q(mdp, v);
    VectorXd v_new = q.rowwise().maxCoeff();
    residual = (v_new - v).lpNorm<Eigen::Infinity>();
    v = std::move(v_new);
    if (!std::isfinite(residual)) break;
    if (residual < tol) {
      MatrixXd q_final = backup_q(mdp, v);
      MatrixXd probs = MatrixXd::Zero(q_final.rows(), q_final.cols());
      for (Index s = 0; s < q_final.rows(); ++s) {
        Index best = 0;
        q_final.row(s).maxCoeff(&best);
        probs(s, best) = 1.0;
      }
      return {SoftmaxPolicy::from_probabilities(probs), std::move(q_final), std::move(v),
              residual, it};
    }
  }
  std::ostringstream msg;
  msg << "greedy_policy_iteration: no convergence after " << max_iterations
      << " iterations (residual " << residual << ")";
  throw std::runtime_error(msg.str());
}

double mean_policy_entropy(const TabularMdp& mdp, const SoftmaxPolicy& policy) {
  const OccupancyTable occ = occupancy_measure(mdp, policy, 1e-12);
  const VectorXd d = occ.state_occupancy() / occ.mass;
  double h = 0.0;
  for (Index s = 0; s < mdp.n_states(); ++s) {
    double hs = 0.0;
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      const double p = policy.probabilities()(s, a);
      if (p > 0.0) hs -= p * policy.log_probabilities()(s, a);
    }
    h += d(s) * hs;
  }
  return h;
}

// ---------------------------------------------------------------- SAC

void TransitionBuffer::add(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> TransitionBuffer::sample(std::size_t n,
                                                        std::mt19937_64& rng) const {
  if (items_.empty()) throw std::logic_error("TransitionBuffer: sampling from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(n);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

namespace {

nn::Mlp make_q(Index sd, Index ad, Index hidden, std::mt19937_64& rng) {
  return nn::Mlp({sd + ad, hidden, hidden, 1}, false, rng);
}

void copy_params(const nn::Mlp& from, nn::Mlp& to) {
  const auto src = from.parameters();
  const auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

void polyak(const nn::Mlp& online, nn::Mlp& target, double tau) {
  const auto src = online.parameters();
  const auto dst = target.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value += tau * (src[i]->value - dst[i]->value);
  }
}

nn::Var q_forward(const nn::Mlp& q, const nn::Var& s, const nn::Var& a) {
  const std::vector<nn::Var> parts{s, a};
  return q.forward(nn::concat_rows(parts));
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(std::string("sac_step: non-finite ") + what);
}

}  // namespace

SacLearner::SacLearner(Index state_dim, Index action_dim, const SacConfig& cfg,
                       std::mt19937_64& rng)
    : policy(state_dim, action_dim, cfg.hidden, rng, -0.5),
      q1(make_q(state_dim, action_dim, cfg.hidden, rng)),
      q2(make_q(state_dim, action_dim, cfg.hidden, rng)),
      q1_target(make_q(state_dim, action_dim, cfg.hidden, rng)),
      q2_target(make_q(state_dim, action_dim, cfg.hidden, rng)),
      log_alpha(nn::parameter(nn::Matrix::Constant(1, 1, std::log(std::max(cfg.initial_alpha, 1e-12))))),
      actor_opt(cfg.actor_lr),
      q1_opt(cfg.critic_lr),
      q2_opt(cfg.critic_lr),
      alpha_opt(cfg.alpha_lr),
      config(cfg) {
  copy_params(q1, q1_target);
  copy_params(q2, q2_target);
}

double SacLearner::alpha() const {
  return std::exp(log_alpha->scalar());
}

double SacLearner::q_value(const VectorXd& s, const VectorXd& a) const {
  const auto sv = nn::constant(s);
  const auto av = nn::constant(a);
  return std::min(q_forward(q1, sv, av)->scalar(), q_forward(q2, sv, av)->scalar());
}

SacStepStats sac_step(SacLearner& L, const TransitionBuffer& buffer, std::mt19937_64& rng) {
  const SacConfig& cfg = L.config;
  const std::size_t n = cfg.batch_size;
  if (buffer.size() < n) throw std::invalid_argument("sac_step: buffer smaller than batch size");
  const auto batch = buffer.sample(n, rng);
  const Index sd = L.policy.state_dim();
  const Index ad = L.policy.action_dim();
  const Index B = static_cast<Index>(n);

  MatrixXd S(sd, B), A(ad, B), S2(sd, B);
  VectorXd R(B), notdone(B);
  for (Index j = 0; j < B; ++j) {
    S.col(j) = batch[j]->s;
    A.col(j) = batch[j]->a;
    S2.col(j) = batch[j]->s_next;
    R(j) = batch[j]->r;
    notdone(j) = batch[j]->done ? 0.0 : 1.0;
  }
  const double alpha = L.alpha();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  std::normal_distribution<double> normal;
  auto gaussian_noise = [&] {
    MatrixXd e(ad, B);
    for (Index j = 0; j < B; ++j) {
      for (Index i = 0; i < ad; ++i) e(i, j) = normal(rng);
    }
    return e;
  };

  // Soft target from the next-state policy sample.
  const VectorXd log_std = L.policy.log_std()->value.col(0);
  const VectorXd std_dev = log_std.array().exp();
  const MatrixXd eps_next = gaussian_noise();
  const MatrixXd mean_next = L.policy.mean(nn::constant(S2))->value;
  const double bound = cfg.action_bound;
  const MatrixXd a_next = (mean_next + (eps_next.array().colwise() * std_dev.array()).matrix())
                              .cwiseMax(-bound)
                              .cwiseMin(bound);
  const VectorXd logp_next =
      (-0.5 * eps_next.array().square()).colwise().sum().transpose().matrix() -
      VectorXd::Constant(B, log_std.sum() + double(ad) * half_log_2pi);
  const auto s2v = nn::constant(S2);
  const auto a2v = nn::constant(a_next);
  const VectorXd qt1 = q_forward(L.q1_target, s2v, a2v)->value.row(0).transpose();
  const VectorXd qt2 = q_forward(L.q2_target, s2v, a2v)->value.row(0).transpose();
  const VectorXd y =
      R + cfg.gamma * notdone.cwiseProduct(qt1.cwiseMin(qt2) - alpha * logp_next);

  SacStepStats stats;
  const auto sv = nn::constant(S);
  const auto av = nn::constant(A);
  const auto yv = nn::constant(MatrixXd(y.transpose()));
  for (auto [q, opt] : {std::pair{&L.q1, &L.q1_opt}, std::pair{&L.q2, &L.q2_opt}}) {
    const auto params = q->parameters();
    nn::zero_grad(params);
    auto loss = nn::mean(nn::square(q_forward(*q, sv, av) - yv));
    check_finite(loss->scalar(), "critic loss");
    nn::backward(loss);
    nn::adam_step(*opt, params);
    stats.q_loss += 0.5 * loss->scalar();
  }

  // Reparameterized actor update.
  const MatrixXd eps = gaussian_noise();
  const auto eps_v = nn::constant(eps);
  const auto ls = L.policy.log_std();
  // The critic only sees executed (clipped) actions, so the actor is scored
  // on clipped samples and its mean is pulled back inside the bound.
  const auto mu = L.policy.mean(sv);
  const auto a_pi = nn::clamp(mu + nn::mul(nn::exp(ls), eps_v), -bound, bound);
  const auto excess = mu - nn::clamp(mu, -bound, bound);
  const MatrixXd logp_const = (-0.5 * eps.array().square() - half_log_2pi).matrix();
  const auto logp = nn::col_sum(nn::constant(logp_const) - ls);
  const auto q1v = q_forward(L.q1, sv, a_pi);
  const auto q2v = q_forward(L.q2, sv, a_pi);
  const MatrixXd pick1 =
      (q1v->value.array() <= q2v->value.array()).cast<double>().matrix();
  const auto min_q = nn::mul(q1v, nn::constant(pick1)) +
                     nn::mul(q2v, nn::constant(MatrixXd(1.0 - pick1.array())));
  auto actor_loss = nn::mean(nn::scale(logp, alpha) - min_q) +
                    nn::scale(nn::mean(nn::col_sum(nn::square(excess))), 10.0);
  check_finite(actor_loss->scalar(), "actor loss");
  const auto actor_params = L.policy.parameters();
  nn::zero_grad(actor_params);
  nn::backward(actor_loss);
  nn::adam_step(L.actor_opt, actor_params);
  stats.policy_loss = actor_loss->scalar();
  stats.mean_log_prob = logp->value.mean();

  if (cfg.auto_alpha) {
    const double target = cfg.target_entropy.value_or(-double(ad));
    const std::vector<nn::Var> ap{L.log_alpha};
    L.log_alpha->grad = nn::Matrix::Constant(1, 1, -(stats.mean_log_prob + target));
    nn::adam_step(L.alpha_opt, ap);
  }
  stats.alpha = L.alpha();

  polyak(L.q1, L.q1_target, cfg.polyak);
  polyak(L.q2, L.q2_target, cfg.polyak);
  return stats;
}

// ---------------------------------------------------------------- evaluation

ReturnEstimate exact_return(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                            const MatrixXd& reward) {
  return {expected_return(occupancy_measure(mdp, policy, 1e-12), reward), 0.0};
}

namespace {

ReturnEstimate mean_and_stderr(const std::vector<double>& xs) {
  const double n = double(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  // A summed mean of identical values can round away from them.
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
    return {xs.front(), 0.0};
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

ReturnEstimate evaluate_return(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                               const MatrixXd& reward, std::size_t n_episodes,
                               std::uint64_t seed) {
  if (n_episodes == 0) throw std::invalid_argument("evaluate_return: n_episodes must be >= 1");
  const std::size_t horizon = truncation_horizon(mdp.discount(), 1.0, 1e-12);
  std::mt19937_64 seeder(seed);
  std::vector<double> returns;
  returns.reserve(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    const auto traj = sample_trajectory(mdp, policy, horizon, seeder());
    double g = 0.0, w = 1.0;
    for (const auto& st : traj.steps) {
      g += w * reward(st.s, st.a);
      w *= mdp.discount();
    }
    returns.push_back(g);
  }
  return mean_and_stderr(returns);
}

ReturnEstimate evaluate_return(const ContinuousEnv& env, const GaussianPolicy& policy,
                               std::size_t n_episodes, std::uint64_t seed, bool deterministic) {
  if (n_episodes == 0) throw std::invalid_argument("evaluate_return: n_episodes must be >= 1");
  std::mt19937_64 rng(seed);
  const double bound = env.action_bound();
  std::vector<double> returns;
  returns.reserve(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    VectorXd s = env.reset(rng);
    double g = 0.0;
    for (std::size_t t = 0; t < env.episode_length(); ++t) {
      VectorXd a = deterministic ? policy.mean(s) : policy.sample(s, rng);
      a = a.cwiseMax(-bound).cwiseMin(bound);
      g += env.reward(s, a);
      s = env.step(s, a);
    }
    returns.push_back(g);
  }
  return mean_and_stderr(returns);
}

double gaussian_kl(const VectorXd& m1, const VectorXd& s1, const VectorXd& m2,
                   const VectorXd& s2) {
  const auto v1 = s1.array().square();
  const auto v2 = s2.array().square();
  return ((s2.array() / s1.array()).log() + (v1 + (m1 - m2).array().square()) / (2.0 * v2) - 0.5)
      .sum();
}

namespace {

VectorXd state_distribution(const TabularMdp& mdp, const SoftmaxPolicy& policy) {
  const OccupancyTable occ = occupancy_measure(mdp, policy, 1e-12);
  return occ.state_occupancy() / occ.mass;
}

double discrete_kl(const SoftmaxPolicy& p, const SoftmaxPolicy& q, Index s) {
  double kl = 0.0;
  for (Index a = 0; a < p.n_actions(); ++a) {
    const double pa = p.probabilities()(s, a);
    if (pa > 0.0) kl += pa * (p.log_probabilities()(s, a) - q.log_probabilities()(s, a));
  }
  return kl;
}

}  // namespace

double evaluate_policy_kl(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                          const SoftmaxPolicy& expert) {
  const SoftmaxPolicy random = SoftmaxPolicy::uniform(mdp.n_states(), mdp.n_actions());
  const VectorXd d_pi = state_distribution(mdp, policy);
  const VectorXd d_rand = state_distribution(mdp, random);
  double num = 0.0, den = 0.0;
  for (Index s = 0; s < mdp.n_states(); ++s) {
    if (d_pi(s) > 0.0) num += d_pi(s) * discrete_kl(policy, expert, s);
    if (d_rand(s) > 0.0) den += d_rand(s) * discrete_kl(random, expert, s);
  }
  if (!(den > 0.0)) throw std::domain_error("evaluate_policy_kl: random-policy KL is zero");
  return num / den;
}

namespace {

std::vector<VectorXd> visited_states(const ContinuousEnv& env, const GaussianActionModel& model,
                                     std::size_t n, std::mt19937_64& rng) {
  std::vector<VectorXd> states;
  states.reserve(n);
  std::normal_distribution<double> normal;
  const double bound = env.action_bound();
  while (states.size() < n) {
    VectorXd s = env.reset(rng);
    for (std::size_t t = 0; t < env.episode_length() && states.size() < n; ++t) {
      states.push_back(s);
      VectorXd a = model.mean(s);
      for (Index i = 0; i < a.size(); ++i) a(i) += model.std_dev(i) * normal(rng);
      s = env.step(s, a.cwiseMax(-bound).cwiseMin(bound));
    }
  }
  return states;
}

}  // namespace

GaussianActionModel GaussianActionModel::of(const GaussianPolicy& policy) {
  return {[&policy](const VectorXd& s) { return policy.mean(s); }, policy.std_dev()};
}

double evaluate_policy_kl(const ContinuousEnv& env, const GaussianActionModel& policy,
                          const GaussianActionModel& expert,
                          const GaussianActionModel& random_baseline, std::size_t n_eval_states,
                          std::uint64_t seed) {
  if (n_eval_states == 0) throw std::invalid_argument("evaluate_policy_kl: no evaluation states");
  std::mt19937_64 rng(seed);
  auto mean_kl = [&](const GaussianActionModel& p) {
    double total = 0.0;
    for (const auto& s : visited_states(env, p, n_eval_states, rng)) {
      total += gaussian_kl(p.mean(s), p.std_dev, expert.mean(s), expert.std_dev);
    }
    return total / double(n_eval_states);
  };
  const double num = mean_kl(policy);
  const double den = mean_kl(random_baseline);
  if (!(den > 0.0)) throw std::domain_error("evaluate_policy_kl: random-policy KL is zero");
  return num / den;
}

// ---------------------------------------------------------------- metrics

MetricsWriter::MetricsWriter(const std::string& path, std::string config_hash,
                             std::uint64_t seed)
    : hash_(std::move(config_hash)), seed_(seed) {
  bool fresh = true;
  if (std::ifstream probe(path); probe) fresh = probe.peek() == std::ifstream::traits_type::eof();
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open '" + path + "' for appending");
  if (fresh) out_ << kHeader << '\n';
}

void MetricsWriter::append(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.3f\n", hash_.c_str(),
                static_cast<unsigned long long>(seed_), r.iteration, r.env_steps,
                r.augmented_return, r.env_return, r.normalized_kl, r.lambda_pi, r.wallclock);
  out_ << buf;
  out_.flush();
}

}  // namespace ndi::rl
