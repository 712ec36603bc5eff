#include "ndi/envs.hpp"

#include <algorithm>
#include <numeric>
#include <regex>
#include <stdexcept>

namespace ndi::envs {

TabularMdp build_chain(Index n_states, double gamma, double goal_reward) {
  if (n_states < 2) throw std::invalid_argument("build_chain: n_states must be >= 2");
  MatrixXi next(n_states, 2);
  MatrixXd reward = MatrixXd::Zero(n_states, 2);
  for (Index s = 0; s < n_states; ++s) {
    next(s, 0) = static_cast<int>(std::max<Index>(s - 1, 0));
    next(s, 1) = static_cast<int>(std::min<Index>(s + 1, n_states - 1));
  }
  reward.row(n_states - 1).setConstant(goal_reward);
  VectorXd p0 = VectorXd::Zero(n_states);
  p0(0) = 1.0;
  return TabularMdp(next, p0, reward, gamma);
}

Index grid_index(const GridworldSpec& spec, Index x, Index y) { return y * spec.width + x; }

namespace {

std::pair<Index, Index> displacement(Move m) {
  switch (m) {
    case Move::Up: return {0, 1};
    case Move::Down: return {0, -1};
    case Move::Left: return {-1, 0};
    case Move::Right: return {1, 0};
    case Move::Stay: return {0, 0};
  }
  return {0, 0};
}

Index wrap(Index v, Index n) { return ((v % n) + n) % n; }

}  // namespace

TabularMdp build_gridworld(const GridworldSpec& spec) {
  if (spec.width < 1 || spec.height < 1) throw std::invalid_argument("build_gridworld: empty grid");
  if (spec.actions.empty()) throw std::invalid_argument("build_gridworld: no actions");
  auto inside = [&](Index x, Index y) { return x >= 0 && y >= 0 && x < spec.width && y < spec.height; };
  if (!inside(spec.goal_x, spec.goal_y)) throw std::invalid_argument("build_gridworld: goal off grid");
  if (!inside(spec.start_x, spec.start_y)) throw std::invalid_argument("build_gridworld: start off grid");

  const Index n = spec.width * spec.height;
  const auto n_actions = static_cast<Index>(spec.actions.size());
  MatrixXi next(n, n_actions);
  MatrixXd reward = MatrixXd::Constant(n, n_actions, spec.step_reward);
  for (Index y = 0; y < spec.height; ++y) {
    for (Index x = 0; x < spec.width; ++x) {
      const Index s = grid_index(spec, x, y);
      for (Index a = 0; a < n_actions; ++a) {
        const auto [dx, dy] = displacement(spec.actions[static_cast<std::size_t>(a)]);
        next(s, a) = static_cast<int>(
            grid_index(spec, wrap(x + dx, spec.width), wrap(y + dy, spec.height)));
      }
    }
  }
  reward.row(grid_index(spec, spec.goal_x, spec.goal_y)).setConstant(spec.goal_reward);
  VectorXd p0 = VectorXd::Zero(n);
  p0(grid_index(spec, spec.start_x, spec.start_y)) = 1.0;
  TabularMdp mdp(next, p0, reward, spec.gamma);
  if (!check_injective_dynamics(mdp)) {
    throw std::invalid_argument("build_gridworld: action set collapses under the wall rule");
  }
  return mdp;
}

TabularMdp random_injective_mdp(Index n_states, Index n_actions, double gamma,
                                std::mt19937_64& rng) {
  if (n_actions > n_states) {
    throw std::invalid_argument("random_injective_mdp: more actions than states");
  }
  MatrixXi next(n_states, n_actions);
  std::vector<int> perm(static_cast<std::size_t>(n_states));
  for (Index s = 0; s < n_states; ++s) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Index a = 0; a < n_actions; ++a) next(s, a) = perm[static_cast<std::size_t>(a)];
  }
  std::uniform_real_distribution<double> unif(0.1, 1.0);
  std::normal_distribution<double> normal;
  VectorXd p0(n_states);
  for (Index s = 0; s < n_states; ++s) p0(s) = unif(rng);
  p0 /= p0.sum();
  MatrixXd reward(n_states, n_actions);
  for (Index i = 0; i < reward.size(); ++i) reward.data()[i] = normal(rng);
  return TabularMdp(next, p0, reward, gamma);
}

VectorXd pointmass_step(const PointMassSpec& spec, const VectorXd& s, const VectorXd& a) {
  if (s.size() != 4 || a.size() != 2) throw std::invalid_argument("pointmass_step: bad shapes");
  VectorXd out(4);
  const VectorXd v = (1.0 - spec.friction) * s.tail<2>() + spec.dt * a;
  out.head<2>() = s.head<2>() + spec.dt * v;
  out.tail<2>() = v;
  return out;
}

VectorXd PointMassEnv::reset(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(-spec_.init_range, spec_.init_range);
  VectorXd s = VectorXd::Zero(4);
  s(0) = unif(rng);
  s(1) = unif(rng);
  return s;
}

VectorXd PointMassEnv::step(const VectorXd& s, const VectorXd& a) const {
  return pointmass_step(spec_, s, a.cwiseMax(-spec_.action_bound).cwiseMin(spec_.action_bound));
}

double PointMassEnv::reward(const VectorXd& s, const VectorXd&) const { return -s.squaredNorm(); }

VectorXd pd_controller(const VectorXd& s, double kp, double kd, double bound) {
  const VectorXd a = -kp * s.head<2>() - kd * s.tail<2>();
  return a.cwiseMax(-bound).cwiseMin(bound);
}

namespace {

Index match_row(const MatrixXd& table, const VectorXd& x, const char* what) {
  for (Index i = 0; i < table.rows(); ++i) {
    if ((table.row(i).transpose() - x).cwiseAbs().maxCoeff() < 1e-9) return i;
  }
  throw std::invalid_argument(std::string("TabularEncoding: no ") + what + " matches the vector");
}

}  // namespace

Index TabularEncoding::state_index(const VectorXd& x) const {
  return match_row(state_features, x, "state");
}
Index TabularEncoding::action_index(const VectorXd& x) const {
  return match_row(action_features, x, "action");
}

Index RegisteredEnv::state_dim() const {
  return is_tabular() ? encoding.state_features.cols() : continuous->state_dim();
}
Index RegisteredEnv::action_dim() const {
  return is_tabular() ? encoding.action_features.cols() : continuous->action_dim();
}

RegisteredEnv make_env(const std::string& name, double gamma) {
  RegisteredEnv env;
  env.name = name;
  std::smatch m;
  static const std::regex chain_re(R"(chain-(\d+))");
  static const std::regex grid_re(R"(grid-(\d+)x(\d+))");
  if (std::regex_match(name, m, chain_re)) {
    const Index n = std::stol(m[1]);
    env.tabular = std::make_shared<TabularMdp>(build_chain(n, gamma, 1.0));
    env.encoding.state_features = VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1));
    env.encoding.action_features = (MatrixXd(2, 1) << -1.0, 1.0).finished();
  } else if (std::regex_match(name, m, grid_re)) {
    GridworldSpec spec;
    spec.width = std::stol(m[1]);
    spec.height = std::stol(m[2]);
    spec.goal_x = spec.width / 2;
    spec.goal_y = spec.height / 2;
    spec.gamma = gamma;
    env.tabular = std::make_shared<TabularMdp>(build_gridworld(spec));
    const Index n = spec.width * spec.height;
    env.encoding.state_features.resize(n, 2);
    for (Index y = 0; y < spec.height; ++y) {
      for (Index x = 0; x < spec.width; ++x) {
        env.encoding.state_features.row(grid_index(spec, x, y)) << double(x), double(y);
      }
    }
    const auto n_actions = static_cast<Index>(spec.actions.size());
    env.encoding.action_features.resize(n_actions, 2);
    for (Index a = 0; a < n_actions; ++a) {
      const auto [dx, dy] = displacement(spec.actions[static_cast<std::size_t>(a)]);
      env.encoding.action_features.row(a) << double(dx), double(dy);
    }
  } else if (name == "pointmass") {
    env.continuous = std::make_shared<PointMassEnv>();
  } else {
    throw std::invalid_argument("unknown environment '" + name + "'");
  }
  return env;
}

std::vector<std::string> registered_env_names() { return {"chain-5", "grid-5x5", "pointmass"}; }

}  // namespace ndi::envs
