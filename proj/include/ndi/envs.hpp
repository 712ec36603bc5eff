#pragma once

#include "ndi/gaussian_policy.hpp"
#include "ndi/mdp.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ndi::envs {

/// Left/right chain starting at state 0. Moving off either end keeps the
/// agent in place, so the two actions never collide. Every action taken in
/// the last state earns goal_reward.
TabularMdp build_chain(Index n_states, double gamma, double goal_reward);

enum class Move { Up, Down, Left, Right, Stay };

struct GridworldSpec {
  Index width = 5;
  Index height = 5;
  Index goal_x = 2;
  Index goal_y = 2;
  Index start_x = 0;
  Index start_y = 0;
  double step_reward = 0.0;
  double goal_reward = 1.0;
  double gamma = 0.9;
  std::vector<Move> actions{Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay};
};

/// Grid with toroidal walls: a move off one edge re-enters on the opposite
/// edge, so each action permutes the cells. Stay self-loops (the goal's
/// absorbing action). Reward is goal_reward in the goal cell, step_reward
/// elsewhere. Throws std::invalid_argument if the dynamics are not injective.
TabularMdp build_gridworld(const GridworldSpec& spec);

Index grid_index(const GridworldSpec& spec, Index x, Index y);

/// Random MDP whose actions reach distinct next states (needs
/// n_actions <= n_states), with a random initial distribution and
/// standard-normal rewards.
TabularMdp random_injective_mdp(Index n_states, Index n_actions, double gamma,
                                std::mt19937_64& rng);

struct PointMassSpec {
  double dt = 0.1;
  std::size_t episode_length = 50;
  double friction = 0.1;
  double action_bound = 1.0;
  double init_range = 1.0;
};

/// Semi-implicit Euler: v' = (1 - friction) v + a dt, x' = x + v' dt.
/// State layout (x, y, vx, vy); action is a 2-D acceleration.
VectorXd pointmass_step(const PointMassSpec& spec, const VectorXd& s, const VectorXd& a);

class PointMassEnv final : public ContinuousEnv {
 public:
  explicit PointMassEnv(PointMassSpec spec = {}) : spec_(spec) {}

  Index state_dim() const override { return 4; }
  Index action_dim() const override { return 2; }
  double action_bound() const override { return spec_.action_bound; }
  std::size_t episode_length() const override { return spec_.episode_length; }
  VectorXd reset(std::mt19937_64& rng) const override;
  VectorXd step(const VectorXd& s, const VectorXd& a) const override;
  // -||s||^2
  double reward(const VectorXd& s, const VectorXd& a) const override;

  const PointMassSpec& spec() const { return spec_; }

 private:
  PointMassSpec spec_;
};

/// Proportional-derivative controller a = clip(-kp x - kd v).
VectorXd pd_controller(const VectorXd& s, double kp, double kd, double bound);

/// Real-valued encodings of tabular states and actions for density models.
struct TabularEncoding {
  MatrixXd state_features;   // n_states x state_dim
  MatrixXd action_features;  // n_actions x action_dim

  VectorXd state(Index s) const { return state_features.row(s).transpose(); }
  VectorXd action(Index a) const { return action_features.row(a).transpose(); }
  // Exact-match lookup; throws std::invalid_argument when nothing matches.
  Index state_index(const VectorXd& x) const;
  Index action_index(const VectorXd& x) const;
};

/// A named environment from the registry: exactly one of tabular/continuous.
struct RegisteredEnv {
  std::string name;
  std::shared_ptr<const TabularMdp> tabular;
  TabularEncoding encoding;
  std::shared_ptr<const ContinuousEnv> continuous;

  bool is_tabular() const { return tabular != nullptr; }
  Index state_dim() const;
  Index action_dim() const;
};

/// Names: "chain-N", "grid-WxH" (goal at the centre cell), "pointmass".
/// Throws std::invalid_argument for unknown names.
RegisteredEnv make_env(const std::string& name, double gamma = 0.9);

std::vector<std::string> registered_env_names();

}  // namespace ndi::envs
