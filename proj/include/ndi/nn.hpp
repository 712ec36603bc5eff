#pragma once

#include "ndi/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace ndi::nn {

enum class Activation { Identity, Tanh };

/// Dense layer y = W x + b, optionally spectrally normalized.
///
/// With spectral normalization on, the effective weight is W / sigma where
/// sigma = u^T W v is the power-iteration estimate of the top singular value.
/// The left vector u persists across calls; refresh() advances it by the
/// requested number of power iterations.
class Linear {
 public:
  Linear(Eigen::Index in, Eigen::Index out, bool spectral, std::mt19937_64& rng);

  Var forward(const Var& x) const;
  Var effective_weight() const;
  // Runs n power iterations (n >= 1) and updates the cached (u, v).
  void refresh(int n_power_iterations = 1);
  double sigma() const;

  Var weight;
  Var bias;
  bool spectral = false;
  std::optional<Matrix> mask;  // multiplies W elementwise when set
  Vector u, v;

 private:
  Matrix masked_weight_value() const;
};

/// Runs n power iterations on w starting from u (updated in place) and
/// returns w divided by the resulting top-singular-value estimate.
/// A zero matrix is divided by 1e-12 rather than zero.
Matrix spectral_normalize(const Matrix& w, Vector& u, int n_power_iterations);

/// Multilayer perceptron: tanh hidden layers, configurable output activation.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Eigen::Index> widths, bool spectral, std::mt19937_64& rng,
      Activation output = Activation::Identity);

  // x is (input_width x batch).
  Var forward(const Var& x) const;
  // Gradient of the sum over outputs row 0 with respect to x, built from
  // first-order graph ops so that it stays differentiable in the weights.
  Var input_gradient(const Var& x) const;

  std::vector<Var> parameters() const;
  void refresh_spectral(int n_power_iterations = 1);

  Eigen::Index input_width() const { return widths_.front(); }
  Eigen::Index output_width() const { return widths_.back(); }
  const std::vector<Eigen::Index>& widths() const { return widths_; }
  Activation output_activation() const { return output_; }

  std::vector<Linear> layers;

 private:
  std::vector<Eigen::Index> widths_;
  Activation output_ = Activation::Identity;
};

/// Adaptive-moment optimizer with bias correction.
struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit AdamState(double lr = 1e-4) : learning_rate(lr) {}
};

/// Updates each parameter's value from its grad buffer. Throws
/// std::runtime_error on a non-finite gradient (naming the parameter index)
/// and std::invalid_argument when shapes disagree with the stored moments.
void adam_step(AdamState& state, std::span<const Var> params);

}  // namespace ndi::nn
