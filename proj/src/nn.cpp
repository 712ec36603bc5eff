#include "ndi/nn.hpp"

#include "ndi/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ndi::nn {
namespace {

Vector random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = normal(rng);
  const double norm = x.norm();
  return norm > 0 ? Vector(x / norm) : Vector(Vector::Constant(n, 1.0 / std::sqrt(double(n))));
}

Vector normalized(const Vector& x) { return x / std::max(x.norm(), 1e-12); }

}  // namespace

Matrix spectral_normalize(const Matrix& w, Vector& u, int n_power_iterations) {
  if (n_power_iterations < 1) {
    throw std::invalid_argument("spectral_normalize: need at least one power iteration");
  }
  Vector v;
  for (int k = 0; k < n_power_iterations; ++k) {
    v = normalized(w.transpose() * u);
    u = normalized(w * v);
  }
  const double sigma = std::max(u.dot(w * v), 1e-12);
  return w / sigma;
}

Linear::Linear(Eigen::Index in, Eigen::Index out, bool spectral_, std::mt19937_64& rng)
    : spectral(spectral_) {
  // Glorot-uniform weights, zero bias.
  const double limit = std::sqrt(6.0 / double(in + out));
  std::uniform_real_distribution<double> uni(-limit, limit);
  Matrix w(out, in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uni(rng);
  weight = parameter(std::move(w));
  bias = parameter(Matrix::Zero(out, 1));
  u = random_unit(out, rng);
  v = random_unit(in, rng);
  if (spectral) refresh(50);
}

Matrix Linear::masked_weight_value() const {
  return mask ? Matrix(weight->value.cwiseProduct(*mask)) : weight->value;
}

void Linear::refresh(int n_power_iterations) {
  if (n_power_iterations < 1) {
    throw std::invalid_argument("Linear::refresh: need at least one power iteration");
  }
  const Matrix w = masked_weight_value();
  for (int k = 0; k < n_power_iterations; ++k) {
    v = normalized(w.transpose() * u);
    u = normalized(w * v);
  }
}

double Linear::sigma() const { return u.dot(masked_weight_value() * v); }

Var Linear::effective_weight() const {
  Var w = mask ? mul(weight, constant(*mask)) : weight;
  return spectral ? spectral_normalized(w, u, v) : w;
}

Var Linear::forward(const Var& x) const { return add(matmul(effective_weight(), x), bias); }

Mlp::Mlp(std::vector<Eigen::Index> widths, bool spectral, std::mt19937_64& rng, Activation output)
    : widths_(std::move(widths)), output_(output) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least two widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers.emplace_back(widths_[i], widths_[i + 1], spectral, rng);
  }
}

Var Mlp::forward(const Var& x) const {
  if (x->rows() != input_width()) {
    throw std::invalid_argument("Mlp::forward: input has " + std::to_string(x->rows()) +
                                " rows, expected " + std::to_string(input_width()));
  }
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    const bool last = i + 1 == layers.size();
    if (!last || output_ == Activation::Tanh) h = nn::tanh(h);
  }
  return h;
}

Var Mlp::input_gradient(const Var& x) const {
  if (x->rows() != input_width()) {
    throw std::invalid_argument("Mlp::input_gradient: input dimension mismatch");
  }
  std::vector<Var> weights;
  std::vector<Var> activations;  // tanh outputs of each hidden layer
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    weights.push_back(layers[i].effective_weight());
    h = add(matmul(weights.back(), h), layers[i].bias);
    const bool last = i + 1 == layers.size();
    if (!last || output_ == Activation::Tanh) {
      h = nn::tanh(h);
      activations.push_back(h);
    }
  }
  // Seed: d(sum of output row 0)/d(output).
  Matrix seed = Matrix::Zero(output_width(), x->cols());
  seed.row(0).setOnes();
  Var g = constant(std::move(seed));
  auto tanh_deriv = [](const Var& a) { return add_scalar(neg(square(a)), 1.0); };
  std::size_t act = activations.size();
  if (output_ == Activation::Tanh) g = mul(g, tanh_deriv(activations[--act]));
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = matmul(transpose(weights[i]), g);
    if (i > 0) g = mul(g, tanh_deriv(activations[--act]));
  }
  return g;
}

std::vector<Var> Mlp::parameters() const {
  std::vector<Var> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void Mlp::refresh_spectral(int n_power_iterations) {
  for (auto& l : layers) {
    if (l.spectral) l.refresh(n_power_iterations);
  }
}

void adam_step(AdamState& state, std::span<const Var> params) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter count changed");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->grad;
    if (g.rows() != state.first_moment[i].rows() || g.cols() != state.first_moment[i].cols()) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
    if (!g.allFinite()) {
      throw DivergenceError("adam_step: non-finite gradient at parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->grad;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    params[i]->value.array() -=
        state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

}  // namespace ndi::nn
