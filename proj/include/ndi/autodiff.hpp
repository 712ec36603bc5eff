#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// Batched values are stored column-major as (features x batch). A graph is
// built implicitly by the free functions below and differentiated with
// backward(), which requires a 1x1 output.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ndi::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  // Propagates this->grad into the parents' grad buffers.
  std::function<void(Node&)> backward_fn;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  double scalar() const { return value(0, 0); }
};

Var constant(Matrix value);
Var constant(double value);
Var parameter(Matrix value);

// Elementwise binary ops accept equal shapes, or broadcast the second (or
// first) operand when it is 1x1, a column (rows x 1) or a row (1 x cols).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
// Identity inside [lo, hi], constant outside (zero gradient when clamped).
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
Var col_sum(const Var& a);         // (1 x cols)
Var logsumexp_cols(const Var& a);  // (1 x cols), stable
Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);

// W / (u^T W v) with u, v held constant (the spectral-norm convention).
Var spectral_normalized(const Var& w, const Vector& u, const Vector& v);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

// Zeroes every gradient in the graph, then accumulates d(output)/d(node).
// Throws std::invalid_argument unless output is 1x1.
void backward(const Var& output);

/// Resets grad buffers; backward() only clears nodes reachable from its output.
void zero_grad(std::span<const Var> params);

// max_i |analytic_i - fd_i| / (|analytic_i| + |fd_i| + 1e-12) over every
// coordinate of every parameter, using central differences of step eps.
double grad_check(const std::function<Var()>& fn, std::span<const Var> params,
                  double eps);

}  // namespace ndi::nn
