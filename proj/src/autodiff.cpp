#include "ndi/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace ndi::nn {
namespace {

enum class Bcast { None, Scalar, Col, Row };

bool fits(const Matrix& big, const Matrix& small, Bcast& kind) {
  if (big.rows() == small.rows() && big.cols() == small.cols()) {
    kind = Bcast::None;
    return true;
  }
  if (small.rows() == 1 && small.cols() == 1) {
    kind = Bcast::Scalar;
    return true;
  }
  if (small.cols() == 1 && small.rows() == big.rows()) {
    kind = Bcast::Col;
    return true;
  }
  if (small.rows() == 1 && small.cols() == big.cols()) {
    kind = Bcast::Row;
    return true;
  }
  return false;
}

Matrix expand(const Matrix& small, Eigen::Index r, Eigen::Index c, Bcast kind) {
  switch (kind) {
    case Bcast::None: return small;
    case Bcast::Scalar: return Matrix::Constant(r, c, small(0, 0));
    case Bcast::Col: return small.replicate(1, c);
    case Bcast::Row: return small.replicate(r, 1);
  }
  return small;
}

Matrix reduce(const Matrix& g, Bcast kind) {
  switch (kind) {
    case Bcast::None: return g;
    case Bcast::Scalar: return Matrix::Constant(1, 1, g.sum());
    case Bcast::Col: return g.rowwise().sum();
    case Bcast::Row: return g.colwise().sum();
  }
  return g;
}

Var make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(fn);
  return n;
}

void accumulate(const Var& p, const Matrix& g) {
  if (p->requires_grad) p->grad += g;
}

struct Aligned {
  Matrix a, b;
  Bcast ka, kb;
};

Aligned align(const Var& a, const Var& b, const char* op) {
  Bcast ka = Bcast::None, kb = Bcast::None;
  if (fits(a->value, b->value, kb)) {
    return {a->value, expand(b->value, a->rows(), a->cols(), kb), Bcast::None, kb};
  }
  if (fits(b->value, a->value, ka)) {
    return {expand(a->value, b->rows(), b->cols(), ka), b->value, ka, Bcast::None};
  }
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              std::to_string(a->rows()) + "x" + std::to_string(a->cols()) +
                              " and " + std::to_string(b->rows()) + "x" +
                              std::to_string(b->cols()));
}

}  // namespace

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  return n;
}

Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  n->requires_grad = true;
  return n;
}

Var add(const Var& a, const Var& b) {
  auto al = align(a, b, "add");
  return make(al.a + al.b, {a, b}, [ka = al.ka, kb = al.kb](Node& self) {
    accumulate(self.parents[0], reduce(self.grad, ka));
    accumulate(self.parents[1], reduce(self.grad, kb));
  });
}

Var sub(const Var& a, const Var& b) {
  auto al = align(a, b, "sub");
  return make(al.a - al.b, {a, b}, [ka = al.ka, kb = al.kb](Node& self) {
    accumulate(self.parents[0], reduce(self.grad, ka));
    accumulate(self.parents[1], reduce(-self.grad, kb));
  });
}

Var mul(const Var& a, const Var& b) {
  auto al = align(a, b, "mul");
  Matrix out = al.a.cwiseProduct(al.b);
  return make(std::move(out), {a, b},
              [ka = al.ka, kb = al.kb, av = al.a, bv = al.b](Node& self) {
                if (self.parents[0]->requires_grad)
                  accumulate(self.parents[0], reduce(self.grad.cwiseProduct(bv), ka));
                if (self.parents[1]->requires_grad)
                  accumulate(self.parents[1], reduce(self.grad.cwiseProduct(av), kb));
              });
}

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a->cols()) +
                                " and " + std::to_string(b->rows()) + " differ");
  }
  return make(a->value * b->value, {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) pa->grad.noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad.noalias() += pa->value.transpose() * self.grad;
  });
}

Var transpose(const Var& a) {
  return make(a->value.transpose(), {a}, [](Node& self) {
    accumulate(self.parents[0], self.grad.transpose());
  });
}

Var scale(const Var& a, double c) {
  return make(a->value * c, {a}, [c](Node& self) { accumulate(self.parents[0], self.grad * c); });
}

Var add_scalar(const Var& a, double c) {
  return make(a->value.array() + c, {a},
              [](Node& self) { accumulate(self.parents[0], self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var tanh(const Var& a) {
  Matrix out = a->value.array().tanh();
  return make(out, {a}, [out](Node& self) {
    accumulate(self.parents[0], (self.grad.array() * (1.0 - out.array().square())).matrix());
  });
}

Var exp(const Var& a) {
  Matrix out = a->value.array().exp();
  return make(out, {a}, [out](Node& self) {
    accumulate(self.parents[0], self.grad.cwiseProduct(out));
  });
}

Var log(const Var& a) {
  return make(a->value.array().log(), {a}, [](Node& self) {
    accumulate(self.parents[0], (self.grad.array() / self.parents[0]->value.array()).matrix());
  });
}

Var square(const Var& a) {
  return make(a->value.array().square(), {a}, [](Node& self) {
    accumulate(self.parents[0],
               (2.0 * self.grad.array() * self.parents[0]->value.array()).matrix());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a->value.cwiseMax(lo).cwiseMin(hi);
  return make(out, {a}, [lo, hi](Node& self) {
    const auto& x = self.parents[0]->value.array();
    Matrix pass = ((x >= lo) && (x <= hi)).cast<double>();
    accumulate(self.parents[0], self.grad.cwiseProduct(pass));
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a->value.sum()), {a}, [](Node& self) {
    const auto& p = self.parents[0];
    accumulate(p, Matrix::Constant(p->rows(), p->cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a->value.size());
  return scale(sum(a), 1.0 / n);
}

Var col_sum(const Var& a) {
  return make(a->value.colwise().sum(), {a}, [](Node& self) {
    const auto& p = self.parents[0];
    accumulate(p, self.grad.replicate(p->rows(), 1));
  });
}

Var logsumexp_cols(const Var& a) {
  const Eigen::RowVectorXd mx = a->value.colwise().maxCoeff();
  Matrix shifted = (a->value.rowwise() - mx).array().exp();
  Eigen::RowVectorXd s = shifted.colwise().sum();
  Matrix out = (s.array().log() + mx.array()).matrix();
  Matrix softmax = shifted.array().rowwise() / s.array();
  return make(out, {a}, [softmax](Node& self) {
    accumulate(self.parents[0],
               (softmax.array().rowwise() * self.grad.row(0).array()).matrix());
  });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->rows()) {
    throw std::invalid_argument("rows: slice out of range");
  }
  return make(a->value.middleRows(start, count), {a}, [start, count](Node& self) {
    const auto& p = self.parents[0];
    if (p->requires_grad) p->grad.middleRows(start, count) += self.grad;
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index total = 0;
  const Eigen::Index cols = parts.front()->cols();
  for (const auto& p : parts) {
    if (p->cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    total += p->rows();
  }
  Matrix out(total, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  return make(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    Eigen::Index at = 0;
    for (const auto& p : self.parents) {
      if (p->requires_grad) p->grad += self.grad.middleRows(at, p->rows());
      at += p->rows();
    }
  });
}

Var spectral_normalized(const Var& w, const Vector& u, const Vector& v) {
  const double sigma = std::max(u.dot(w->value * v), 1e-12);
  return make(w->value / sigma, {w}, [u, v, sigma](Node& self) {
    const auto& p = self.parents[0];
    const double inner = self.grad.cwiseProduct(p->value).sum();
    accumulate(p, self.grad / sigma - (inner / (sigma * sigma)) * (u * v.transpose()));
  });
}

void backward(const Var& output) {
  if (output->rows() != 1 || output->cols() != 1) {
    throw std::invalid_argument("backward: output must be scalar, got " +
                                std::to_string(output->rows()) + "x" +
                                std::to_string(output->cols()));
  }
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{output.get(), 0}};
  seen.insert(output.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  output->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

void zero_grad(std::span<const Var> params) {
  for (const auto& p : params) p->grad = Matrix::Zero(p->rows(), p->cols());
}

double grad_check(const std::function<Var()>& fn, std::span<const Var> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  zero_grad(params);
  Var out = fn();
  std::vector<Matrix> analytic;
  if (out->requires_grad) {
    backward(out);
    for (const auto& p : params) analytic.push_back(p->grad);
  } else {
    for (const auto& p : params) analytic.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& value = params[k]->value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double up = fn()->scalar();
      value.data()[i] = saved - eps;
      const double down = fn()->scalar();
      value.data()[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-12));
    }
  }
  return worst;
}

}  // namespace ndi::nn
