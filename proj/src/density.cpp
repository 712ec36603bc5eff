#include "ndi/density.hpp"

#include "ndi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ndi::density {

using nn::Var;

Standardizer Standardizer::fit(const MatrixXd& data) {
  if (data.cols() < 1) throw std::invalid_argument("Standardizer::fit: empty data");
  Standardizer s;
  s.mean = data.rowwise().mean();
  const MatrixXd centered = data.colwise() - s.mean;
  s.scale = (centered.rowwise().squaredNorm() / double(data.cols())).cwiseSqrt();
  for (Index i = 0; i < s.scale.size(); ++i) {
    if (!(s.scale(i) > 1e-12)) s.scale(i) = 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Index dim) {
  return {VectorXd::Zero(dim), VectorXd::Ones(dim)};
}

MatrixXd Standardizer::apply(const MatrixXd& x) const {
  if (x.rows() != dim()) throw std::invalid_argument("Standardizer: dimension mismatch");
  return (x.colwise() - mean).array().colwise() / scale.array();
}

MatrixXd Standardizer::invert(const MatrixXd& z) const {
  return (z.array().colwise() * scale.array()).matrix().colwise() + mean;
}

double Standardizer::log_jacobian() const { return -scale.array().log().sum(); }

bool smoothed_nonincreasing(const std::vector<double>& loss, std::size_t window, double slack) {
  if (loss.size() < window + 1) return true;
  double prev = std::accumulate(loss.begin(), loss.begin() + long(window), 0.0) / double(window);
  for (std::size_t end = window + 1; end <= loss.size(); ++end) {
    const double avg =
        std::accumulate(loss.begin() + long(end - window), loss.begin() + long(end), 0.0) /
        double(window);
    if (avg > prev + slack) return false;
    prev = avg;
  }
  return true;
}

namespace {

MatrixXd gather(const MatrixXd& data, const std::vector<Index>& idx, std::size_t begin,
                std::size_t end) {
  MatrixXd out(data.rows(), Index(end - begin));
  for (std::size_t i = begin; i < end; ++i) out.col(Index(i - begin)) = data.col(idx[i]);
  return out;
}

template <typename Loss>
void train_loop(const MatrixXd& z, std::size_t epochs, std::size_t batch_size, double lr,
                std::mt19937_64& rng, const std::vector<Var>& params, Loss&& loss_fn,
                const std::function<void()>& after_step, const char* who, TrainingCurve* curve) {
  if (batch_size == 0) throw std::invalid_argument(std::string(who) + ": batch_size must be >= 1");
  nn::AdamState adam(lr);
  std::vector<Index> idx(static_cast<std::size_t>(z.cols()));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < idx.size(); b += batch_size) {
      const std::size_t e = std::min(idx.size(), b + batch_size);
      const MatrixXd batch = gather(z, idx, b, e);
      nn::zero_grad(params);
      Var loss = loss_fn(batch);
      if (!std::isfinite(loss->scalar())) {
        throw DivergenceError(std::string(who) + ": non-finite loss at epoch " +
                             std::to_string(epoch));
      }
      nn::backward(loss);
      nn::adam_step(adam, params);
      after_step();
      total += loss->scalar() * double(e - b);
    }
    if (curve) curve->epoch_loss.push_back(total / double(idx.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------- MADE

MadeModel::MadeModel(Index dim, const MadeConfig& config, std::mt19937_64& rng)
    : ordering_(config.ordering), components_(config.components),
      standardizer_(Standardizer::identity(dim)) {
  if (dim < 1) throw std::invalid_argument("MadeModel: dim must be >= 1");
  if (components_ < 1) throw std::invalid_argument("MadeModel: need at least one component");
  if (ordering_.empty()) {
    ordering_.resize(static_cast<std::size_t>(dim));
    std::iota(ordering_.begin(), ordering_.end(), Index{0});
  }
  std::vector<Index> widths{dim};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(3 * components_ * dim);
  net_ = nn::Mlp(widths, config.spectral, rng);
  // Spread the initial component means so identical heads can separate.
  auto& bias = net_.layers.back().bias->value;
  for (Index c = 0; c < dim; ++c) {
    for (Index k = 0; k < components_; ++k) {
      const double spread = components_ > 1 ? -1.0 + 2.0 * double(k) / double(components_ - 1) : 0.0;
      bias(c * 3 * components_ + components_ + k, 0) = spread;
    }
  }
  apply_masks(true);
}

MadeModel::MadeModel(nn::Mlp net, std::vector<Index> ordering, Index components,
                     Standardizer standardizer)
    : net_(std::move(net)), ordering_(std::move(ordering)), components_(components),
      standardizer_(std::move(standardizer)) {
  if (net_.output_width() != 3 * components_ * dim() || net_.input_width() != dim()) {
    throw std::invalid_argument("MadeModel: network widths do not match dim and components");
  }
  apply_masks(false);
}

void MadeModel::apply_masks(bool refresh_spectral) {
  const Index d = dim();
  std::vector<Index> sorted = ordering_;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < d; ++i) {
    if (sorted[std::size_t(i)] != i) throw std::invalid_argument("MadeModel: ordering is not a permutation");
  }
  VectorXi position(d);
  for (Index i = 0; i < d; ++i) position(ordering_[std::size_t(i)]) = int(i);
  // Degrees: input coordinate c has position(c) + 1; hidden units cycle
  // through 1 .. d-1 (0 when d = 1, which cuts them off from the inputs).
  VectorXi prev = position.array() + 1;
  for (std::size_t l = 0; l + 1 < net_.layers.size(); ++l) {
    auto& layer = net_.layers[l];
    const Index out = layer.weight->rows();
    VectorXi deg(out);
    for (Index k = 0; k < out; ++k) deg(k) = d > 1 ? int(k % (d - 1)) + 1 : 0;
    MatrixXd mask(out, prev.size());
    for (Index k = 0; k < out; ++k) {
      for (Index j = 0; j < prev.size(); ++j) mask(k, j) = deg(k) >= prev(j) ? 1.0 : 0.0;
    }
    layer.mask = mask;
    prev = deg;
  }
  auto& last = net_.layers.back();
  MatrixXd mask(last.weight->rows(), prev.size());
  for (Index r = 0; r < mask.rows(); ++r) {
    const int out_degree = position(r / (3 * components_)) + 1;
    for (Index j = 0; j < prev.size(); ++j) mask(r, j) = out_degree > prev(j) ? 1.0 : 0.0;
  }
  last.mask = mask;
  if (refresh_spectral) net_.refresh_spectral(50);
}

Var MadeModel::log_density_graph(const Var& z) const {
  const Var out = net_.forward(z);
  const Index k = components_;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var total;
  for (Index c = 0; c < dim(); ++c) {
    const Index base = c * 3 * k;
    const Var logits = nn::rows(out, base, k);
    const Var mu = nn::rows(out, base + k, k);
    const Var ls = nn::clamp(nn::rows(out, base + 2 * k, k), kLogScaleMin, kLogScaleMax);
    const Var u = nn::mul(nn::sub(nn::rows(z, c, 1), mu), nn::exp(nn::neg(ls)));
    Var comp = nn::sub(logits, nn::logsumexp_cols(logits));
    comp = nn::sub(comp, nn::add(nn::scale(nn::square(u), 0.5), ls));
    const Var lp = nn::add_scalar(nn::logsumexp_cols(comp), -half_log_2pi);
    total = total ? nn::add(total, lp) : lp;
  }
  return total;
}

VectorXd MadeModel::log_density(const MatrixXd& x) const {
  return log_density_graph(nn::constant(standardizer_.apply(x)))->value.row(0).transpose();
}

MadeModel::Heads MadeModel::heads(const MatrixXd& z, Index coord) const {
  const MatrixXd out = net_.forward(nn::constant(z))->value;
  const Index k = components_;
  const Index base = coord * 3 * k;
  Heads h;
  const MatrixXd logits = out.middleRows(base, k);
  h.weights = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp();
  h.weights = h.weights.array().rowwise() / h.weights.colwise().sum().array();
  h.means = out.middleRows(base + k, k);
  h.log_scales = out.middleRows(base + 2 * k, k).cwiseMax(kLogScaleMin).cwiseMin(kLogScaleMax);
  return h;
}

double made_log_density(const MadeModel& model, const VectorXd& x) {
  return model.log_density(x)(0);
}

MadeModel made_fit(const MatrixXd& data, const MadeConfig& config, TrainingCurve* curve) {
  if (data.cols() < 2) throw std::invalid_argument("made_fit: need at least two samples");
  std::mt19937_64 rng(config.seed);
  MadeModel model(data.rows(), config, rng);
  model.set_standardizer(Standardizer::fit(data));
  const MatrixXd z = model.standardizer().apply(data);
  train_loop(
      z, config.epochs, config.batch_size, config.learning_rate, rng, model.parameters(),
      [&](const MatrixXd& batch) {
        return nn::neg(nn::mean(model.log_density_graph(nn::constant(batch))));
      },
      [&] { model.net().refresh_spectral(1); }, "made_fit", curve);
  return model;
}

// ---------------------------------------------------------------- EBM

MlpEnergy::MlpEnergy(Index dim, std::vector<Index> hidden, bool spectral, std::mt19937_64& rng) {
  std::vector<Index> widths{dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  net_ = nn::Mlp(widths, spectral, rng);
  log_gain_ = nn::parameter(MatrixXd::Zero(1, 1));
}

MlpEnergy::MlpEnergy(nn::Mlp net, double log_gain)
    : net_(std::move(net)), log_gain_(nn::parameter(MatrixXd::Constant(1, 1, log_gain))) {
  if (net_.output_width() != 1) throw std::invalid_argument("MlpEnergy: output width must be 1");
}

Var MlpEnergy::gain() const { return nn::exp(log_gain_); }
Var MlpEnergy::energy(const Var& x) const { return nn::mul(gain(), net_.forward(x)); }
Var MlpEnergy::score(const Var& x) const { return nn::mul(gain(), net_.input_gradient(x)); }

std::vector<Var> MlpEnergy::parameters() const {
  auto out = net_.parameters();
  out.push_back(log_gain_);
  return out;
}

QuadraticEnergy::QuadraticEnergy(VectorXd curvature, VectorXd center, double offset)
    : curvature_(std::move(curvature)), center_(std::move(center)), offset_(offset) {
  if (curvature_.size() != center_.size()) {
    throw std::invalid_argument("QuadraticEnergy: curvature and center sizes differ");
  }
}

Var QuadraticEnergy::energy(const Var& x) const {
  const Var diff = nn::sub(x, nn::constant(center_));
  const Var q = nn::col_sum(nn::mul(nn::constant(curvature_), nn::square(diff)));
  return nn::add_scalar(nn::scale(q, -0.5), offset_);
}

Var QuadraticEnergy::score(const Var& x) const {
  return nn::neg(nn::mul(nn::constant(curvature_), nn::sub(x, nn::constant(center_))));
}

VectorXd hvp_fd(const EnergyFunction& energy, const MatrixXd& x, const MatrixXd& v, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("hvp_fd: eps must be positive");
  const MatrixXd up = energy.score(nn::constant(x + eps * v))->value;
  const MatrixXd down = energy.score(nn::constant(x - eps * v))->value;
  return (v.cwiseProduct(up - down).colwise().sum() / (2.0 * eps)).transpose();
}

Var ssm_loss(const EnergyFunction& energy, const MatrixXd& batch, const SsmConfig& config,
             std::uint64_t seed) {
  if (batch.cols() == 0) throw std::invalid_argument("ssm_loss: empty batch");
  if (batch.rows() != energy.dim()) throw std::invalid_argument("ssm_loss: dimension mismatch");
  if (config.n_slices < 1 && !config.exact_trace) {
    throw std::invalid_argument("ssm_loss: n_slices must be >= 1");
  }
  if (!(config.hvp_epsilon > 0.0)) throw std::invalid_argument("ssm_loss: hvp_epsilon must be > 0");
  const Index d = batch.rows();
  const Index n = batch.cols();
  const double eps = config.hvp_epsilon;
  const Var s0 = energy.score(nn::constant(batch));

  std::vector<MatrixXd> slices;
  double weight = 1.0;
  if (config.exact_trace) {
    for (Index i = 0; i < d; ++i) {
      MatrixXd v = MatrixXd::Zero(d, n);
      v.row(i).setOnes();
      slices.push_back(std::move(v));
    }
  } else {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (std::size_t s = 0; s < config.n_slices; ++s) {
      MatrixXd v(d, n);
      for (Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
      slices.push_back(std::move(v));
    }
    weight = 1.0 / double(config.n_slices);
  }

  const bool sliced_norm = config.variant == SsmVariant::SlicedNorm && !config.exact_trace;
  Var total = sliced_norm ? Var{} : nn::scale(nn::col_sum(nn::square(s0)), 0.5);
  for (const MatrixXd& v : slices) {
    const Var vc = nn::constant(v);
    const Var up = energy.score(nn::constant(batch + eps * v));
    const Var down = energy.score(nn::constant(batch - eps * v));
    Var term = nn::scale(nn::col_sum(nn::mul(vc, nn::sub(up, down))), 1.0 / (2.0 * eps));
    if (sliced_norm) term = nn::add(term, nn::scale(nn::square(nn::col_sum(nn::mul(vc, s0))), 0.5));
    term = nn::scale(term, weight);
    total = total ? nn::add(total, term) : term;
  }
  Var loss = nn::mean(total);
  if (!std::isfinite(loss->scalar())) throw DivergenceError("ssm_loss: non-finite loss");
  return loss;
}

VectorXd hutchinson_samples(const EnergyFunction& energy, const VectorXd& x, std::size_t n,
                            double eps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  MatrixXd v(x.size(), Index(n));
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
  return hvp_fd(energy, x.replicate(1, Index(n)), v, eps);
}

EbmModel::EbmModel(std::shared_ptr<EnergyFunction> energy, Standardizer standardizer, double offset)
    : energy_(std::move(energy)), standardizer_(std::move(standardizer)), offset_(offset) {
  if (!energy_) throw std::invalid_argument("EbmModel: null energy");
  if (standardizer_.dim() != energy_->dim()) {
    throw std::invalid_argument("EbmModel: standardizer dimension mismatch");
  }
}

VectorXd EbmModel::log_density_unnormalized(const MatrixXd& x) const {
  const VectorXd e =
      energy_->energy(nn::constant(standardizer_.apply(x)))->value.row(0).transpose();
  return e.array() + offset_;
}

MatrixXd EbmModel::score(const MatrixXd& x) const {
  return energy_->score(nn::constant(standardizer_.apply(x)))->value;
}

double ebm_log_density_unnormalized(const EbmModel& model, const VectorXd& x) {
  return model.log_density_unnormalized(x)(0);
}

EbmModel ebm_fit(const MatrixXd& data, const EbmConfig& config, TrainingCurve* curve) {
  if (data.cols() < 2) throw std::invalid_argument("ebm_fit: need at least two samples");
  std::mt19937_64 rng(config.seed);
  auto energy = std::make_shared<MlpEnergy>(data.rows(), config.hidden, config.spectral, rng);
  EbmModel model(energy, Standardizer::fit(data));
  const MatrixXd z = model.standardizer().apply(data);
  train_loop(
      z, config.epochs, config.batch_size, config.learning_rate, rng, energy->parameters(),
      [&](const MatrixXd& batch) { return ssm_loss(*energy, batch, config.ssm, rng()); },
      [&] { energy->refresh_spectral(1); }, "ebm_fit", curve);
  return model;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void put_standardizer(ckpt::Checkpoint& c, const Standardizer& s) {
  c.arrays["standardizer.mean"] = s.mean;
  c.arrays["standardizer.scale"] = s.scale;
}

Standardizer get_standardizer(const ckpt::Checkpoint& c) {
  return {c.array_at("standardizer.mean").col(0), c.array_at("standardizer.scale").col(0)};
}

std::vector<std::uint32_t> widths_of(const nn::Mlp& mlp) {
  std::vector<std::uint32_t> out;
  for (auto w : mlp.widths()) out.push_back(static_cast<std::uint32_t>(w));
  return out;
}

void expect_kind(const ckpt::Checkpoint& c, const std::string& kind) {
  if (c.kind != kind) {
    throw std::runtime_error("checkpoint kind is '" + c.kind + "', expected '" + kind + "'");
  }
}

}  // namespace

ckpt::Checkpoint to_checkpoint(const MadeModel& model) {
  ckpt::Checkpoint c;
  c.kind = "made";
  c.widths = widths_of(model.net());
  c.meta["components"] = double(model.components());
  VectorXd order(model.dim());
  for (Index i = 0; i < model.dim(); ++i) order(i) = double(model.ordering()[std::size_t(i)]);
  c.arrays["ordering"] = order;
  put_standardizer(c, model.standardizer());
  ckpt::put_mlp(c, "net", model.net());
  return c;
}

MadeModel made_from_checkpoint(const ckpt::Checkpoint& c) {
  expect_kind(c, "made");
  const MatrixXd& order = c.array_at("ordering");
  std::vector<Index> ordering;
  for (Index i = 0; i < order.size(); ++i) ordering.push_back(Index(order(i)));
  return MadeModel(ckpt::get_mlp(c, "net"), std::move(ordering), Index(c.meta_at("components")),
                   get_standardizer(c));
}

ckpt::Checkpoint to_checkpoint(const EbmModel& model) {
  const auto* mlp = dynamic_cast<const MlpEnergy*>(&model.energy());
  if (!mlp) throw std::invalid_argument("to_checkpoint: only MLP energies can be saved");
  ckpt::Checkpoint c;
  c.kind = "ebm";
  c.widths = widths_of(mlp->net());
  c.meta["offset"] = model.offset();
  c.meta["log_gain"] = mlp->log_gain();
  put_standardizer(c, model.standardizer());
  ckpt::put_mlp(c, "energy", mlp->net());
  return c;
}

EbmModel ebm_from_checkpoint(const ckpt::Checkpoint& c) {
  expect_kind(c, "ebm");
  return EbmModel(std::make_shared<MlpEnergy>(ckpt::get_mlp(c, "energy"), c.meta_at("log_gain")), get_standardizer(c),
                  c.meta_at("offset"));
}

}  // namespace ndi::density
