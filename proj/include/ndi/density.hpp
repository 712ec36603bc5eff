#pragma once

// Density models of expert (state, action) samples. Samples are stored as
// columns of a (dim x n) matrix throughout.

#include "ndi/checkpoint.hpp"
#include "ndi/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ndi::density {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

/// Per-coordinate affine map to zero mean and unit variance. Coordinates with
/// (near) zero spread keep scale 1.
struct Standardizer {
  VectorXd mean;
  VectorXd scale;

  static Standardizer fit(const MatrixXd& data);
  static Standardizer identity(Index dim);

  Index dim() const { return mean.size(); }
  MatrixXd apply(const MatrixXd& x) const;
  MatrixXd invert(const MatrixXd& z) const;
  // log |dz/dx|: add to a standardized-space log density for raw space.
  double log_jacobian() const;
};

struct TrainingCurve {
  std::vector<double> epoch_loss;
};

/// True if no 10-epoch moving average exceeds the previous one by more than
/// slack (absolute).
bool smoothed_nonincreasing(const std::vector<double>& loss, std::size_t window = 10,
                            double slack = 1e-3);

// ---------------------------------------------------------------- MADE

struct MadeConfig {
  std::vector<Index> hidden{64, 64};
  Index components = 5;
  // Position i of the autoregressive order holds coordinate ordering[i];
  // empty means the identity order.
  std::vector<Index> ordering;
  bool spectral = false;
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Masked autoregressive network with a K-component Gaussian mixture head per
/// coordinate. Log-scales are clamped to [kLogScaleMin, kLogScaleMax].
class MadeModel {
 public:
  static constexpr double kLogScaleMin = -7.0;
  static constexpr double kLogScaleMax = 3.0;

  MadeModel(Index dim, const MadeConfig& config, std::mt19937_64& rng);
  MadeModel(nn::Mlp net, std::vector<Index> ordering, Index components, Standardizer standardizer);

  Index dim() const { return static_cast<Index>(ordering_.size()); }
  Index components() const { return components_; }
  const std::vector<Index>& ordering() const { return ordering_; }
  const Standardizer& standardizer() const { return standardizer_; }
  void set_standardizer(Standardizer s) { standardizer_ = std::move(s); }

  // (1 x n) log densities of standardized inputs z, as a graph node.
  nn::Var log_density_graph(const nn::Var& z) const;
  // Standardized-space log density of raw samples (dim x n).
  VectorXd log_density(const MatrixXd& x) const;

  struct Heads {
    MatrixXd weights;     // K x n (softmax, columns sum to 1)
    MatrixXd means;       // K x n
    MatrixXd log_scales;  // K x n (clamped)
  };
  // Mixture parameters of coordinate `coord` for standardized inputs z.
  Heads heads(const MatrixXd& z, Index coord) const;

  std::vector<nn::Var> parameters() const { return net_.parameters(); }
  const nn::Mlp& net() const { return net_; }
  nn::Mlp& net() { return net_; }

 private:
  void apply_masks(bool refresh_spectral);

  nn::Mlp net_;
  std::vector<Index> ordering_;
  Index components_ = 1;
  Standardizer standardizer_;
};

/// Standardized-space log density of one raw sample.
double made_log_density(const MadeModel& model, const VectorXd& x);

/// Maximum-likelihood fit with Adam on minibatches. Throws std::invalid_argument
/// for fewer than two samples and std::runtime_error (naming the epoch) on a
/// non-finite loss.
MadeModel made_fit(const MatrixXd& data, const MadeConfig& config, TrainingCurve* curve = nullptr);

// ---------------------------------------------------------------- EBM

/// Scalar energy E(x), read as the log of an unnormalized density.
class EnergyFunction {
 public:
  virtual ~EnergyFunction() = default;
  virtual Index dim() const = 0;
  // (1 x n) energies of inputs (dim x n).
  virtual nn::Var energy(const nn::Var& x) const = 0;
  // (dim x n) gradients of E with respect to x; differentiable in parameters().
  virtual nn::Var score(const nn::Var& x) const = 0;
  virtual std::vector<nn::Var> parameters() const = 0;
  virtual void refresh_spectral(int /*n_power_iterations*/) {}
};

/// Energy exp(log_gain) * mlp(x). With spectral normalization the MLP is
/// 1-Lipschitz; the trainable gain restores the dynamic range of E.
class MlpEnergy final : public EnergyFunction {
 public:
  MlpEnergy(Index dim, std::vector<Index> hidden, bool spectral, std::mt19937_64& rng);
  explicit MlpEnergy(nn::Mlp net, double log_gain = 0.0);

  Index dim() const override { return net_.input_width(); }
  nn::Var energy(const nn::Var& x) const override;
  nn::Var score(const nn::Var& x) const override;
  std::vector<nn::Var> parameters() const override;
  void refresh_spectral(int n) override { net_.refresh_spectral(n); }

  const nn::Mlp& net() const { return net_; }
  nn::Mlp& net() { return net_; }
  double log_gain() const { return log_gain_->value(0, 0); }

 private:
  nn::Var gain() const;

  nn::Mlp net_;
  nn::Var log_gain_;
};

/// E(x) = -1/2 sum_i a_i (x_i - c_i)^2 + offset. Hessian is -diag(a).
class QuadraticEnergy final : public EnergyFunction {
 public:
  QuadraticEnergy(VectorXd curvature, VectorXd center, double offset = 0.0);

  Index dim() const override { return curvature_.size(); }
  nn::Var energy(const nn::Var& x) const override;
  nn::Var score(const nn::Var& x) const override;
  std::vector<nn::Var> parameters() const override { return {}; }

 private:
  VectorXd curvature_;
  VectorXd center_;
  double offset_;
};

enum class SsmVariant { Standard, SlicedNorm };

struct SsmConfig {
  std::size_t n_slices = 1;
  double hvp_epsilon = 1e-4;
  SsmVariant variant = SsmVariant::Standard;
  // Sum v^T H v over the coordinate basis instead of sampling slices.
  bool exact_trace = false;
};

/// v^T H v per column by central differences of the score:
/// v^T (score(x + eps v) - score(x - eps v)) / (2 eps).
VectorXd hvp_fd(const EnergyFunction& energy, const MatrixXd& x, const MatrixXd& v, double eps);

/// Sliced score-matching loss on standardized inputs, as a graph node:
/// mean over the batch of E_v[v^T H v] + 1/2 |grad E|^2 (Standard), or of
/// E_v[v^T H v + 1/2 (v^T grad E)^2] (SlicedNorm). Throws std::invalid_argument
/// on an empty batch or a bad config.
nn::Var ssm_loss(const EnergyFunction& energy, const MatrixXd& batch, const SsmConfig& config,
                 std::uint64_t seed);

/// n single-slice Hutchinson samples v^T H v at the point x, v ~ N(0, I).
VectorXd hutchinson_samples(const EnergyFunction& energy, const VectorXd& x, std::size_t n,
                            double eps, std::uint64_t seed);

struct EbmConfig {
  std::vector<Index> hidden{64, 64};
  bool spectral = true;
  SsmConfig ssm;
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Unnormalized model: log q(x) = E(standardize(x)) + offset + const.
class EbmModel {
 public:
  EbmModel(std::shared_ptr<EnergyFunction> energy, Standardizer standardizer, double offset = 0.0);

  Index dim() const { return energy_->dim(); }
  VectorXd log_density_unnormalized(const MatrixXd& x) const;
  // Scores with respect to standardized coordinates.
  MatrixXd score(const MatrixXd& x) const;

  const EnergyFunction& energy() const { return *energy_; }
  EnergyFunction& energy() { return *energy_; }
  std::shared_ptr<EnergyFunction> energy_ptr() const { return energy_; }
  const Standardizer& standardizer() const { return standardizer_; }
  double offset() const { return offset_; }
  void set_offset(double c) { offset_ = c; }

 private:
  std::shared_ptr<EnergyFunction> energy_;
  Standardizer standardizer_;
  double offset_ = 0.0;
};

double ebm_log_density_unnormalized(const EbmModel& model, const VectorXd& x);

/// Sliced score matching with Adam. Throws like made_fit.
EbmModel ebm_fit(const MatrixXd& data, const EbmConfig& config, TrainingCurve* curve = nullptr);

// Kind tags "made" and "ebm". Loading throws std::runtime_error on a kind
// mismatch or missing entry.
ckpt::Checkpoint to_checkpoint(const MadeModel& model);
MadeModel made_from_checkpoint(const ckpt::Checkpoint& c);
ckpt::Checkpoint to_checkpoint(const EbmModel& model);
EbmModel ebm_from_checkpoint(const ckpt::Checkpoint& c);

}  // namespace ndi::density
