#include "ndi/density.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace ndi;
using namespace ndi::density;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

MatrixXd normal_samples(Index d, Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  MatrixXd x(d, n);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

// x = mean + L e with L L^T = cov for cov = [[4, 0.8], [0.8, 0.25]] (rho = 0.8).
struct CorrelatedGaussian {
  Eigen::Vector2d mean{1.0, -1.0};
  Eigen::Matrix2d cov = (Eigen::Matrix2d() << 4.0, 0.8, 0.8, 0.25).finished();

  MatrixXd sample(Index n, std::mt19937_64& rng) const {
    const Eigen::Matrix2d l = cov.llt().matrixL();
    return (l * normal_samples(2, n, rng)).colwise() + mean;
  }
  double mean_log_density(const MatrixXd& x) const {
    const Eigen::Matrix2d inv = cov.inverse();
    double total = 0.0;
    for (Index i = 0; i < x.cols(); ++i) {
      const Eigen::Vector2d d = x.col(i) - mean;
      total += -0.5 * d.dot(inv * d) - 2 * kHalfLog2Pi - 0.5 * std::log(cov.determinant());
    }
    return total / double(x.cols());
  }
};

// Freezes every head of a MADE to a standard normal.
void make_standard_normal(MadeModel& m) {
  for (auto& layer : m.net().layers) layer.weight->value.setZero();
  m.net().layers.back().bias->value.setZero();
}

MadeModel random_made(Index dim, Index k, std::uint64_t seed, std::vector<Index> ordering = {},
                      double weight_scale = 0.5) {
  std::mt19937_64 rng(seed);
  MadeConfig cfg;
  cfg.hidden = {16, 16};
  cfg.components = k;
  cfg.ordering = std::move(ordering);
  MadeModel m(dim, cfg, rng);
  std::normal_distribution<double> normal(0.0, weight_scale);
  for (auto& p : m.parameters()) {
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = normal(rng);
  }
  return m;
}

// Checks that head parameters at position i ignore inputs at positions >= i.
void expect_mask_property(const MadeModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const MatrixXd z = normal_samples(m.dim(), 3, rng);
  for (Index pi = 0; pi < m.dim(); ++pi) {
    const Index coord = m.ordering()[std::size_t(pi)];
    const auto base = m.heads(z, coord);
    for (Index pj = pi; pj < m.dim(); ++pj) {
      MatrixXd moved = z;
      moved.row(m.ordering()[std::size_t(pj)]).array() += 0.37;
      const auto h = m.heads(moved, coord);
      EXPECT_LT((h.means - base.means).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((h.log_scales - base.log_scales).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((h.weights - base.weights).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

double mean_cosine(const MatrixXd& a, const MatrixXd& b) {
  double total = 0.0;
  for (Index i = 0; i < a.cols(); ++i) {
    total += a.col(i).dot(b.col(i)) / (a.col(i).norm() * b.col(i).norm() + 1e-300);
  }
  return total / double(a.cols());
}

}  // namespace

TEST(Standardizer, RoundTripAndJacobian) {
  std::mt19937_64 rng(1);
  MatrixXd x = normal_samples(3, 100, rng);
  x.row(1) *= 4.0;
  x.row(2).setConstant(7.0);
  const auto s = Standardizer::fit(x);
  const MatrixXd z = s.apply(x);
  EXPECT_LT(z.rowwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(z.row(0).squaredNorm() / 100.0, 1.0, 1e-12);
  EXPECT_EQ(s.scale(2), 1.0);
  EXPECT_LT((s.invert(z) - x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(s.log_jacobian(), -std::log(s.scale(0)) - std::log(s.scale(1)), 1e-15);
}

TEST(Made, OneDimStandardNormalHead) {
  auto m = random_made(1, 1, 2);
  make_standard_normal(m);
  EXPECT_NEAR(made_log_density(m, VectorXd::Zero(1)), -kHalfLog2Pi, 1e-15);
  EXPECT_NEAR(-kHalfLog2Pi, -0.9189, 1e-4);
}

TEST(Made, TwoDimFactorizes) {
  auto m = random_made(2, 3, 3);
  make_standard_normal(m);
  EXPECT_NEAR(made_log_density(m, VectorXd::Zero(2)), -2 * kHalfLog2Pi, 1e-14);
}

TEST(Made, RandomModelIntegratesToOne) {
  // Mild weights keep every component wider than the grid spacing.
  const auto m = random_made(2, 3, 4, {}, 0.2);
  const int n = 401;
  const double lo = -12.0, hi = 12.0, h = (hi - lo) / (n - 1);
  MatrixXd grid(2, n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) grid.col(i * n + j) << lo + i * h, lo + j * h;
  }
  const double mass = m.log_density(grid).array().exp().sum() * h * h;
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(Made, ConditionalsIntegrateToOne) {
  const auto m = random_made(3, 4, 5);
  std::mt19937_64 rng(6);
  const MatrixXd z = normal_samples(3, 4, rng);
  for (Index c = 0; c < 3; ++c) {
    const auto heads = m.heads(z, c);
    EXPECT_LT((heads.weights.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    for (Index col = 0; col < z.cols(); ++col) {
      // Trapezoid rule on a range covering every component by 12 scales.
      const VectorXd mu = heads.means.col(col);
      const VectorXd sd = heads.log_scales.col(col).array().exp();
      const double lo = (mu - 12 * sd).minCoeff(), hi = (mu + 12 * sd).maxCoeff();
      const int n = 200001;
      const double h = (hi - lo) / (n - 1);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = lo + i * h;
        double p = 0.0;
        for (Index k = 0; k < mu.size(); ++k) {
          const double u = (x - mu(k)) / sd(k);
          p += heads.weights(k, col) * std::exp(-0.5 * u * u - kHalfLog2Pi) / sd(k);
        }
        total += (i == 0 || i == n - 1 ? 0.5 : 1.0) * p;
      }
      EXPECT_NEAR(total * h, 1.0, 1e-6);
    }
  }
}

TEST(Made, MaskPropertyRandomModels) {
  expect_mask_property(random_made(4, 2, 7), 1);
  expect_mask_property(random_made(4, 2, 8, {2, 0, 3, 1}), 2);
  expect_mask_property(random_made(1, 3, 9), 3);
}

TEST(Made, RejectsBadOrdering) {
  EXPECT_THROW(random_made(3, 2, 10, {0, 0, 1}), std::invalid_argument);
}

TEST(MadeFit, CorrelatedGaussianWithinTenthNat) {
  const CorrelatedGaussian g;
  std::mt19937_64 rng(11);
  const MatrixXd train = g.sample(10000, rng);
  const MatrixXd test = g.sample(2000, rng);
  MadeConfig cfg;
  cfg.epochs = 30;
  TrainingCurve curve;
  const auto m = made_fit(train, cfg, &curve);
  const double model = m.log_density(test).mean() + m.standardizer().log_jacobian();
  EXPECT_LT(std::abs(model - g.mean_log_density(test)), 0.1);
  EXPECT_TRUE(smoothed_nonincreasing(curve.epoch_loss));
  expect_mask_property(m, 4);

  MadeConfig permuted = cfg;
  permuted.ordering = {1, 0};
  const auto mp = made_fit(train, permuted);
  const double model_p = mp.log_density(test).mean() + mp.standardizer().log_jacobian();
  EXPECT_LT(std::abs(model_p - model), 0.2);
  expect_mask_property(mp, 5);
}

TEST(MadeFit, SinglePointCollapses) {
  MatrixXd data(2, 64);
  data.row(0).setConstant(3.0);
  data.row(1).setConstant(-1.0);
  MadeConfig cfg;
  cfg.components = 1;
  // Without hidden units the heads are pure biases, so the mean's gradient
  // vanishes exactly at the data point.
  cfg.hidden = {};
  cfg.epochs = 150;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  const auto m = made_fit(data, cfg);
  const MatrixXd z = m.standardizer().apply(data.col(0));
  for (Index c = 0; c < 2; ++c) {
    const auto h = m.heads(z, c);
    EXPECT_NEAR(m.standardizer().invert(z)(c, 0), data(c, 0), 1e-12);
    EXPECT_NEAR(h.means(0, 0), z(c, 0), 1e-6);
    EXPECT_EQ(h.log_scales(0, 0), MadeModel::kLogScaleMin);
  }
}

TEST(MadeFit, Errors) {
  EXPECT_THROW(made_fit(MatrixXd::Zero(2, 1), {}), std::invalid_argument);
  MatrixXd bad = MatrixXd::Ones(2, 10);
  bad(0, 3) = std::nan("");
  try {
    made_fit(bad, {});
    FAIL() << "expected failure";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
  }
}

TEST(MadeFit, CheckpointRoundTripAndDeterminism) {
  std::mt19937_64 rng(12);
  const MatrixXd data = CorrelatedGaussian{}.sample(500, rng);
  MadeConfig cfg;
  cfg.epochs = 3;
  cfg.hidden = {16, 16};
  cfg.seed = 5;
  const auto a = made_fit(data, cfg);
  const auto b = made_fit(data, cfg);
  EXPECT_EQ(ckpt::serialize(to_checkpoint(a)), ckpt::serialize(to_checkpoint(b)));
  const auto loaded = made_from_checkpoint(ckpt::deserialize(ckpt::serialize(to_checkpoint(a))));
  EXPECT_TRUE((loaded.log_density(data).array() == a.log_density(data).array()).all());
  EXPECT_THROW(ebm_from_checkpoint(to_checkpoint(a)), std::runtime_error);
}

TEST(Ebm, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(13);
  auto energy = std::make_shared<MlpEnergy>(3, std::vector<Index>{8, 8}, false, rng);
  for (auto& p : energy->parameters()) p->value.setZero();
  const EbmModel m(energy, Standardizer::identity(3));
  EXPECT_TRUE(m.log_density_unnormalized(normal_samples(3, 10, rng)).isZero());
}

TEST(Ebm, QuadraticEnergyValueAndShift) {
  auto q = std::make_shared<QuadraticEnergy>(VectorXd::Ones(2), VectorXd::Zero(2));
  EbmModel m(q, Standardizer::identity(2));
  EXPECT_NEAR(ebm_log_density_unnormalized(m, VectorXd::Ones(2)), -1.0, 1e-15);
  std::mt19937_64 rng(14);
  const MatrixXd x = normal_samples(2, 20, rng);
  const VectorXd before = m.log_density_unnormalized(x);
  m.set_offset(2.5);
  EXPECT_LT((m.log_density_unnormalized(x) - before).array().abs().maxCoeff() - 2.5, 1e-12);
  EXPECT_LT(((m.log_density_unnormalized(x) - before).array() - 2.5).abs().maxCoeff(), 1e-12);
}

TEST(Ssm, ExactTraceOnQuadratic) {
  const QuadraticEnergy q(VectorXd::Ones(2), VectorXd::Zero(2));
  SsmConfig cfg;
  cfg.exact_trace = true;
  EXPECT_NEAR(ssm_loss(q, MatrixXd::Zero(2, 1), cfg, 0)->scalar(), -2.0, 1e-8);
  std::mt19937_64 rng(15);
  for (int i = 0; i < 10; ++i) {
    const MatrixXd x = normal_samples(2, 1, rng);
    EXPECT_NEAR(ssm_loss(q, x, cfg, 0)->scalar(), -2.0 + 0.5 * x.squaredNorm(), 1e-8);
  }
}

TEST(Ssm, HutchinsonConvergesAtOrigin) {
  const QuadraticEnergy q(VectorXd::Ones(2), VectorXd::Zero(2));
  const VectorXd s = hutchinson_samples(q, VectorXd::Zero(2), 10000, 1e-4, 16);
  const double mean = s.mean();
  const double se = std::sqrt((s.array() - mean).square().sum() / (s.size() - 1) / s.size());
  EXPECT_LT(std::abs(mean + 2.0), 3 * se);
  // The slice loss averages the same estimator.
  SsmConfig cfg;
  cfg.n_slices = 10000;
  EXPECT_LT(std::abs(ssm_loss(q, MatrixXd::Zero(2, 1), cfg, 16)->scalar() + 2.0), 3 * se);
}

TEST(Ssm, FiniteDifferenceHvpMatchesAnalytic) {
  std::mt19937_64 rng(17);
  const QuadraticEnergy q(VectorXd::Ones(2), VectorXd::Zero(2));
  const MatrixXd x = normal_samples(2, 50, rng);
  const MatrixXd v = normal_samples(2, 50, rng);
  const VectorXd hv = hvp_fd(q, x, v, 1e-4);
  EXPECT_LT((hv + v.colwise().squaredNorm().transpose()).cwiseAbs().maxCoeff(), 1e-6);

  VectorXd a(5);
  a << 0.5, 1.0, 2.0, 3.0, 0.25;
  const QuadraticEnergy q5(a, VectorXd::LinSpaced(5, -1.0, 1.0));
  const MatrixXd x5 = normal_samples(5, 20, rng);
  const MatrixXd v5 = normal_samples(5, 20, rng);
  const VectorXd analytic = -(v5.array().square().colwise() * a.array()).colwise().sum().transpose();
  EXPECT_LT((hvp_fd(q5, x5, v5, 1e-4) - analytic).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ssm, HutchinsonTraceOnFiveDimQuadratic) {
  VectorXd a(5);
  a << 0.5, 1.0, 2.0, 3.0, 0.25;
  const QuadraticEnergy q(a, VectorXd::Zero(5));
  const VectorXd s = hutchinson_samples(q, VectorXd::Constant(5, 0.3), 20000, 1e-4, 18);
  const double mean = s.mean();
  const double se = std::sqrt((s.array() - mean).square().sum() / (s.size() - 1) / s.size());
  EXPECT_LT(std::abs(mean + a.sum()), 3 * se);
}

TEST(Ssm, LossDifferentiableInWeights) {
  std::mt19937_64 rng(19);
  MlpEnergy e(2, {6, 6}, false, rng);
  const MatrixXd batch = normal_samples(2, 5, rng);
  auto params = e.parameters();
  for (auto variant : {SsmVariant::Standard, SsmVariant::SlicedNorm}) {
    SsmConfig cfg;
    cfg.variant = variant;
    cfg.n_slices = 2;
    cfg.hvp_epsilon = 1e-3;
    EXPECT_LT(nn::grad_check([&] { return ssm_loss(e, batch, cfg, 3); }, params, 1e-6), 1e-4);
  }
}

TEST(Ssm, RejectsBadInput) {
  const QuadraticEnergy q(VectorXd::Ones(2), VectorXd::Zero(2));
  EXPECT_THROW(ssm_loss(q, MatrixXd::Zero(2, 0), {}, 0), std::invalid_argument);
  SsmConfig cfg;
  cfg.n_slices = 0;
  EXPECT_THROW(ssm_loss(q, MatrixXd::Zero(2, 1), cfg, 0), std::invalid_argument);
  cfg.n_slices = 1;
  cfg.hvp_epsilon = 0.0;
  EXPECT_THROW(ssm_loss(q, MatrixXd::Zero(2, 1), cfg, 0), std::invalid_argument);
}

TEST(EbmFit, StandardGaussianScore) {
  std::mt19937_64 rng(20);
  const MatrixXd train = normal_samples(2, 10000, rng);
  const MatrixXd test = normal_samples(2, 500, rng);
  EbmConfig cfg;
  cfg.epochs = 10;
  cfg.hidden = {32, 32};
  TrainingCurve curve;
  const auto m = ebm_fit(train, cfg, &curve);
  const MatrixXd z = m.standardizer().apply(test);
  EXPECT_GE(mean_cosine(m.score(test), -z), 0.95);
  EXPECT_TRUE(m.log_density_unnormalized(test).allFinite());
  EXPECT_TRUE(m.log_density_unnormalized(train).allFinite());
}

TEST(EbmFit, ArgmaxNearShiftedMean) {
  std::mt19937_64 rng(21);
  const MatrixXd train = (normal_samples(2, 4000, rng).array() + 2.0).matrix();
  EbmConfig cfg;
  cfg.epochs = 15;
  cfg.hidden = {32, 32};
  const auto m = ebm_fit(train, cfg);
  MatrixXd grid(2, 81 * 81);
  for (int i = 0; i < 81; ++i) {
    for (int j = 0; j < 81; ++j) grid.col(i * 81 + j) << i * 0.05, j * 0.05;
  }
  Index best = 0;
  m.log_density_unnormalized(grid).maxCoeff(&best);
  EXPECT_LT((grid.col(best) - Eigen::Vector2d(2.0, 2.0)).norm(), 0.3);
}

TEST(EbmFit, TwoModesGiveTwoLocalMaxima) {
  std::mt19937_64 rng(22);
  MatrixXd train = normal_samples(2, 6000, rng) * 0.5;
  for (Index i = 0; i < train.cols(); ++i) train(0, i) += i % 2 ? 2.0 : -2.0;
  EbmConfig cfg;
  cfg.epochs = 20;
  cfg.hidden = {32, 32};
  // A spectrally normalized tanh network is too smooth to separate the modes.
  cfg.spectral = false;
  const auto m = ebm_fit(train, cfg);
  const int n = 61;
  MatrixXd grid(2, n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) grid.col(i * n + j) << -3.0 + i * 0.1, -1.5 + j * 0.05;
  }
  const VectorXd e = m.log_density_unnormalized(grid);
  int maxima = 0;
  for (int i = 1; i + 1 < n; ++i) {
    for (int j = 1; j + 1 < n; ++j) {
      bool peak = true;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if ((di || dj) && e((i + di) * n + j + dj) >= e(i * n + j)) peak = false;
        }
      }
      maxima += peak;
    }
  }
  EXPECT_EQ(maxima, 2);
}

TEST(EbmFit, CheckpointRoundTripAndDeterminism) {
  std::mt19937_64 rng(23);
  const MatrixXd data = normal_samples(2, 300, rng);
  EbmConfig cfg;
  cfg.epochs = 2;
  cfg.hidden = {8, 8};
  const auto a = ebm_fit(data, cfg);
  const auto b = ebm_fit(data, cfg);
  EXPECT_EQ(ckpt::serialize(to_checkpoint(a)), ckpt::serialize(to_checkpoint(b)));
  const auto loaded = ebm_from_checkpoint(ckpt::deserialize(ckpt::serialize(to_checkpoint(a))));
  EXPECT_TRUE((loaded.log_density_unnormalized(data).array() ==
               a.log_density_unnormalized(data).array())
                  .all());
  auto q = std::make_shared<QuadraticEnergy>(VectorXd::Ones(2), VectorXd::Zero(2));
  EXPECT_THROW(to_checkpoint(EbmModel(q, Standardizer::identity(2))), std::invalid_argument);
}

TEST(Checkpoint, FormatErrors) {
  ckpt::Checkpoint c;
  c.kind = "mlp";
  c.widths = {2, 3};
  c.meta["x"] = 1.5;
  c.arrays["w"] = MatrixXd::Random(2, 3);
  const std::string bytes = ckpt::serialize(c);
  EXPECT_EQ(bytes.substr(0, 8), std::string("NDICKPT\0", 8));
  const auto back = ckpt::deserialize(bytes);
  EXPECT_EQ(back.kind, "mlp");
  EXPECT_EQ(back.widths, c.widths);
  EXPECT_EQ(back.meta_at("x"), 1.5);
  EXPECT_TRUE(back.array_at("w") == c.arrays["w"]);
  EXPECT_THROW(back.meta_at("missing"), std::runtime_error);
  EXPECT_THROW(ckpt::deserialize(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(ckpt::deserialize(bad), std::runtime_error);
  bad = bytes;
  bad[8] = 9;
  EXPECT_THROW(ckpt::deserialize(bad), std::runtime_error);
  EXPECT_THROW(ckpt::load("/nonexistent/dir/file.ckpt"), std::runtime_error);
}
