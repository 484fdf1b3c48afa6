#include "vbamp/denoiser.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vbamp;

namespace {

Matrix random_spd(CounterRng& rng, Index b, double scale) {
  Matrix g(b, b);
  for (Index i = 0; i < b; ++i)
    for (Index j = 0; j < b; ++j) g(i, j) = rng.normal();
  return scale * (g * g.transpose() / double(b) + 0.2 * Matrix::Identity(b, b));
}

Vector random_vector(CounterRng& rng, Index b, double scale) {
  Vector v(b);
  for (Index i = 0; i < b; ++i) v(i) = scale * rng.normal();
  return v;
}

}  // namespace

TEST(BgDenoise, ZeroInputGivesZero) {
  const BgPrior prior{0.1, Matrix::Identity(2, 2)};
  const auto r = bg_denoise(Vector::Zero(2), {0.1 * Matrix::Identity(2, 2)}, prior);
  EXPECT_TRUE(r.xhat.isZero(0.0));
  EXPECT_GE(r.ratio, 0.0);
  EXPECT_LE(r.ratio, 1.0);
}

TEST(BgDenoise, DenseScalarIsWiener) {
  const BgPrior prior{1.0, Matrix::Identity(1, 1)};
  const auto r = bg_denoise(Vector::Constant(1, 2.0), {Matrix::Identity(1, 1)}, prior);
  EXPECT_DOUBLE_EQ(r.xhat(0), 1.0);
  EXPECT_DOUBLE_EQ(r.ratio, 1.0);
}

TEST(BgDenoise, MatchesQuadratureOracle) {
  const BgPrior prior{0.1, Matrix::Identity(2, 2)};
  const EffectiveChannel ch{0.1 * Matrix::Identity(2, 2)};
  const Vector u = (Vector(2) << 1.0, -0.5).finished();
  const Vector oracle = mmse_oracle(u, ch, prior, 64);
  EXPECT_LT((bg_denoise(u, ch, prior).xhat - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(BgDenoise, OddSymmetryAndShrinkage) {
  CounterRng rng(5);
  for (int k = 0; k < 50; ++k) {
    const Index b = 1 + k % 3;
    const BgPrior prior{0.05 + 0.9 * rng.uniform(), random_spd(rng, b, 1.0)};
    const EffectiveChannel ch{random_spd(rng, b, 0.3)};
    const Vector u = random_vector(rng, b, 2.0);
    const BgDenoiser den(prior, ch.sigma_v);
    const Vector a = den.estimate(u), c = den.estimate(-u);
    EXPECT_EQ(a, -c);
    EXPECT_LE(a.norm(), (den.wiener() * u).norm() + 1e-12);
  }
}

TEST(BgDenoise, NonFiniteInputRejected) {
  const BgPrior prior{0.1, Matrix::Identity(1, 1)};
  Vector u(1);
  u << std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(bg_denoise(u, {Matrix::Identity(1, 1)}, prior), NumericError);
}

TEST(BgDenoise, TinyEffectiveNoiseStaysFinite) {
  const BgPrior prior{0.1, Matrix::Identity(2, 2)};
  const EffectiveChannel ch{1e-14 * Matrix::Identity(2, 2)};
  const Vector u = (Vector(2) << 0.3, 0.2).finished();
  const auto r = bg_denoise(u, ch, prior);
  EXPECT_TRUE(r.xhat.allFinite());
  EXPECT_NEAR(r.ratio, 1.0, 1e-12);
}

TEST(BgJacobian, ZeroInputAndDensePrior) {
  Matrix sx(2, 2);
  sx << 2.0, 0.5, 0.5, 1.0;
  const Matrix sv = 0.3 * Matrix::Identity(2, 2);
  const BgPrior sparse{0.2, sx};
  const BgDenoiser den(sparse, sv);
  const Matrix j0 = bg_jacobian(Vector::Zero(2), {sv}, sparse);
  EXPECT_LT(max_abs(j0 - den.ratio(Vector::Zero(2)) * den.wiener()), 1e-15);

  const BgPrior dense{1.0, sx};
  const Matrix w = (sx + sv).llt().solve(sx).transpose();
  const Vector u = (Vector(2) << 1.5, -3.0).finished();
  EXPECT_LT(max_abs(bg_jacobian(u, {sv}, dense) - w), 1e-14);
}

TEST(BgJacobian, FiniteDifferences) {
  CounterRng rng(17);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const Index b = 1 + k % 3;
    const BgPrior prior{0.05 + 0.9 * rng.uniform(), random_spd(rng, b, 1.0)};
    const EffectiveChannel ch{random_spd(rng, b, 0.3)};
    const Vector u = random_vector(rng, b, 1.5);
    const Matrix j = bg_jacobian(u, ch, prior);
    const double h = 1e-6;
    for (Index c = 0; c < b; ++c) {
      Vector up = u, dn = u;
      up(c) += h;
      dn(c) -= h;
      const Vector d = (bg_denoise(up, ch, prior).xhat - bg_denoise(dn, ch, prior).xhat) / (2 * h);
      worst = std::max(worst, (d - j.col(c)).cwiseAbs().maxCoeff());
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(ConditionalCovariance, LemmaIdentity) {
  CounterRng rng(23);
  for (int k = 0; k < 200; ++k) {
    const Index b = 1 + k % 3;
    const BgPrior prior{0.05 + 0.9 * rng.uniform(), random_spd(rng, b, 1.0)};
    const EffectiveChannel ch{random_spd(rng, b, 0.3)};
    const Vector u = random_vector(rng, b, 1.5);
    const Matrix lhs = bg_jacobian(u, ch, prior) * ch.sigma_v;
    const Matrix cov = conditional_covariance(u, ch, prior);
    EXPECT_LT(max_abs(lhs - cov), 1e-9);
    EXPECT_TRUE(is_symmetric(cov, 1e-12));
    EXPECT_GE(sym_eigenvalues(cov).minCoeff(), -1e-12);
  }
}

TEST(ConditionalCovariance, DensePriorIsGaussianPosterior) {
  Matrix sx(2, 2);
  sx << 1.0, 0.3, 0.3, 2.0;
  const Matrix sv = 0.5 * Matrix::Identity(2, 2);
  const Matrix expect = sx - sx * (sx + sv).inverse() * sx;
  const Matrix got = conditional_covariance((Vector(2) << 4.0, -1.0).finished(), {sv}, {1.0, sx});
  EXPECT_LT(max_abs(got - expect), 1e-14);
}

TEST(DenoiseRows, MatchesPerRowEvaluation) {
  CounterRng rng(41);
  const Index b = 3, n = 25;
  const BgPrior prior{0.3, random_spd(rng, b, 1.0)};
  const Matrix sv = random_spd(rng, b, 0.2);
  Matrix u(n, b);
  for (Index i = 0; i < n; ++i) u.row(i) = random_vector(rng, b, 1.0).transpose();
  const BgDenoiser den(prior, sv);
  Matrix xhat, jsum;
  Vector ratios;
  den.denoise_rows(u, xhat, &jsum, &ratios);
  Matrix jref = Matrix::Zero(b, b);
  for (Index i = 0; i < n; ++i) {
    const auto r = den.evaluate(u.row(i).transpose());
    EXPECT_LT((xhat.row(i).transpose() - r.xhat).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_NEAR(ratios(i), r.ratio, 1e-14);
    jref += r.jacobian;
  }
  EXPECT_LT(max_abs(jsum - jref), 1e-11);
}

TEST(MmseOracle, DenseAndZeroCases) {
  Matrix sx(2, 2);
  sx << 1.0, 0.4, 0.4, 0.5;
  const Matrix sv = 0.2 * Matrix::Identity(2, 2);
  const Vector u = (Vector(2) << 0.7, -1.2).finished();
  const Vector wiener = sx * (sx + sv).inverse() * u;
  EXPECT_LT((mmse_oracle(u, {sv}, {1.0, sx}, 32) - wiener).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(mmse_oracle(Vector::Zero(2), {sv}, {0.2, sx}, 32).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(mmse_oracle(Vector::Zero(5), {Matrix::Identity(5, 5)}, {0.2, Matrix::Identity(5, 5)}, 4),
               UnsupportedError);
}

TEST(MmseOracle, NodeCountSelfConsistency) {
  const BgPrior prior{0.3, Matrix::Identity(2, 2)};
  const EffectiveChannel ch{0.5 * Matrix::Identity(2, 2)};
  const Vector u = (Vector(2) << 0.8, 1.1).finished();
  EXPECT_LT((mmse_oracle(u, ch, prior, 64) - mmse_oracle(u, ch, prior, 96)).cwiseAbs().maxCoeff(), 1e-10);
}
