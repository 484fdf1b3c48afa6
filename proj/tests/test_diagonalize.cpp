#include "vbamp/diagonalize.hpp"
#include "vbamp/state_evolution.hpp"
#include "vbamp/vbamp.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vbamp;

namespace {

Matrix random_spd(CounterRng& rng, Index b) {
  Matrix g(b, b);
  for (Index i = 0; i < b; ++i)
    for (Index j = 0; j < b; ++j) g(i, j) = rng.normal();
  return g * g.transpose() + 0.1 * Matrix::Identity(b, b);
}

double offdiag_max(const Matrix& m) {
  Matrix o = m;
  o.diagonal().setZero();
  return max_abs(o);
}

}  // namespace

TEST(JointDiagonalizer, IdentityPair) {
  const auto d = joint_diagonalizer(Matrix::Identity(3, 3), Matrix::Identity(3, 3), 0.2);
  EXPECT_LT(max_abs(d.lambda - Vector::Ones(3)), 1e-14);
  EXPECT_LT(max_abs(d.t * d.t.transpose() - Matrix::Identity(3, 3)), 1e-14);
}

TEST(JointDiagonalizer, CommutingDiagonalCase) {
  Matrix sx = Matrix::Zero(2, 2);
  sx.diagonal() << 4, 1;
  const auto d = joint_diagonalizer(sx, Matrix::Identity(2, 2), 0.1);
  EXPECT_NEAR(d.lambda(0), 4, 1e-14);
  EXPECT_NEAR(d.lambda(1), 1, 1e-14);
  EXPECT_NEAR(d.snr(0), 0.4, 1e-14);
  EXPECT_NEAR(d.snr(1), 0.1, 1e-14);
  Matrix t = Matrix::Zero(2, 2);
  t.diagonal() << 0.5, 1.0;
  EXPECT_LT(max_abs(d.t - t), 1e-14);
}

TEST(JointDiagonalizer, CongruencesHoldOnRandomPairs) {
  CounterRng rng(3);
  for (int k = 0; k < 200; ++k) {
    const Matrix sx = random_spd(rng, 3), sw = random_spd(rng, 3);
    const auto d = joint_diagonalizer(sx, sw, 0.1);
    const Matrix tx = d.t * sx * d.t.transpose(), tw = d.t * sw * d.t.transpose();
    EXPECT_LT(max_abs(tx - Matrix::Identity(3, 3)), 1e-10);
    EXPECT_LT(offdiag_max(tw), 1e-10);
    EXPECT_LT(max_abs(tw.diagonal() - d.lambda.cwiseInverse()), 1e-10 * d.lambda.cwiseInverse().maxCoeff());
    EXPECT_GE(d.lambda(0), d.lambda(1));
    EXPECT_GE(d.lambda(1), d.lambda(2));
  }
}

TEST(JointDiagonalizer, CommutingClosedForm) {
  // shared eigenvectors: transformed noise is diag(lw/lx) in SNR order
  Matrix q = Eigen::HouseholderQR<Matrix>(generate_matrix(3, 3, MatrixKind::Gaussian, 4)).householderQ();
  const Vector lx = (Vector(3) << 3.0, 1.0, 2.0).finished();
  const Vector lw = (Vector(3) << 0.5, 0.2, 0.1).finished();
  const Matrix sx = q * lx.asDiagonal() * q.transpose(), sw = q * lw.asDiagonal() * q.transpose();
  const auto d = joint_diagonalizer(sx, sw, 0.1);
  std::vector<double> ratio{0.5 / 3.0, 0.2 / 1.0, 0.1 / 2.0};
  std::sort(ratio.begin(), ratio.end());
  for (Index b = 0; b < 3; ++b) EXPECT_NEAR(1.0 / d.lambda(b), ratio[std::size_t(b)], 1e-12);
}

TEST(JointDiagonalizer, ReproducibleSigns) {
  CounterRng rng(8);
  const Matrix sx = random_spd(rng, 3), sw = random_spd(rng, 3);
  const auto a = joint_diagonalizer(sx, sw, 0.1), b = joint_diagonalizer(sx, sw, 0.1);
  EXPECT_EQ(a.t, b.t);
}

TEST(JointDiagonalizer, RejectsSingularInputs) {
  Matrix sing(2, 2);
  sing << 1, 1, 1, 1;
  try {
    joint_diagonalizer(sing, Matrix::Identity(2, 2), 0.1);
    FAIL();
  } catch (const SingularCovarianceError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma_x"), std::string::npos);
  }
  try {
    joint_diagonalizer(Matrix::Identity(2, 2), sing, 0.1);
    FAIL();
  } catch (const SingularCovarianceError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma_w"), std::string::npos);
  }
}

TEST(JointDiagonalizer, NearlyRankOneCoupling) {
  // two fully correlated channels: one SNR collapses
  Matrix sx(2, 2);
  sx << 1.0, 1.0, 1.0, 1.0;
  sx(1, 1) += 1e-10;
  const auto d = joint_diagonalizer(sx, Matrix::Identity(2, 2), 0.1);
  EXPECT_LT(d.snr(1), 1e-10 * d.snr(0));
}

TEST(TransformProblem, IdentityTransformIsNoOp) {
  const Index n = 30, m = 15;
  auto ens = make_ensemble(Mode::MMV, m, n, 2, MatrixKind::Gaussian, 1);
  const Matrix x = sample_signal({0.2, Matrix::Identity(2, 2)}, n, 2).x;
  ProblemInstance p{ens, measure(x, ens, NoiseModel{0.01 * Matrix::Identity(2, 2)}, 3),
                    NoiseModel{0.01 * Matrix::Identity(2, 2)}};
  Diagonalizer d{Matrix::Identity(2, 2), Vector::Constant(2, 100.0), Vector::Constant(2, 20.0)};
  const auto [q, prior] = transform_problem(p, {0.2, Matrix::Identity(2, 2)}, d);
  EXPECT_EQ(q.y, p.y);
  EXPECT_LT(max_abs(q.noise.sigma_w - p.noise.sigma_w), 1e-15);
  EXPECT_EQ(prior.sigma_x, Matrix::Identity(2, 2));
}

TEST(TransformProblem, RecoverThenInvertMatchesDirectRun) {
  Matrix sx(2, 2);
  sx << 1.0, 0.7, 0.7, 2.0;
  Matrix sw(2, 2);
  sw << 2e-3, 5e-4, 5e-4, 1e-3;
  const BgPrior prior{0.1, sx};
  const Index n = 2000, m = 800;
  auto ens = make_ensemble(Mode::MMV, m, n, 2, MatrixKind::Gaussian, 5);
  const Matrix x = sample_signal(prior, n, 6).x;
  ProblemInstance p{ens, measure(x, ens, NoiseModel{sw}, 7), NoiseModel{sw}};
  RunOptions o;
  o.eps_tol = 1e-14;
  o.t_max = 500;
  const auto direct = vbamp_run(p, prior, o);
  const auto d = joint_diagonalizer(sx, sw, prior.epsilon);
  const auto [q, qp] = transform_problem(p, prior, d);
  const auto tr = vbamp_run(q, qp, o);
  ASSERT_TRUE(direct.trace.converged);
  ASSERT_TRUE(tr.trace.converged);
  const Matrix back = tr.xhat * d.inverse().transpose();
  EXPECT_LT((back - direct.xhat).norm() / direct.xhat.norm(), 1e-6);
}

TEST(TransformProblem, TransformedNoiseCovariance) {
  Matrix sx(2, 2), sw(2, 2);
  sx << 2.0, 0.5, 0.5, 1.0;
  sw << 1.0, 0.3, 0.3, 0.5;
  const Index m = 100000;
  auto ens = MeasurementEnsemble::shared(Matrix::Zero(m, 4), 2);
  ProblemInstance p{ens, measure(Matrix::Zero(4, 2), ens, NoiseModel{sw}, 9), NoiseModel{sw}};
  const auto d = joint_diagonalizer(sx, sw, 0.1);
  const auto [q, qp] = transform_problem(p, {0.1, sx}, d);
  const Matrix c = q.y.transpose() * q.y / double(m);
  const Matrix expect = d.lambda.cwiseInverse().asDiagonal();
  EXPECT_LT(max_abs(c - expect) / max_abs(expect), 0.03);
}

TEST(TransformProblem, DcsRestrictions) {
  auto ens = make_ensemble(Mode::DCS, 5, 10, 2, MatrixKind::Gaussian, 1);
  ProblemInstance p{ens, Matrix::Zero(5, 2), NoiseModel{Matrix::Identity(2, 2)}};
  Matrix sx(2, 2);
  sx << 1, 0.5, 0.5, 1;
  const auto d = joint_diagonalizer(sx, Matrix::Identity(2, 2), 0.1);
  EXPECT_THROW(transform_problem(p, {0.1, sx}, d), UnsupportedError);
  Matrix dx = Matrix::Zero(2, 2);
  dx.diagonal() << 4, 1;
  const auto dd = joint_diagonalizer(dx, Matrix::Identity(2, 2), 0.1);
  const auto [q, qp] = transform_problem(p, {0.1, dx}, dd);
  EXPECT_TRUE(is_diagonal(q.noise.sigma_w));
}

TEST(SnrBounds, IdentityAndContainment) {
  const auto s = snr_bounds(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.1);
  EXPECT_NEAR(s.lower, 0.1, 1e-15);
  EXPECT_NEAR(s.upper, 0.1, 1e-15);
  CounterRng rng(12);
  for (int k = 0; k < 1000; ++k) {
    const Matrix sx = random_spd(rng, 3), sw = random_spd(rng, 3);
    const auto b = snr_bounds(sx, sw, 0.1);
    const auto d = joint_diagonalizer(sx, sw, 0.1);
    for (Index i = 0; i < 3; ++i) {
      EXPECT_GE(d.snr(i), b.lower * (1 - 1e-12) - 1e-12);
      EXPECT_LE(d.snr(i), b.upper * (1 + 1e-12) + 1e-12);
    }
  }
}

TEST(SnrBounds, SingularNoiseGivesInfiniteUpper) {
  Matrix sw = Matrix::Zero(2, 2);
  sw(0, 0) = 1.0;
  const auto s = snr_bounds(Matrix::Identity(2, 2), sw, 0.1);
  EXPECT_TRUE(s.upper_infinite);
  EXPECT_TRUE(std::isinf(s.upper));
}

TEST(StateEvolution, EquivariantUnderJointTransform) {
  Matrix sx(2, 2), sw(2, 2);
  sx << 1.0, 0.5, 0.5, 1.5;
  sw << 1e-2, 2e-3, 2e-3, 5e-3;
  const BgPrior prior{0.1, sx};
  const double rate = 0.3;
  const Matrix sv = se_initial(prior, NoiseModel{sw}, rate, Mode::MMV);
  const auto d = joint_diagonalizer(sx, sw, prior.epsilon);
  const Matrix& t = d.t;
  const auto integ = IntegratorSpec::quadrature(32, 128);
  const Matrix direct = se_step(sv, prior, NoiseModel{sw}, rate, Mode::MMV, integ);
  const Matrix trans = se_step(symmetrize(t * sv * t.transpose()), {0.1, Matrix::Identity(2, 2)},
                               NoiseModel{symmetrize(t * sw * t.transpose())}, rate, Mode::MMV, integ);
  const Matrix expect = t * direct * t.transpose();
  EXPECT_LT(max_abs(trans - expect) / max_abs(expect), 1e-6);
}
