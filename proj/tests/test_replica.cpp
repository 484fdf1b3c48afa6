#include "vbamp/replica.hpp"
#include "vbamp/state_evolution.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace vbamp;

namespace {

double db(double v) { return 10 * std::log10(v); }

/// Isotropic free energy along E 1 written directly in terms of s = |h|^2:
///   (1-eps) E log((1-eps) + c e^{a1 s}) + eps E log((1-eps) + c e^{a2 s})
///   - B R/2 (log(2 pi (E + R s2)) + (eps + R s2)/(E + R s2))
/// with c = eps (1+g)^{-B/2}, a1 = g/(2(1+g)), a2 = g/2, s ~ chi2_B.
double scalar_free_energy(double e, double eps, double rate, double s2, int b) {
  const double g = rate / (e + rate * s2);
  const double c = eps * std::pow(1.0 + g, -0.5 * b);
  boost::math::chi_squared chi(b);
  auto part = [&](double a) {
    auto f = [&](double s) {
      const double t = std::log(c) + a * s;
      const double l = std::log(1.0 - eps);
      const double lse = t > l ? t + std::log1p(std::exp(l - t)) : l + std::log1p(std::exp(t - l));
      return lse * boost::math::pdf(chi, s);
    };
    // split where the two terms cross
    const double cross = std::max((std::log(1.0 - eps) - std::log(c)) / a, 1.0);
    boost::math::quadrature::tanh_sinh<double> ts;
    boost::math::quadrature::exp_sinh<double> es;
    return ts.integrate(f, 0.0, cross, 1e-15) + es.integrate([&](double x) { return f(cross + x); }, 1e-15);
  };
  const double first = (1.0 - eps) * part(g / (2.0 * (1.0 + g))) + eps * part(0.5 * g);
  const double d = e + rate * s2;
  return first - 0.5 * b * rate * (std::log(2.0 * std::numbers::pi * d) + (eps + rate * s2) / d);
}

FreeEnergySpec spec1(double rate) {
  return FreeEnergySpec{rate, 0.1, Vector::Constant(1, std::pow(10.0, -3.5)), {}};
}

}  // namespace

TEST(Gamma, Examples) {
  FreeEnergySpec s{0.25, 0.1, Vector::Zero(1), {}};
  EXPECT_DOUBLE_EQ(gamma(Vector::Constant(1, 0.25), s)(0), 1.0);
  s.sigma_w2(0) = std::pow(10.0, -3.5);
  EXPECT_NEAR(gamma(Vector::Zero(1), s)(0), 3162.2776601683795, 1e-9);
  FreeEnergySpec v{0.5, 0.1, (Vector(2) << 0.0, 1.0).finished(), {}};
  const Vector g = gamma((Vector(2) << 0.5, 0.5).finished(), v);
  EXPECT_DOUBLE_EQ(g(0), 1.0);
  EXPECT_DOUBLE_EQ(g(1), 0.5);
  s.sigma_w2(0) = 0;
  EXPECT_THROW(gamma(Vector::Zero(1), s), DomainError);
}

TEST(Zeta, ClosedFormLimits) {
  const Vector eta = (Vector(2) << 0.7, 1.3).finished(), g = (Vector(2) << 2.0, 5.0).finished();
  EXPECT_DOUBLE_EQ(zeta(eta, g, 0.0), -1.0);
  EXPECT_NEAR(zeta(eta, g, 1.0), -0.5 * (std::log(3.0) + std::log(6.0)), 1e-15);
}

TEST(Zeta, RadialRuleSelfConsistency) {
  const Vector one = Vector::Ones(1);
  ZetaQuadrature a, b;
  a.radial_nodes = 64;
  b.radial_nodes = 96;
  EXPECT_NEAR(zeta(one, one, 0.5, a), zeta(one, one, 0.5, b), 1e-10);
}

TEST(Zeta, AnisotropicMatchesTensorHermite) {
  // moderate curvature keeps the integrand smooth enough for a tensor rule
  const Vector eta = (Vector(2) << 0.4, 1.1).finished(), g = (Vector(2) << 0.5, 1.0).finished();
  const double eps = 0.3;
  const double logc = std::log(eps) - 0.5 * g.array().log1p().sum();
  const quad::Rule r = quad::gauss_hermite(80);
  double ref = 0;
  quad::for_each_tensor_node(r, 2, [&](const Vector& h, double w) {
    const double t = -0.5 * (eta.array() * h.array().square()).sum();
    const double a = std::max(logc, std::log1p(-eps) + t);
    ref += w * (a + std::log(std::exp(logc - a) + std::exp(std::log1p(-eps) + t - a)));
  });
  ZetaQuadrature q;
  q.angular_nodes = 64;
  EXPECT_NEAR(zeta(eta, g, eps, q), ref, 1e-9);
}

TEST(FreeEnergy, ScalarMatchesIndependentOracle) {
  const double s2 = std::pow(10.0, -3.5);
  for (double rate : {0.15, 0.2, 0.25}) {
    const auto spec = spec1(rate);
    for (double edb : {-60.0, -40.0, -25.0, -15.0, -11.0}) {
      const double e = std::pow(10.0, edb / 10);
      const double f = free_energy(Vector::Constant(1, e), spec);
      EXPECT_NEAR(f, scalar_free_energy(e, 0.1, rate, s2, 1), 1e-12 * std::max(1.0, std::abs(f)))
          << "R=" << rate << " E=" << edb << " dB";
    }
  }
}

TEST(FreeEnergy, IsotropicMatchesIndependentOracle) {
  const double s2 = std::pow(10.0, -3.5), rate = 0.25;
  for (int b : {2, 3, 10}) {
    FreeEnergySpec spec{rate, 0.1, Vector::Constant(b, s2), {}};
    for (double edb : {-45.0, -30.0, -15.0}) {
      const double e = std::pow(10.0, edb / 10);
      const double f = free_energy(Vector::Constant(b, e), spec);
      EXPECT_NEAR(f, scalar_free_energy(e, 0.1, rate, s2, b), 1e-12 * std::max(1.0, std::abs(f)))
          << "B=" << b << " E=" << edb << " dB";
    }
  }
}

TEST(FreeEnergy, ChannelPermutationSymmetry) {
  FreeEnergySpec a{0.3, 0.1, (Vector(2) << 1e-4, 3e-3).finished(), {}};
  FreeEnergySpec b{0.3, 0.1, (Vector(2) << 3e-3, 1e-4).finished(), {}};
  const Vector e = (Vector(2) << 2e-3, 5e-2).finished();
  const Vector f = (Vector(2) << 5e-2, 2e-3).finished();
  EXPECT_NEAR(free_energy(e, a), free_energy(f, b), 1e-12);
  FreeEnergySpec c{0.3, 0.1, (Vector(3) << 1e-4, 3e-3, 1e-2).finished(), {}};
  FreeEnergySpec d{0.3, 0.1, (Vector(3) << 1e-2, 3e-3, 1e-4).finished(), {}};
  const Vector x = (Vector(3) << 1e-3, 2e-2, 7e-2).finished();
  const Vector y = (Vector(3) << 7e-2, 2e-2, 1e-3).finished();
  // The B = 3 angular rule is not permutation invariant; its error at the
  // default resolution is ~1e-9 on this strongly anisotropic setting.
  EXPECT_NEAR(free_energy(x, c), free_energy(y, d), 1e-8);
  c.quad.angular_nodes = d.quad.angular_nodes = 64;
  EXPECT_NEAR(free_energy(x, c), free_energy(y, d), 1e-12);
}

TEST(FreeEnergy, DegradedChannelDecouples) {
  FreeEnergySpec spec{0.25, 0.1, (Vector(2) << 1e12, std::pow(10.0, -3.5)).finished(), {}};
  for (double l1 : {-6.0, -3.0, -1.0})
    for (double l2 : {-6.0, -3.0, -1.5}) {
      const double e1 = std::pow(10.0, l1), e2 = std::pow(10.0, l2), h = 1e-3;
      auto f = [&](double a, double b) { return free_energy((Vector(2) << a, b).finished(), spec); };
      const double d1 = (f(e1 * (1 + h), e2) - f(e1 * (1 - h), e2)) / (2 * h * e1);
      EXPECT_LT(std::abs(d1), 1e-9) << l1 << "," << l2;
    }
}

TEST(FreeEnergy, OutsideBoxRejected) {
  const auto spec = spec1(0.25);
  EXPECT_THROW(free_energy(Vector::Constant(1, 0.0), spec), DomainError);
  EXPECT_THROW(free_energy(Vector::Constant(1, 1.0), spec), DomainError);
  FreeEnergySpec bad = spec;
  bad.epsilon = 1.0;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(StationaryPoints, LowRateSingleMaximum) {
  const auto pts = stationary_points(spec1(0.15), FreeEnergyGrid{});
  int maxima = 0;
  for (const auto& p : pts)
    if (p.kind == FreeEnergyPoint::Kind::LocalMax) {
      ++maxima;
      EXPECT_NEAR(db(p.e(0)), -12.0, 1.0);
    }
  EXPECT_EQ(maxima, 1);
}

TEST(StationaryPoints, GapRegionTwoMaximaOneMinimum) {
  const auto pts = stationary_points(spec1(0.20), FreeEnergyGrid{});
  int maxima = 0, minima = 0;
  for (const auto& p : pts) {
    maxima += p.kind == FreeEnergyPoint::Kind::LocalMax;
    minima += p.kind == FreeEnergyPoint::Kind::LocalMin;
  }
  EXPECT_EQ(maxima, 2);
  EXPECT_EQ(minima, 1);
  const auto pred = predict_performance(pts);
  EXPECT_TRUE(pred.gap);
  EXPECT_LT(pred.mmse(0), pred.bamp_mse(0));
}

TEST(StationaryPoints, HighRateNoGap) {
  const auto pred = predict_performance(spec1(0.25), FreeEnergyGrid{});
  EXPECT_FALSE(pred.gap);
  EXPECT_LT(db(pred.mmse(0)), -35.0);
  int maxima = 0;
  for (const auto& p : pred.points) maxima += p.kind == FreeEnergyPoint::Kind::LocalMax;
  EXPECT_EQ(maxima, 1);
}

TEST(StationaryPoints, GradientMatchesStateEvolutionDirection) {
  // B = 2: the SE step moves each MSE component along the sign of dF/dE
  const double rate = 0.25;
  const Vector s2 = (Vector(2) << std::pow(10.0, -4.5), std::pow(10.0, -2.5)).finished();
  FreeEnergySpec spec{rate, 0.1, s2, {}};
  const BgPrior prior{0.1, Matrix::Identity(2, 2)};
  const NoiseModel noise{s2.asDiagonal()};
  CounterRng rng(4);
  int agree = 0, total = 0;
  for (int k = 0; k < 20; ++k) {
    Vector e(2);
    for (Index b = 0; b < 2; ++b)
      e(b) = std::pow(10.0, -5.0 + 3.5 * rng.uniform()) * spec.upper(b);
    const Matrix sv = noise.sigma_w + Matrix(e.asDiagonal()) / rate;
    const Matrix next = se_step(sv, prior, noise, rate, Mode::MMV, IntegratorSpec::quadrature());
    const Vector de = rate * (next - sv).diagonal();
    for (Index b = 0; b < 2; ++b) {
      const double h = 1e-4;
      Vector lo = e, hi = e;
      lo(b) *= 1 - h;
      hi(b) *= 1 + h;
      const double g = free_energy(hi, spec) - free_energy(lo, spec);
      ++total;
      agree += (g > 0) == (de(b) > 0);
    }
  }
  EXPECT_EQ(agree, total);
}
