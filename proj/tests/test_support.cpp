#include "vbamp/csv.hpp"
#include "vbamp/linalg.hpp"
#include "vbamp/quadrature.hpp"
#include "vbamp/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace vbamp;

TEST(Quadrature, HermiteMomentsMatchStandardNormal) {
  for (int n : {1, 8, 24, 96}) {
    const quad::Rule r = quad::gauss_hermite(n);
    double m0 = 0, m2 = 0, m4 = 0, m1 = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double x = r.nodes[i], w = r.weights[i];
      m0 += w;
      m1 += w * x;
      m2 += w * x * x;
      m4 += w * x * x * x * x;
    }
    EXPECT_NEAR(m0, 1.0, 1e-13) << n;
    EXPECT_NEAR(m1, 0.0, 1e-13) << n;
    if (n >= 2) {
      EXPECT_NEAR(m2, 1.0, 1e-12) << n;
    }
    if (n >= 3) {
      EXPECT_NEAR(m4, 3.0, 1e-11) << n;
    }
  }
}

TEST(Quadrature, HermiteIntegratesCosine) {
  // E cos(h) = exp(-1/2)
  const quad::Rule r = quad::gauss_hermite(40);
  double s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r.weights[i] * std::cos(r.nodes[i]);
  EXPECT_NEAR(s, std::exp(-0.5), 1e-14);
}

TEST(Quadrature, LegendreExactForPolynomials) {
  const quad::Rule r = quad::gauss_legendre(6);
  double s0 = 0, s10 = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    s0 += r.weights[i];
    s10 += r.weights[i] * std::pow(r.nodes[i], 10);
  }
  EXPECT_NEAR(s0, 2.0, 1e-14);
  EXPECT_NEAR(s10, 2.0 / 11.0, 1e-14);
}

TEST(Quadrature, TensorNodesCoverProduct) {
  const quad::Rule r = quad::gauss_hermite(5);
  int count = 0;
  double total = 0, cross = 0;
  quad::for_each_tensor_node(r, 3, [&](const Vector& p, double w) {
    ++count;
    total += w;
    cross += w * p(0) * p(0) * p(2) * p(2);
  });
  EXPECT_EQ(count, 125);
  EXPECT_NEAR(total, 1.0, 1e-13);
  EXPECT_NEAR(cross, 1.0, 1e-12);
}

TEST(Rng, DeterministicPerSeedAndStream) {
  CounterRng a(42, 7), b(42, 7), c(42, 8);
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b();
    EXPECT_EQ(x, y);
    (void)c;
  }
  EXPECT_NE(CounterRng(42, 7)(), CounterRng(42, 8)());
}

TEST(Rng, NormalMomentsAndBoundedDraws) {
  CounterRng r(1);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.below(7), 7u);
    const double u = r.uniform();
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
}

TEST(Linalg, PsdClampRemovesNegativeEigenvalues) {
  Matrix m(2, 2);
  m << 1, 2, 2, 1;  // eigenvalues 3, -1
  const Matrix c = psd_clamp(m);
  EXPECT_GE(sym_eigenvalues(c).minCoeff(), -1e-14);
  EXPECT_NEAR(sym_eigenvalues(c).maxCoeff(), 3.0, 1e-12);
}

TEST(Linalg, PsdFactorReproducesMatrix) {
  Matrix m(3, 3);
  m << 4, 3, 2, 3, 4, 3, 2, 3, 4;
  const Matrix l = psd_factor(m);
  EXPECT_LT(max_abs(l * l.transpose() - m), 1e-12);
}

TEST(Linalg, JitterOnlyTouchesNearSingular) {
  Matrix m = Matrix::Identity(2, 2);
  EXPECT_EQ(apply_jitter(m), m);
  Matrix s(2, 2);
  s << 1, 1, 1, 1;
  EXPECT_GT(sym_eigenvalues(apply_jitter(s)).minCoeff(), 0.0);
}

TEST(Csv, FormatsSeventeenDigitsAndSentinels) {
  EXPECT_EQ(csv::fmt(0.1), "0.10000000000000001");
  EXPECT_EQ(csv::fmt(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(csv::fmt_db(-std::numeric_limits<double>::infinity()), "-999");
  std::ostringstream os;
  csv::write_row(os, {"a,b", "say \"hi\"", "3"});
  EXPECT_EQ(os.str(), "\"a,b\",\"say \"\"hi\"\"\",3\n");
}

TEST(Csv, MatrixRoundTripIsExact) {
  Matrix m(2, 3);
  m << 1.0 / 3.0, -2e-300, 5, std::sqrt(2.0), 0, -1e10;
  std::stringstream ss;
  ss << "# comment\n"
     << "c1,c2,c3\n";
  csv::write_matrix(ss, m);
  const Matrix r = csv::read_matrix(ss);
  ASSERT_EQ(r.rows(), 2);
  ASSERT_EQ(r.cols(), 3);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(r(i, j), m(i, j));
}
