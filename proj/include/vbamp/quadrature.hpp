#pragma once

#include "types.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace vbamp::quad {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

/// Gauss-Hermite rule for the standard normal measure (weights sum to 1).
/// Golub-Welsch for starting values, Newton polish on the orthonormal
/// Hermite recurrence, weights 1 / sum_k p_k(x)^2.
inline Rule gauss_hermite(int n) {
  if (n < 1) throw DomainError("gauss_hermite: n < 1");
  Matrix j = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(double(k));
  Eigen::SelfAdjointEigenSolver<Matrix> es(j, Eigen::EigenvaluesOnly);
  Rule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()(i);
    for (int it = 0; it < 100 && n > 1; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 1; k < n; ++k) {
        const double p2 = (x * p1 - std::sqrt(double(k)) * p0) / std::sqrt(double(k + 1));
        p0 = p1;
        p1 = p2;
      }
      // p1 = p_n, p0 = p_{n-1}, p_n' = sqrt(n) p_{n-1}
      const double dx = p1 / (std::sqrt(double(n)) * p0);
      x -= dx;
      if (std::abs(dx) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    // recompute the weight at the polished node
    double p0 = 1.0, p1 = x, sum = 1.0;
    for (int k = 1; k < n; ++k) {
      sum += p1 * p1;
      const double p2 = (x * p1 - std::sqrt(double(k)) * p0) / std::sqrt(double(k + 1));
      p0 = p1;
      p1 = p2;
    }
    r.nodes[i] = x;
    r.weights[i] = 1.0 / sum;
  }
  // exact antisymmetry of nodes
  for (int i = 0; i < n / 2; ++i) {
    const double x = 0.5 * (r.nodes[n - 1 - i] - r.nodes[i]);
    const double w = 0.5 * (r.weights[n - 1 - i] + r.weights[i]);
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = r.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.nodes[n / 2] = 0.0;
  return r;
}

/// Gauss-Legendre rule on [-1, 1].
inline Rule gauss_legendre(int n) {
  if (n < 1) throw DomainError("gauss_legendre: n < 1");
  Rule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.nodes[i] = x;
    r.nodes[n - 1 - i] = -x;
    r.weights[i] = r.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.nodes[n / 2] = 0.0;
  return r;
}

/// Calls fn(point, weight) for every node of the d-fold tensor product of `r`.
template <class Fn>
void for_each_tensor_node(const Rule& r, int d, Fn&& fn) {
  const int n = static_cast<int>(r.size());
  std::vector<int> idx(d, 0);
  Vector point(d);
  while (true) {
    double w = 1.0;
    for (int k = 0; k < d; ++k) {
      point(k) = r.nodes[idx[k]];
      w *= r.weights[idx[k]];
    }
    fn(static_cast<const Vector&>(point), w);
    int k = 0;
    while (k < d && ++idx[k] == n) idx[k++] = 0;
    if (k == d) break;
  }
}

}  // namespace vbamp::quad
