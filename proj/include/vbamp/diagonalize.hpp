#pragma once

#include "csv.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <utility>

namespace vbamp {

/// Congruence T with T sigma_x T^T = I and T sigma_w T^T = diag(1/lambda).
struct Diagonalizer {
  Matrix t;
  Vector lambda;  // descending
  Vector snr;     // epsilon * lambda

  Matrix inverse() const { return t.inverse(); }

  void write_csv(std::ostream& os) const {
    const Index b = t.rows();
    std::vector<std::string> head;
    for (Index j = 0; j < b; ++j) head.push_back("t_" + std::to_string(j + 1));
    head.push_back("lambda");
    head.push_back("snr_dB");
    csv::write_row(os, head);
    for (Index i = 0; i < b; ++i) {
      std::vector<std::string> row;
      for (Index j = 0; j < b; ++j) row.push_back(csv::fmt(t(i, j)));
      row.push_back(csv::fmt(lambda(i)));
      row.push_back(csv::fmt_db(snr(i) > 0 ? 10 * std::log10(snr(i))
                                           : -std::numeric_limits<double>::infinity()));
      csv::write_row(os, row);
    }
  }
};

namespace detail {
inline void require_full_rank(const Matrix& m, const char* name) {
  if (m.rows() < 1 || m.rows() != m.cols()) throw DimensionError(std::string(name) + " not square");
  const double floor = 1e-12 * m.trace() / double(m.rows());
  if (!(m.trace() > 0) || sym_eigenvalues(m).minCoeff() <= floor)
    throw SingularCovarianceError(name);
}
}  // namespace detail

inline Diagonalizer joint_diagonalizer(const Matrix& sigma_x, const Matrix& sigma_w, double epsilon) {
  if (sigma_x.rows() != sigma_w.rows()) throw DimensionError("covariance sizes differ");
  detail::require_full_rank(sigma_x, "sigma_x");
  detail::require_full_rank(sigma_w, "sigma_w");
  const Index b = sigma_x.rows();
  Eigen::LLT<Matrix> llt(symmetrize(sigma_w));
  const Matrix p = llt.matrixL();
  const Matrix pinv = p.triangularView<Eigen::Lower>().solve(Matrix::Identity(b, b));
  const Matrix g = symmetrize(pinv * symmetrize(sigma_x) * pinv.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  std::vector<Index> order(static_cast<std::size_t>(b));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index c) {
    return es.eigenvalues()(a) > es.eigenvalues()(c);
  });
  Matrix q(b, b);
  Vector lam(b);
  for (Index k = 0; k < b; ++k) {
    lam(k) = es.eigenvalues()(order[k]);
    q.col(k) = es.eigenvectors().col(order[k]);
    Index arg = 0;
    for (Index i = 1; i < b; ++i)
      if (std::abs(q(i, k)) > std::abs(q(arg, k))) arg = i;
    if (q(arg, k) < 0) q.col(k) = -q.col(k);
  }
  Diagonalizer d;
  d.lambda = lam;
  d.t = lam.cwiseSqrt().cwiseInverse().asDiagonal() * q.transpose() * pinv;
  d.snr = epsilon * lam;
  return d;
}

/// Applies T to every measurement row. The transformed prior has identity
/// covariance and the noise becomes diag(1/lambda).
inline std::pair<ProblemInstance, BgPrior> transform_problem(const ProblemInstance& p,
                                                             const BgPrior& prior,
                                                             const Diagonalizer& d) {
  if (p.mode() == Mode::DCS) {
    if (!is_diagonal(prior.sigma_x)) throw UnsupportedError("DCS with non-diagonal sigma_x");
    // Mixing channels measured by different matrices would break the model;
    // only a per-channel scaling keeps it intact.
    if (!is_diagonal(p.noise.sigma_w))
      throw UnsupportedError("DCS with non-diagonal sigma_w");
  }
  const Index b = p.channels();
  ProblemInstance out = p;
  out.y = p.y * d.t.transpose();
  out.noise.sigma_w = d.lambda.cwiseInverse().asDiagonal();
  BgPrior pr{prior.epsilon, Matrix::Identity(b, b)};
  return {std::move(out), std::move(pr)};
}

struct SnrBounds {
  double lower = 0;
  double upper = 0;
  bool upper_infinite = false;
};

inline SnrBounds snr_bounds(const Matrix& sigma_x, const Matrix& sigma_w, double epsilon) {
  if (sigma_x.rows() != sigma_w.rows()) throw DimensionError("covariance sizes differ");
  detail::require_full_rank(sigma_x, "sigma_x");
  const Vector ex = sym_eigenvalues(sigma_x);
  const Vector ew = sym_eigenvalues(sigma_w);
  SnrBounds s;
  s.lower = epsilon * ex.minCoeff() / ew.maxCoeff();
  const double floor = 1e-12 * std::max(sigma_w.trace(), 0.0) / double(sigma_w.rows());
  if (ew.minCoeff() <= floor) {
    s.upper = std::numeric_limits<double>::infinity();
    s.upper_infinite = true;
  } else {
    s.upper = epsilon * ex.maxCoeff() / ew.minCoeff();
  }
  return s;
}

}  // namespace vbamp
