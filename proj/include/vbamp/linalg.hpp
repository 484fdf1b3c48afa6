#pragma once

#include "types.hpp"

#include <cmath>
#include <limits>

namespace vbamp {

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline Matrix diagonal_part(const Matrix& m) {
  return m.diagonal().asDiagonal();
}

inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(max_abs(m), std::numeric_limits<double>::min());
  return max_abs(m - m.transpose()) <= rel_tol * scale;
}

inline bool is_diagonal(const Matrix& m, double tol = 0.0) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i)
      if (i != j && std::abs(m(i, j)) > tol) return false;
  return true;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Vector sym_eigenvalues(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Symmetric part with negative eigenvalues set to zero.
inline Matrix psd_clamp(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() *
                    es.eigenvectors().transpose());
}

/// Square root factor L with L Lᵀ = m for a PSD matrix (eigen-based, clamped).
inline Matrix psd_factor(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal();
}

/// Adds a diagonal floor when the smallest eigenvalue is below
/// 1e-12 * trace / B, so that inverses exist. A zero matrix becomes 1e-300 I.
inline Matrix apply_jitter(const Matrix& m) {
  const Index b = m.rows();
  Matrix s = symmetrize(m);
  const double floor =
      std::max(1e-12 * s.trace() / static_cast<double>(b), 1e-300);
  if (sym_eigenvalues(s).minCoeff() < floor) s.diagonal().array() += floor;
  return s;
}

}  // namespace vbamp
