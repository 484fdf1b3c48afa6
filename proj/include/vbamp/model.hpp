#pragma once

#include "linalg.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace vbamp {

/// Bernoulli-Gauss row prior: a row is zero with probability 1 - epsilon,
/// otherwise N(0, sigma_x).
struct BgPrior {
  double epsilon = 0.1;
  Matrix sigma_x;

  Index channels() const { return sigma_x.rows(); }

  /// Throws DomainError on a malformed prior. epsilon = 0 is accepted so that
  /// the degenerate all-zero signal can be generated and analyzed.
  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
      throw DomainError("epsilon outside [0, 1]");
    if (sigma_x.rows() < 1 || sigma_x.rows() != sigma_x.cols())
      throw DimensionError("sigma_x must be square and non-empty");
    if (!sigma_x.allFinite()) throw DomainError("sigma_x not finite");
    if (!is_symmetric(sigma_x, 1e-12)) throw DomainError("sigma_x not symmetric");
    if (sym_eigenvalues(sigma_x).minCoeff() <= 0.0)
      throw DomainError("sigma_x not positive definite");
  }
};

struct NoiseModel {
  Matrix sigma_w;

  Index channels() const { return sigma_w.rows(); }

  void validate() const {
    if (sigma_w.rows() < 1 || sigma_w.rows() != sigma_w.cols())
      throw DimensionError("sigma_w must be square and non-empty");
    if (!sigma_w.allFinite()) throw DomainError("sigma_w not finite");
    if (!is_symmetric(sigma_w, 1e-12)) throw DomainError("sigma_w not symmetric");
    const double tr = std::max(sigma_w.trace(), 0.0);
    if (sym_eigenvalues(sigma_w).minCoeff() < -1e-12 * std::max(tr, 1.0))
      throw DomainError("sigma_w not positive semidefinite");
  }
};

enum class MatrixKind { Gaussian, Rademacher };

/// Measurement matrices. MMV stores a single shared matrix.
struct MeasurementEnsemble {
  Mode mode = Mode::MMV;
  std::vector<Matrix> matrices;
  Index channel_count = 1;

  Index m() const { return matrices.front().rows(); }
  Index n() const { return matrices.front().cols(); }
  double rate() const { return double(m()) / double(n()); }
  Index channels() const { return channel_count; }
  const Matrix& matrix(Index b) const {
    return mode == Mode::MMV ? matrices.front() : matrices.at(std::size_t(b));
  }

  static MeasurementEnsemble shared(Matrix a, Index channels) {
    MeasurementEnsemble e;
    e.mode = Mode::MMV;
    e.channel_count = channels;
    e.matrices.push_back(std::move(a));
    return e;
  }
  static MeasurementEnsemble distributed(std::vector<Matrix> as) {
    MeasurementEnsemble e;
    e.mode = Mode::DCS;
    e.channel_count = Index(as.size());
    e.matrices = std::move(as);
    return e;
  }
};

struct JointSparseSignal {
  Matrix x;                      // N x B
  std::vector<Index> support;    // nonzero rows, ascending
};

struct ProblemInstance {
  MeasurementEnsemble ensemble;
  Matrix y;  // M x B
  NoiseModel noise;

  Index channels() const { return y.cols(); }
  Mode mode() const { return ensemble.mode; }

  void validate() const {
    if (ensemble.matrices.empty()) throw DimensionError("no measurement matrix");
    const Index b = y.cols();
    if (ensemble.mode == Mode::MMV && ensemble.matrices.size() != 1)
      throw DimensionError("MMV ensemble must hold one matrix");
    if (ensemble.mode == Mode::DCS && Index(ensemble.matrices.size()) != b)
      throw DimensionError("DCS ensemble needs one matrix per channel");
    for (const auto& a : ensemble.matrices)
      if (a.rows() != y.rows() || a.cols() != ensemble.n())
        throw DimensionError("measurement matrix shape mismatch");
    if (noise.channels() != b) throw DimensionError("noise channel count mismatch");
    if (!y.allFinite()) throw DomainError("measurements not finite");
  }
};

/// Column-normalized Gaussian or +-1/sqrt(m) Rademacher matrix. Column j is
/// drawn from stream (seed, j).
inline Matrix generate_matrix(Index m, Index n, MatrixKind kind, std::uint64_t seed) {
  if (m < 1 || n < 1) throw DimensionError("generate_matrix: zero dimension");
  Matrix a(m, n);
  const double r = 1.0 / std::sqrt(double(m));
  for (Index j = 0; j < n; ++j) {
    CounterRng rng(seed, std::uint64_t(j));
    if (kind == MatrixKind::Rademacher) {
      for (Index i = 0; i < m; ++i) a(i, j) = (rng() >> 63) ? r : -r;
    } else {
      for (Index i = 0; i < m; ++i) a(i, j) = rng.normal();
      a.col(j) /= a.col(j).norm();
    }
  }
  return a;
}

/// MMV: one matrix. DCS: channel b uses substream seed mixed with b.
inline MeasurementEnsemble make_ensemble(Mode mode, Index m, Index n, Index channels,
                                         MatrixKind kind, std::uint64_t seed) {
  if (channels < 1) throw DimensionError("make_ensemble: no channels");
  if (mode == Mode::MMV)
    return MeasurementEnsemble::shared(generate_matrix(m, n, kind, seed), channels);
  std::vector<Matrix> as;
  for (Index b = 0; b < channels; ++b)
    as.push_back(generate_matrix(m, n, kind, mix64(seed + 0x51ED270B27A5A9E1ULL * (b + 1))));
  return MeasurementEnsemble::distributed(std::move(as));
}

/// Row n uses stream (seed, n): one uniform for the support draw, then B normals.
inline JointSparseSignal sample_signal(const BgPrior& prior, Index n, std::uint64_t seed) {
  const Index b = prior.channels();
  if (prior.epsilon < 0.0 || prior.epsilon > 1.0) throw DomainError("epsilon outside [0, 1]");
  const Matrix l = psd_factor(prior.sigma_x);
  JointSparseSignal s;
  s.x = Matrix::Zero(n, b);
  Vector z(b);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(seed, std::uint64_t(i));
    if (rng.uniform() > prior.epsilon) continue;
    for (Index k = 0; k < b; ++k) z(k) = rng.normal();
    s.x.row(i) = (l * z).transpose();
    s.support.push_back(i);
  }
  return s;
}

/// y(b) = A(b) x(b) + w(b); noise row m from stream (seed, m).
inline Matrix measure(const Matrix& x, const MeasurementEnsemble& ens,
                      const NoiseModel& noise, std::uint64_t seed) {
  const Index b = x.cols();
  if (x.rows() != ens.n() || b != ens.channels() || noise.channels() != b)
    throw DimensionError("measure: dimension mismatch");
  Matrix y(ens.m(), b);
  if (ens.mode == Mode::MMV) {
    y.noalias() = ens.matrix(0) * x;
  } else {
    for (Index k = 0; k < b; ++k) y.col(k).noalias() = ens.matrix(k) * x.col(k);
  }
  if (noise.sigma_w.isZero(0.0)) return y;
  const Matrix l = psd_factor(noise.sigma_w);
  Vector z(b);
  for (Index i = 0; i < y.rows(); ++i) {
    CounterRng rng(seed, std::uint64_t(i));
    for (Index k = 0; k < b; ++k) z(k) = rng.normal();
    y.row(i) += (l * z).transpose();
  }
  return y;
}

/// Second-moment estimate of the signal covariance from the measurements,
/// R (cov{y_m} - Sigma_w), diagonal-projected for DCS, PSD-clamped. The
/// model is zero-mean so the uncentered 1/M moment is used.
inline Matrix infer_signal_covariance(const Matrix& y, const NoiseModel& noise, Mode mode,
                                      double rate) {
  const Index m = y.rows(), b = y.cols();
  if (m < b) throw DimensionError("infer_signal_covariance: fewer rows than channels");
  Matrix c = (y.transpose() * y) / double(m) - noise.sigma_w;
  c *= rate;
  if (mode == Mode::DCS) c = diagonal_part(c);
  return psd_clamp(c);
}

}  // namespace vbamp
