#pragma once

#include "linalg.hpp"
#include "model.hpp"
#include "quadrature.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace vbamp {

/// Decoupled channel u = x + v with v ~ N(0, sigma_v).
struct EffectiveChannel {
  Matrix sigma_v;
};

struct DenoiseResult {
  Vector xhat;
  Matrix jacobian;
  double ratio = 0.0;  // posterior probability that the row is nonzero
};

/// Bernoulli-Gauss MMSE denoiser with factorizations cached for one
/// (sigma_v, prior) pair. Per-row calls are read-only and thread-safe.
class BgDenoiser {
 public:
  BgDenoiser(const BgPrior& prior, const Matrix& sigma_v)
      : b_(prior.sigma_x.rows()), eps_(prior.epsilon), sigma_x_(prior.sigma_x) {
    if (sigma_v.rows() != b_ || sigma_v.cols() != b_)
      throw DimensionError("denoiser: sigma_v shape does not match prior");
    if (!sigma_v.allFinite()) throw NumericError("denoiser: sigma_v not finite");
    sigma_v_ = apply_jitter(sigma_v);
    const Matrix su = symmetrize(sigma_x_ + sigma_v_);
    lu_.compute(su);
    lv_.compute(sigma_v_);
    if (lu_.info() != Eigen::Success || lv_.info() != Eigen::Success)
      throw NumericError("denoiser: covariance factorization failed");
    logdet_u_ = 2.0 * lu_.matrixLLT().diagonal().array().log().sum();
    logdet_v_ = 2.0 * lv_.matrixLLT().diagonal().array().log().sum();
    log_prior_odds_ = std::log(eps_) - std::log1p(-eps_);
    wiener_ = lu_.solve(sigma_x_).transpose();
    const Matrix eye = Matrix::Identity(b_, b_);
    gap_ = symmetrize(lu_.solve(eye) - lv_.solve(eye));
    c0_ = symmetrize(sigma_x_ - wiener_ * sigma_x_);
  }

  Index channels() const { return b_; }
  const Matrix& wiener() const { return wiener_; }
  const Matrix& sigma_v() const { return sigma_v_; }

  /// log(F_N-part / point-mass part) of the posterior.
  double log_odds(const Eigen::Ref<const Vector>& u) const {
    const double qu = lu_.matrixL().solve(u).squaredNorm();
    const double qv = lv_.matrixL().solve(u).squaredNorm();
    return log_prior_odds_ - 0.5 * (logdet_u_ - logdet_v_) - 0.5 * (qu - qv);
  }

  /// Returns (ratio, 1 - ratio) without cancellation.
  static std::pair<double, double> logistic(double d) {
    if (d >= 0) {
      const double e = std::exp(-d);
      return {1.0 / (1.0 + e), e / (1.0 + e)};
    }
    const double e = std::exp(d);
    return {e / (1.0 + e), 1.0 / (1.0 + e)};
  }

  double ratio(const Eigen::Ref<const Vector>& u) const { return logistic(log_odds(u)).first; }

  Vector estimate(const Eigen::Ref<const Vector>& u) const {
    check(u);
    return ratio(u) * (wiener_ * u);
  }

  DenoiseResult evaluate(const Eigen::Ref<const Vector>& u) const {
    check(u);
    const auto [p, q] = logistic(log_odds(u));
    DenoiseResult r;
    const Vector m = wiener_ * u;
    r.ratio = p;
    r.xhat = p * m;
    r.jacobian = p * wiener_ - (p * q) * m * (u.transpose() * gap_);
    return r;
  }

  Matrix conditional_covariance(const Eigen::Ref<const Vector>& u) const {
    check(u);
    const auto [p, q] = logistic(log_odds(u));
    const Vector m = wiener_ * u;
    return symmetrize(p * c0_ + (p * q) * m * m.transpose());
  }

  /// Denoises every row of U (N x B). Optionally returns the sum of the
  /// per-row Jacobians and the per-row ratios.
  void denoise_rows(const Matrix& u, Matrix& xhat, Matrix* jacobian_sum = nullptr,
                    Vector* ratios = nullptr) const {
    if (u.cols() != b_) throw DimensionError("denoise_rows: channel mismatch");
    if (!u.allFinite()) throw NumericError("denoise_rows: non-finite input");
    const Index n = u.rows();
    const Matrix ut = u.transpose();
    const Matrix zu = lu_.matrixL().solve(ut);
    const Matrix zv = lv_.matrixL().solve(ut);
    const double base = log_prior_odds_ - 0.5 * (logdet_u_ - logdet_v_);
    Vector p(n), pq(n);
    for (Index i = 0; i < n; ++i) {
      const double d = base - 0.5 * (zu.col(i).squaredNorm() - zv.col(i).squaredNorm());
      const auto [a, c] = logistic(d);
      p(i) = a;
      pq(i) = a * c;
    }
    xhat.noalias() = p.asDiagonal() * (u * wiener_.transpose());
    if (jacobian_sum) {
      const Matrix s = ut * pq.asDiagonal() * u;
      *jacobian_sum = p.sum() * wiener_ - wiener_ * s * gap_;
    }
    if (ratios) *ratios = std::move(p);
  }

 private:
  void check(const Eigen::Ref<const Vector>& u) const {
    if (u.size() != b_) throw DimensionError("denoiser: input length mismatch");
    if (!u.allFinite()) throw NumericError("denoiser: non-finite input");
  }

  Index b_;
  double eps_;
  Matrix sigma_x_, sigma_v_;
  Eigen::LLT<Matrix> lu_, lv_;
  double logdet_u_ = 0, logdet_v_ = 0, log_prior_odds_ = 0;
  Matrix wiener_, gap_, c0_;
};

inline DenoiseResult bg_denoise(const Vector& u, const EffectiveChannel& ch, const BgPrior& prior) {
  return BgDenoiser(prior, ch.sigma_v).evaluate(u);
}

inline Matrix bg_jacobian(const Vector& u, const EffectiveChannel& ch, const BgPrior& prior) {
  return BgDenoiser(prior, ch.sigma_v).evaluate(u).jacobian;
}

inline Matrix conditional_covariance(const Vector& u, const EffectiveChannel& ch,
                                     const BgPrior& prior) {
  return BgDenoiser(prior, ch.sigma_v).conditional_covariance(u);
}

/// Posterior mean by brute-force Gauss-Hermite integration of the mixture
/// posterior; the point mass enters in closed form. The integration variable
/// follows whichever of prior and noise is narrower, which keeps the remaining
/// Gaussian factor smooth on the node scale.
inline Vector mmse_oracle(const Vector& u, const EffectiveChannel& ch, const BgPrior& prior,
                          int nodes_per_dim) {
  const Index b = prior.channels();
  if (b > 4) throw UnsupportedError("mmse_oracle: more than 4 channels");
  if (u.size() != b || ch.sigma_v.rows() != b) throw DimensionError("mmse_oracle: shape");
  if (!u.allFinite()) throw NumericError("mmse_oracle: non-finite input");
  const double eps = prior.epsilon;
  const Matrix sv = apply_jitter(ch.sigma_v);
  const Matrix& sx = prior.sigma_x;
  Eigen::LLT<Matrix> lx(sx), lv(sv);
  const double ldx = 2.0 * lx.matrixLLT().diagonal().array().log().sum();
  const double ldv = 2.0 * lv.matrixLLT().diagonal().array().log().sum();
  const double c = -0.5 * double(b) * std::log(2.0 * std::numbers::pi);
  auto log_density = [&](const Eigen::LLT<Matrix>& l, double ld, const Vector& z) {
    return c - 0.5 * ld - 0.5 * l.matrixL().solve(z).squaredNorm();
  };
  const bool noise_route = sv.trace() <= sx.trace();
  const Matrix lfac = noise_route ? Matrix(lv.matrixL()) : Matrix(lx.matrixL());

  const quad::Rule rule = quad::gauss_hermite(nodes_per_dim);
  std::vector<double> logs;
  std::vector<Vector> zs;
  quad::for_each_tensor_node(rule, int(b), [&](const Vector& h, double w) {
    if (w <= 0.0) return;
    Vector z = noise_route ? Vector(u + lfac * h) : Vector(lfac * h);
    const double ld = noise_route ? log_density(lx, ldx, z) : log_density(lv, ldv, u - z);
    logs.push_back(std::log(w) + ld);
    zs.push_back(std::move(z));
  });
  const double log_point = eps < 1.0 ? std::log1p(-eps) + log_density(lv, ldv, u)
                                     : -std::numeric_limits<double>::infinity();
  const double log_eps = std::log(eps);
  double top = log_point;
  for (double l : logs) top = std::max(top, l + log_eps);
  if (!std::isfinite(top)) return Vector::Zero(b);
  Vector num = Vector::Zero(b);
  double den = std::exp(log_point - top);
  for (std::size_t k = 0; k < logs.size(); ++k) {
    const double w = std::exp(logs[k] + log_eps - top);
    num += w * zs[k];
    den += w;
  }
  return num / den;
}

}  // namespace vbamp
