#pragma once

#include "csv.hpp"
#include "denoiser.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <vector>

namespace vbamp {

struct IntegratorSpec {
  enum class Kind { Quadrature, TensorHermite, MonteCarlo };
  Kind kind = Kind::Quadrature;
  int nodes_per_dim = 16;  // Quadrature: radial nodes per panel; TensorHermite: nodes per axis
  int angular_nodes = 0;   // Quadrature: 0 selects 64 (B = 2) or 24 (B = 3)
  long samples = 200000;   // Monte Carlo budget, counted in +- pairs
  std::uint64_t seed = 1;

  static IntegratorSpec quadrature(int radial_nodes = 16, int angular_nodes = 0) {
    return {Kind::Quadrature, radial_nodes, angular_nodes, 0, 0};
  }
  static IntegratorSpec tensor_hermite(int nodes) { return {Kind::TensorHermite, nodes, 0, 0, 0}; }
  static IntegratorSpec montecarlo(long samples, std::uint64_t seed) {
    return {Kind::MonteCarlo, 0, 0, samples, seed};
  }
  /// Spherical-radial quadrature for B <= 3, Monte Carlo beyond.
  static IntegratorSpec default_for(Index b) {
    if (b <= 3) return quadrature();
    return montecarlo(200000, 1);
  }
};

namespace detail {

/// Sum of w_k (F(u_k) - g_k)(F(u_k) - g_k)^T over a batch.
inline Matrix weighted_error_moment(const BgDenoiser& den, const Matrix& u, const Matrix& g,
                                    const Vector& w) {
  Matrix f;
  den.denoise_rows(u, f);
  const Matrix e = f - g;
  return e.transpose() * w.asDiagonal() * e;
}

/// Error second moment E[(F(x+v) - x)(...)^T] reduced to one-dimensional
/// radial integrals. With u = Lv h (noise-whitened coordinates) the log-odds
/// of the denoiser is base + kappa(w) r^2 / 2 along direction w, so
///   point-mass part:  E_h[pi^2 W0 u u^T W0^T]
///   Gaussian part:    E_{u~N(0,Su)}[(1-pi)^2 W0 u u^T W0^T] + C0
/// both become sum_w J(w) a(w) a(w)^T with a(w) = W0 Lv w and scalar J(w).
/// Radial panels are clustered where pi switches, which tensor rules
/// cannot resolve once the effective noise is small.
inline Matrix se_expectation_radial(const BgPrior& prior, const Matrix& sigma_v, int radial_nodes,
                                    int angular_nodes) {
  const Index b = prior.channels();
  const double eps = prior.epsilon;
  const Matrix& sx = prior.sigma_x;
  const Matrix su = symmetrize(sx + sigma_v);
  Eigen::LLT<Matrix> llu(su), llv(sigma_v);
  const Matrix lv = llv.matrixL();
  const double ldu = 2.0 * llu.matrixLLT().diagonal().array().log().sum();
  const double ldv = 2.0 * llv.matrixLLT().diagonal().array().log().sum();
  const Matrix w0 = llu.solve(sx).transpose();
  const Matrix c0 = symmetrize(sx - w0 * sx);
  const Matrix mu = symmetrize(lv.transpose() * llu.solve(lv));  // Lv^T Su^-1 Lv
  const double base = std::log(eps) - std::log1p(-eps) - 0.5 * (ldu - ldv);
  const double sqrt_det_mu = std::exp(0.5 * (ldv - ldu));
  const int dim = int(b);
  const double lognorm = (0.5 * dim - 1.0) * std::numbers::ln2 + std::lgamma(0.5 * dim);
  const quad::Rule gl = quad::gauss_legendre(radial_nodes);

  // scalar radial integrals for one direction
  auto radial = [&](double kappa, double mu_w, double& j1, double& j2) {
    const double rs = (base < 0 && kappa > 0) ? std::sqrt(-2.0 * base / kappa) : 0.0;
    const double r1 = std::sqrt(double(dim)) + 10.0;
    const double r2 = std::sqrt((55.0 + std::max(0.0, -2.0 * base)) / (kappa + 0.5 * mu_w));
    const double rmax = std::max(r1, r2);
    std::vector<double> br;
    for (int k = 0; k <= 24; ++k) br.push_back(rmax * k / 24.0);
    if (rs > 0) {
      const double d = 1.0 / (kappa * rs);
      for (double k : {-20.0, -8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0, 20.0}) {
        const double r = rs + k * d;
        if (r > 0 && r < rmax) br.push_back(r);
      }
    }
    std::sort(br.begin(), br.end());
    j1 = j2 = 0;
    for (std::size_t p = 0; p + 1 < br.size(); ++p) {
      const double lo = br[p], hi = br[p + 1];
      if (hi - lo <= 1e-14 * rmax) continue;
      const double h = 0.5 * (hi - lo), c = 0.5 * (hi + lo);
      for (std::size_t k = 0; k < gl.size(); ++k) {
        const double r = c + h * gl.nodes[k];
        const auto [pi, qi] = BgDenoiser::logistic(base + 0.5 * kappa * r * r);
        const double lr = std::log(r);
        const double w = h * gl.weights[k];
        j1 += w * std::exp((dim + 1) * lr - 0.5 * r * r - lognorm) * pi * pi;
        j2 += w * std::exp((dim + 1) * lr - 0.5 * mu_w * r * r - lognorm) * sqrt_det_mu * qi * qi;
      }
    }
  };

  Matrix acc = Matrix::Zero(b, b);
  auto add_direction = [&](const Vector& w, double weight) {
    const double mu_w = w.dot(mu * w);
    const double kappa = std::max(0.0, 1.0 - mu_w);
    double j1, j2;
    radial(kappa, mu_w, j1, j2);
    const Vector a = w0 * (lv * w);
    acc += weight * ((1.0 - eps) * j1 + eps * j2) * a * a.transpose();
  };

  if (b == 1) {
    add_direction(Vector::Ones(1), 1.0);
  } else if (b == 2) {
    const int n = angular_nodes > 0 ? angular_nodes : 64;
    for (int k = 0; k < n; ++k) {
      const double t = std::numbers::pi * (k + 0.5) / n;
      add_direction((Vector(2) << std::cos(t), std::sin(t)).finished(), 1.0 / n);
    }
  } else if (b == 3) {
    const int n = angular_nodes > 0 ? angular_nodes : 24;
    const int nphi = 2 * n;
    const quad::Rule zr = quad::gauss_legendre(n);
    for (int i = 0; i < n; ++i) {
      const double z = 0.5 * (zr.nodes[i] + 1.0), wz = 0.5 * zr.weights[i];
      const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
      for (int k = 0; k < nphi; ++k) {
        const double phi = 2.0 * std::numbers::pi * (k + 0.5) / nphi;
        add_direction((Vector(3) << s * std::cos(phi), s * std::sin(phi), z).finished(),
                      wz / nphi);
      }
    }
  } else {
    throw UnsupportedError("radial SE quadrature supports at most 3 channels");
  }
  return acc + eps * c0;
}

inline Matrix se_expectation_quadrature(const BgDenoiser& den, const Matrix& lx, const Matrix& lv,
                                        double eps, int nodes) {
  const Index b = lx.rows();
  const quad::Rule r = quad::gauss_hermite(nodes);
  Matrix out = Matrix::Zero(b, b);
  if (eps < 1.0) {
    // (1 - eps) E_v[F(v) F(v)^T]
    std::vector<Vector> pts;
    std::vector<double> ws;
    quad::for_each_tensor_node(r, int(b), [&](const Vector& h, double w) {
      pts.push_back(lv * h);
      ws.push_back(w);
    });
    Matrix u(Index(pts.size()), b);
    for (Index i = 0; i < u.rows(); ++i) u.row(i) = pts[std::size_t(i)].transpose();
    out += (1.0 - eps) *
           weighted_error_moment(den, u, Matrix::Zero(u.rows(), b),
                                 Eigen::Map<Vector>(ws.data(), Index(ws.size())));
  }
  if (eps > 0.0) {
    // eps E_{g,v}[(F(g + v) - g)(...)^T] over the 2B-dim tensor grid
    Index total = 1;
    for (Index k = 0; k < 2 * b; ++k) total *= nodes;
    Matrix u(total, b), g(total, b);
    Vector w(total);
    Index i = 0;
    quad::for_each_tensor_node(r, int(2 * b), [&](const Vector& h, double wt) {
      const Vector gg = lx * h.head(b);
      g.row(i) = gg.transpose();
      u.row(i) = (gg + lv * h.tail(b)).transpose();
      w(i) = wt;
      ++i;
    });
    out += eps * weighted_error_moment(den, u, g, w);
  }
  return out;
}

/// Monte Carlo with every sample evaluated on its coordinate sign orbit
/// (h -> S h for all diagonal sign matrices S, applied jointly to the signal
/// and noise draws). The orbit contains the antithetic pair and, for diagonal
/// covariances, cancels off-diagonal terms exactly.
inline Matrix se_expectation_montecarlo(const BgDenoiser& den, const Matrix& lx, const Matrix& lv,
                                        double eps, long pairs, std::uint64_t seed) {
  const Index b = lx.rows();
  const int orbit_bits = int(std::min<Index>(b, 10));
  const long orbit = 1L << orbit_bits;
  const long base = std::max(1L, (2 * pairs) / orbit);
  Matrix out = Matrix::Zero(b, b);
  const long chunk = std::max(1L, 65536 / orbit);
  for (long start = 0; start < base; start += chunk) {
    const long cnt = std::min(chunk, base - start);
    Matrix ua(cnt * orbit, b), ub(cnt * orbit, b), g(cnt * orbit, b);
    Vector h1(b), h2(b);
    for (long s = 0; s < cnt; ++s) {
      CounterRng rng(seed, std::uint64_t(start + s));
      for (Index k = 0; k < b; ++k) h1(k) = rng.normal();
      for (Index k = 0; k < b; ++k) h2(k) = rng.normal();
      for (long o = 0; o < orbit; ++o) {
        Vector a = h1, c = h2;
        for (int k = 0; k < orbit_bits; ++k)
          if (o >> k & 1) {
            a(k) = -a(k);
            c(k) = -c(k);
          }
        const Index row = Index(s * orbit + o);
        const Vector gg = lx * a;
        g.row(row) = gg.transpose();
        ub.row(row) = (gg + lv * c).transpose();
        ua.row(row) = (lv * c).transpose();
      }
    }
    const Vector w = Vector::Constant(cnt * orbit, 1.0 / double(base * orbit));
    if (eps < 1.0)
      out += (1.0 - eps) * weighted_error_moment(den, ua, Matrix::Zero(ua.rows(), b), w);
    if (eps > 0.0) out += eps * weighted_error_moment(den, ub, g, w);
  }
  return out;
}

}  // namespace detail

/// One state-evolution step: sigma_w + (1/R) E[(F(x + v) - x)(...)^T].
inline Matrix se_step(const Matrix& sigma_v, const BgPrior& prior, const NoiseModel& noise,
                      double rate, Mode mode, const IntegratorSpec& integ) {
  const Index b = prior.channels();
  if (sigma_v.rows() != b || noise.channels() != b) throw DimensionError("se_step: shapes");
  if (!(rate > 0)) throw DomainError("se_step: rate must be positive");
  if (integ.kind != IntegratorSpec::Kind::MonteCarlo && integ.nodes_per_dim < 1)
    throw ConfigError("se_step: quadrature needs at least one node");
  if (integ.kind == IntegratorSpec::Kind::MonteCarlo && integ.samples < 1)
    throw ConfigError("se_step: Monte Carlo sample budget is zero");
  Matrix e = Matrix::Zero(b, b);
  if (prior.epsilon > 0.0) {
    const BgDenoiser den(prior, sigma_v);
    const Matrix lx = psd_factor(prior.sigma_x);
    const Matrix lv = Eigen::LLT<Matrix>(den.sigma_v()).matrixL();
    if (integ.kind == IntegratorSpec::Kind::Quadrature)
      e = detail::se_expectation_radial(prior, den.sigma_v(), integ.nodes_per_dim,
                                        integ.angular_nodes);
    else if (integ.kind == IntegratorSpec::Kind::MonteCarlo)
      e = detail::se_expectation_montecarlo(den, lx, lv, prior.epsilon, integ.samples, integ.seed);
    else
      e = detail::se_expectation_quadrature(den, lx, lv, prior.epsilon,
                                            std::max(integ.nodes_per_dim, 1));
  }
  Matrix out = noise.sigma_w + e / rate;
  return mode == Mode::DCS ? diagonal_part(out) : symmetrize(out);
}

struct SeTrajectory {
  std::vector<Matrix> sigma_v;
  std::vector<Vector> mse_hat;  // linear units
  bool converged = false;

  const Matrix& final_sigma_v() const { return sigma_v.back(); }
  const Vector& final_mse() const { return mse_hat.back(); }

  void write_csv(std::ostream& os) const {
    if (sigma_v.empty()) return;
    const Index b = sigma_v.front().rows();
    std::vector<std::string> head{"t"};
    for (Index i = 0; i < b; ++i) head.push_back("mse_hat_" + std::to_string(i + 1) + "_dB");
    for (Index i = 0; i < b; ++i)
      for (Index j = i; j < b; ++j)
        head.push_back("sigma_v_" + std::to_string(i + 1) + std::to_string(j + 1));
    csv::write_row(os, head);
    for (std::size_t t = 0; t < sigma_v.size(); ++t) {
      std::vector<std::string> row{std::to_string(t)};
      for (Index i = 0; i < b; ++i)
        row.push_back(csv::fmt_db(mse_hat[t](i) > 0 ? 10 * std::log10(mse_hat[t](i))
                                                    : -std::numeric_limits<double>::infinity()));
      for (Index i = 0; i < b; ++i)
        for (Index j = i; j < b; ++j) row.push_back(csv::fmt(sigma_v[t](i, j)));
      csv::write_row(os, row);
    }
  }
};

inline Matrix se_initial(const BgPrior& prior, const NoiseModel& noise, double rate, Mode mode) {
  Matrix s = noise.sigma_w + (prior.epsilon / rate) * prior.sigma_x;
  return mode == Mode::DCS ? diagonal_part(s) : symmetrize(s);
}

/// Iterates se_step from the zero-estimate state until the max-norm change
/// falls below tol relative to the current state, or t_max steps.
inline SeTrajectory se_run(const BgPrior& prior, const NoiseModel& noise, double rate, Mode mode,
                           const IntegratorSpec& integ, int t_max = 500, double tol = 1e-9,
                           const Matrix* start = nullptr) {
  SeTrajectory tr;
  Matrix cur = start ? *start : se_initial(prior, noise, rate, mode);
  auto push = [&](const Matrix& s) {
    tr.sigma_v.push_back(s);
    tr.mse_hat.push_back(rate * (s - noise.sigma_w).diagonal());
  };
  push(cur);
  for (int t = 0; t < t_max; ++t) {
    Matrix next = se_step(cur, prior, noise, rate, mode, integ);
    const bool done = max_abs(next - cur) < tol * max_abs(cur);
    push(next);
    cur = std::move(next);
    if (done) {
      tr.converged = true;
      break;
    }
  }
  return tr;
}

}  // namespace vbamp
