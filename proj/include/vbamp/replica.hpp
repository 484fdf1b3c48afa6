#pragma once

#include "csv.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace vbamp {

/// Integration settings for zeta. The Gaussian expectation is split into a
/// radial integral (composite Gauss-Legendre, panels clustered where the
/// integrand switches between its two regimes) and an average over
/// directions.
struct ZetaQuadrature {
  int radial_nodes = 16;     // per panel
  int angular_nodes = 32;    // per angular coordinate (B = 2, 3)
  long mc_directions = 4096; // anisotropic B >= 4
  std::uint64_t seed = 7;
};

/// Canonical decorrelated setting: Sigma_x = I, diagonal noise given in the
/// column-normalized measurement convention.
struct FreeEnergySpec {
  double rate = 0.25;
  double epsilon = 0.1;
  Vector sigma_w2;
  ZetaQuadrature quad;

  Index channels() const { return sigma_w2.size(); }
  double upper(Index b) const { return epsilon + rate * sigma_w2(b); }

  void validate() const {
    if (!(rate > 0)) throw DomainError("free energy: rate must be positive");
    if (!(epsilon > 0 && epsilon < 1)) throw DomainError("free energy: epsilon outside (0,1)");
    if (sigma_w2.size() < 1) throw DimensionError("free energy: no channels");
    if ((sigma_w2.array() < 0).any() || !sigma_w2.allFinite())
      throw DomainError("free energy: invalid noise variances");
  }
};

inline Vector gamma(const Vector& e, const FreeEnergySpec& spec) {
  if (e.size() != spec.channels()) throw DimensionError("gamma: length mismatch");
  Vector g(e.size());
  for (Index b = 0; b < e.size(); ++b) {
    const double d = e(b) + spec.rate * spec.sigma_w2(b);
    if (!(d > 0)) throw DomainError("gamma: zero MSE with zero noise");
    g(b) = spec.rate / d;
  }
  return g;
}

namespace detail {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// E over r ~ chi_B of softplus(l - kappa r^2 / 2).
inline double radial_expectation(double l, double kappa, int dim, const quad::Rule& gl) {
  if (kappa <= 0) return softplus(l);
  const double rmax = std::sqrt(double(dim)) + 10.0;
  std::vector<double> br;
  for (double r = 0; r < rmax; r += 1.0) br.push_back(r);
  br.push_back(rmax);
  if (l > 0) {
    const double rs = std::sqrt(2.0 * l / kappa);
    const double d = 1.0 / (kappa * rs);
    for (double k : {-20.0, -8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0, 20.0}) {
      const double r = rs + k * d;
      if (r > 0 && r < rmax) br.push_back(r);
    }
  }
  std::sort(br.begin(), br.end());
  const double lognorm = (0.5 * dim - 1.0) * std::numbers::ln2 + std::lgamma(0.5 * dim);
  double sum = 0;
  for (std::size_t p = 0; p + 1 < br.size(); ++p) {
    const double a = br[p], b = br[p + 1];
    if (b - a <= 1e-14 * rmax) continue;
    const double h = 0.5 * (b - a), c = 0.5 * (a + b);
    for (std::size_t k = 0; k < gl.size(); ++k) {
      const double r = c + h * gl.nodes[k];
      const double logp = (dim - 1) * std::log(r) - 0.5 * r * r - lognorm;
      sum += h * gl.weights[k] * std::exp(logp) * softplus(l - 0.5 * kappa * r * r);
    }
  }
  return sum;
}

}  // namespace detail

/// E_h[ log( eps prod_b (1+gamma_b)^(-1/2) + (1-eps) exp(-sum_b eta_b h_b^2 / 2) ) ].
inline double zeta(const Vector& eta, const Vector& gammas, double eps, const ZetaQuadrature& q = {}) {
  const Index dim = eta.size();
  if (gammas.size() != dim) throw DimensionError("zeta: length mismatch");
  if ((eta.array() < 0).any()) throw DomainError("zeta: negative eta");
  if (eps <= 0) return -0.5 * eta.sum();
  const double logc = std::log(eps) - 0.5 * gammas.array().log1p().sum();
  if (eps >= 1) return logc;
  const double l = std::log1p(-eps) - logc;
  const quad::Rule gl = quad::gauss_legendre(q.radial_nodes);
  const int d = int(dim);

  const double emax = eta.maxCoeff(), emin = eta.minCoeff();
  if (dim == 1 || emax - emin <= 1e-14 * emax)
    return logc + detail::radial_expectation(l, emax, d, gl);

  double avg = 0;
  if (dim == 2) {
    const int n = q.angular_nodes;
    for (int i = 0; i < n; ++i) {
      const double phi = 0.5 * std::numbers::pi * (i + 0.5) / n;
      const double c = std::cos(phi), s = std::sin(phi);
      avg += detail::radial_expectation(l, eta(0) * c * c + eta(1) * s * s, d, gl);
    }
    avg /= n;
  } else if (dim == 3) {
    const int n = q.angular_nodes;
    const quad::Rule zr = quad::gauss_legendre(n);
    for (int i = 0; i < n; ++i) {
      const double z = 0.5 * (zr.nodes[i] + 1.0), wz = 0.5 * zr.weights[i];
      for (int j = 0; j < n; ++j) {
        const double phi = 0.5 * std::numbers::pi * (j + 0.5) / n;
        const double c = std::cos(phi), s = std::sin(phi);
        const double kappa = (1 - z * z) * (eta(0) * c * c + eta(1) * s * s) + eta(2) * z * z;
        avg += wz / n * detail::radial_expectation(l, kappa, d, gl);
      }
    }
  } else {
    if (q.mc_directions < 1) throw ConfigError("zeta: no Monte Carlo directions for B >= 4");
    Vector w(dim);
    for (long k = 0; k < q.mc_directions; ++k) {
      CounterRng rng(q.seed, std::uint64_t(k));
      for (Index b = 0; b < dim; ++b) w(b) = rng.normal();
      const double kappa = (eta.array() * w.array().square()).sum() / w.squaredNorm();
      avg += detail::radial_expectation(l, kappa, d, gl);
    }
    avg /= double(q.mc_directions);
  }
  return logc + avg;
}

/// Replica free energy of the BG channel as a function of the per-channel MSE
/// vector. The zeta weights are (1-eps) at gamma/(1+gamma) and eps at gamma;
/// this is the assignment that follows from integrating the replica-symmetric
/// saddle point over the prior.
inline double free_energy(const Vector& e, const FreeEnergySpec& spec) {
  const Index dim = spec.channels();
  if (e.size() != dim) throw DimensionError("free_energy: length mismatch");
  for (Index b = 0; b < dim; ++b)
    if (!(e(b) > 0) || e(b) > spec.upper(b) * (1 + 1e-9))
      throw DomainError("free_energy: MSE outside search box");
  const Vector g = gamma(e, spec);
  const Vector gg = (g.array() / (1.0 + g.array())).matrix();
  const double eps = spec.epsilon, r = spec.rate;
  double tail = 0;
  for (Index b = 0; b < dim; ++b)
    tail += std::log(2.0 * std::numbers::pi * r / g(b)) + g(b) * spec.sigma_w2(b) -
            (1.0 - eps) / r * gg(b);
  return (1.0 - eps) * zeta(gg, g, eps, spec.quad) + eps * zeta(g, g, eps, spec.quad) -
         0.5 * r * tail;
}

struct FreeEnergyPoint {
  enum class Kind { LocalMax, LocalMin, Saddle, Boundary };
  Vector e;
  double value = 0;
  Vector grad;
  Kind kind = Kind::LocalMax;
};

inline const char* to_string(FreeEnergyPoint::Kind k) {
  switch (k) {
    case FreeEnergyPoint::Kind::LocalMax: return "local-max";
    case FreeEnergyPoint::Kind::LocalMin: return "local-min";
    case FreeEnergyPoint::Kind::Saddle: return "saddle";
    case FreeEnergyPoint::Kind::Boundary: return "boundary";
  }
  return "?";
}

/// Log-spaced grid from 1e-8 to the box upper bound, per channel.
struct FreeEnergyGrid {
  int points = 0;           // 0 selects 200 (B <= 2) or 64 (B >= 3)
  double log10_lower = -8.0;

  int resolved(Index b) const { return points > 0 ? points : (b <= 2 ? 200 : 64); }
};

struct FreeEnergyLandscape {
  std::vector<Vector> axes;  // log10 E per channel
  Vector values;             // first channel varies fastest; B >= 4: the diagonal only
  bool diagonal_only = false;

  void write_csv(std::ostream& os) const {
    const Index dim = Index(axes.size());
    std::vector<std::string> head;
    for (Index b = 0; b < dim; ++b) head.push_back("E_" + std::to_string(b + 1) + "_dB");
    head.push_back("F");
    csv::write_row(os, head);
    std::vector<Index> idx(std::size_t(dim), 0);
    for (Index k = 0; k < values.size(); ++k) {
      std::vector<std::string> row;
      if (diagonal_only) {
        for (Index b = 0; b < dim; ++b) row.push_back(csv::fmt(10 * axes[std::size_t(b)](k)));
      } else {
        Index rem = k;
        for (Index b = 0; b < dim; ++b) {
          const Index n = axes[std::size_t(b)].size();
          row.push_back(csv::fmt(10 * axes[std::size_t(b)](rem % n)));
          rem /= n;
        }
      }
      row.push_back(csv::fmt(values(k)));
      csv::write_row(os, row);
    }
  }
};

namespace detail {

inline double fe_at_log(const Vector& loge, const FreeEnergySpec& spec) {
  Vector e(loge.size());
  for (Index b = 0; b < e.size(); ++b) e(b) = std::min(std::pow(10.0, loge(b)), spec.upper(b));
  return free_energy(e, spec);
}

inline Vector fe_gradient(const Vector& e, const FreeEnergySpec& spec) {
  Vector g(e.size());
  for (Index b = 0; b < e.size(); ++b) {
    const double h = 1e-4 * e(b);
    Vector lo = e, hi = e;
    hi(b) = std::min(e(b) + h, spec.upper(b));
    lo(b) = std::max(e(b) - h, 1e-300);
    g(b) = (free_energy(hi, spec) - free_energy(lo, spec)) / (hi(b) - lo(b));
  }
  return g;
}

/// Golden-section search on [a, b] for the max (sign = +1) or min (sign = -1).
template <class Fn>
double golden(Fn&& f, double a, double b, double sign, double tol) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = sign * f(c), fd = sign * f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = sign * f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = sign * f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Coordinate-wise golden-section refinement in log10 E. signs(b) = +1
/// ascends along channel b, -1 descends.
inline Vector refine(Vector x, const Vector& signs, double step, const Vector& lo, const Vector& hi,
                     const FreeEnergySpec& spec) {
  for (int cycle = 0; cycle < 40; ++cycle) {
    double moved = 0;
    for (Index b = 0; b < x.size(); ++b) {
      const double a = std::max(lo(b), x(b) - step), c = std::min(hi(b), x(b) + step);
      auto f = [&](double v) {
        Vector y = x;
        y(b) = v;
        return fe_at_log(y, spec);
      };
      const double nb = golden(f, a, c, signs(b), 1e-7);
      moved = std::max(moved, std::abs(nb - x(b)));
      x(b) = nb;
    }
    if (moved < 4e-5) break;
    step = std::max(moved * 2.0, 1e-4);
  }
  return x;
}

inline bool same_point(const Vector& a, const Vector& b) {
  for (Index k = 0; k < a.size(); ++k)
    if (std::abs(std::log10(a(k)) - std::log10(b(k))) > 1e-3) return false;
  return true;
}

}  // namespace detail

/// Evaluates F on the tensor grid (B <= 3) or on the isotropic diagonal (B >= 4).
inline FreeEnergyLandscape free_energy_landscape(const FreeEnergySpec& spec,
                                                 const FreeEnergyGrid& grid = {}) {
  spec.validate();
  const Index dim = spec.channels();
  const int n = grid.resolved(dim);
  if (n < 3) throw ConfigError("free energy grid needs at least 3 points per channel");
  FreeEnergyLandscape land;
  land.diagonal_only = dim >= 4;
  double common_hi = std::numeric_limits<double>::infinity();
  for (Index b = 0; b < dim; ++b) common_hi = std::min(common_hi, std::log10(spec.upper(b)));
  for (Index b = 0; b < dim; ++b) {
    const double hi = land.diagonal_only ? common_hi : std::log10(spec.upper(b));
    if (!(hi > grid.log10_lower)) throw ConfigError("empty free energy search box");
    land.axes.push_back(Vector::LinSpaced(n, grid.log10_lower, hi));
  }
  if (land.diagonal_only) {
    land.values.resize(n);
    for (int k = 0; k < n; ++k)
      land.values(k) = detail::fe_at_log(Vector::Constant(dim, land.axes[0](k)), spec);
    return land;
  }
  Index total = 1;
  for (Index b = 0; b < dim; ++b) total *= n;
  land.values.resize(total);
  Vector x(dim);
  for (Index k = 0; k < total; ++k) {
    Index rem = k;
    for (Index b = 0; b < dim; ++b) {
      x(b) = land.axes[std::size_t(b)](rem % n);
      rem /= n;
    }
    land.values(k) = detail::fe_at_log(x, spec);
  }
  return land;
}

/// Grid-local extrema of the landscape, refined by coordinate-wise golden
/// section and de-duplicated. Maxima on the box boundary are reported with
/// kind Boundary.
inline std::vector<FreeEnergyPoint> stationary_points(const FreeEnergySpec& spec,
                                                      const FreeEnergyLandscape& land) {
  using Kind = FreeEnergyPoint::Kind;
  const Index dim = spec.channels();
  const int n = int(land.axes[0].size());
  const Index gdim = land.diagonal_only ? 1 : dim;
  Vector lo(dim), hi(dim);
  for (Index b = 0; b < dim; ++b) {
    lo(b) = land.axes[std::size_t(land.diagonal_only ? 0 : b)](0);
    hi(b) = land.diagonal_only ? std::log10(spec.upper(b))
                               : land.axes[std::size_t(b)](n - 1);
  }
  const double step = land.axes[0](1) - land.axes[0](0);
  const bool isotropic = spec.sigma_w2.maxCoeff() == spec.sigma_w2.minCoeff();
  const double common_hi = std::log10(spec.upper(0));
  Index stride[8];
  stride[0] = 1;
  for (Index b = 1; b < gdim; ++b) stride[b] = stride[b - 1] * n;

  struct Cand {
    Vector x;
    Vector signs;
    Kind kind;
  };
  std::vector<Cand> cands;
  std::vector<int> id(static_cast<std::size_t>(gdim));
  Index neigh = 1;
  for (Index b = 0; b < gdim; ++b) neigh *= 3;
  for (Index k = 0; k < land.values.size(); ++k) {
    Index rem = k;
    bool boundary = false;
    for (Index b = 0; b < gdim; ++b) {
      id[std::size_t(b)] = int(rem % n);
      rem /= n;
      if (id[std::size_t(b)] == 0 || id[std::size_t(b)] == n - 1) boundary = true;
    }
    const double f = land.values(k);
    bool all_less = true, all_greater = true;
    for (Index o = 0; o < neigh; ++o) {
      Index r = o, off = 0;
      bool centre = true, inside = true;
      for (Index b = 0; b < gdim; ++b) {
        const int d = int(r % 3) - 1;
        r /= 3;
        if (d) centre = false;
        const int c = id[std::size_t(b)] + d;
        if (c < 0 || c >= n) inside = false;
        off += d * stride[b];
      }
      if (centre || !inside) continue;
      const double g = land.values(k + off);
      if (!(g < f)) all_less = false;
      if (!(g > f)) all_greater = false;
    }
    Vector x(gdim);
    for (Index b = 0; b < gdim; ++b) x(b) = land.axes[std::size_t(b)](id[std::size_t(b)]);
    if (land.diagonal_only) x = Vector::Constant(dim, x(0));
    if (boundary) {
      if (all_less) cands.push_back({x, Vector::Ones(dim), Kind::Boundary});
      continue;
    }
    if (all_less) {
      cands.push_back({x, Vector::Ones(dim), Kind::LocalMax});
    } else if (all_greater) {
      cands.push_back({x, -Vector::Ones(dim), Kind::LocalMin});
    } else if (gdim > 1) {
      // axis-wise extremum in every direction with mixed types
      Vector signs(dim);
      bool ok = true;
      for (Index b = 0; b < gdim && ok; ++b) {
        const double a = land.values(k - stride[b]), c = land.values(k + stride[b]);
        if (a < f && c < f) signs(b) = 1;
        else if (a > f && c > f) signs(b) = -1;
        else ok = false;
      }
      if (ok) cands.push_back({x, signs, Kind::Saddle});
    }
  }

  std::vector<FreeEnergyPoint> out;
  for (const auto& c : cands) {
    Vector x = c.x;
    if (c.kind != Kind::Boundary) {
      if (land.diagonal_only && isotropic) {
        auto f = [&](double v) { return detail::fe_at_log(Vector::Constant(dim, v), spec); };
        const double v = detail::golden(f, std::max(lo(0), x(0) - step),
                                        std::min(common_hi, x(0) + step), c.signs(0), 1e-7);
        x.setConstant(v);
      } else {
        x = detail::refine(x, c.signs, step, lo, hi, spec);
      }
    }
    FreeEnergyPoint p;
    p.e.resize(dim);
    for (Index b = 0; b < dim; ++b) p.e(b) = std::min(std::pow(10.0, x(b)), spec.upper(b));
    p.value = free_energy(p.e, spec);
    if (land.diagonal_only && isotropic) {
      // by symmetry every component equals the diagonal derivative / B
      const double e0 = p.e(0), h = 1e-4 * e0;
      const double fp = free_energy(Vector::Constant(dim, std::min(e0 + h, spec.upper(0))), spec);
      const double fm = free_energy(Vector::Constant(dim, e0 - h), spec);
      p.grad = Vector::Constant(dim, (fp - fm) / (std::min(e0 + h, spec.upper(0)) - (e0 - h)) / double(dim));
    } else {
      p.grad = detail::fe_gradient(p.e, spec);
    }
    p.kind = c.kind;
    bool dup = false;
    for (const auto& q : out)
      if (q.kind == p.kind && detail::same_point(q.e, p.e)) dup = true;
    if (!dup) out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<FreeEnergyPoint> stationary_points(const FreeEnergySpec& spec,
                                                      const FreeEnergyGrid& grid = {}) {
  return stationary_points(spec, free_energy_landscape(spec, grid));
}

struct PerformancePrediction {
  Vector mmse;      // E at the global maximum
  Vector bamp_mse;  // E at the local maximum with the largest total MSE
  bool gap = false;
  bool ambiguous = false;      // maxima not ordered componentwise (B >= 2)
  bool boundary_only = false;  // no interior maximum, boundary maxima used
  std::vector<FreeEnergyPoint> points;
};

inline PerformancePrediction predict_performance(const std::vector<FreeEnergyPoint>& points) {
  using Kind = FreeEnergyPoint::Kind;
  PerformancePrediction pr;
  pr.points = points;
  std::vector<const FreeEnergyPoint*> maxima;
  for (const auto& p : points)
    if (p.kind == Kind::LocalMax) maxima.push_back(&p);
  if (maxima.empty()) {
    pr.boundary_only = true;
    for (const auto& p : points)
      if (p.kind == Kind::Boundary) maxima.push_back(&p);
  }
  if (maxima.empty()) throw NumericError("free energy has no maximum on the grid");
  const FreeEnergyPoint* glob = maxima.front();
  const FreeEnergyPoint* amp = maxima.front();
  for (const auto* p : maxima) {
    if (p->value > glob->value) glob = p;
    if (p->e.sum() > amp->e.sum()) amp = p;
  }
  pr.mmse = glob->e;
  pr.bamp_mse = amp->e;
  pr.gap = !detail::same_point(glob->e, amp->e);
  for (const auto* p : maxima)
    for (Index b = 0; b < p->e.size(); ++b)
      if (p->e(b) > amp->e(b) * (1 + 1e-3)) pr.ambiguous = true;
  return pr;
}

inline PerformancePrediction predict_performance(const FreeEnergySpec& spec,
                                                 const FreeEnergyGrid& grid = {}) {
  return predict_performance(stationary_points(spec, grid));
}

inline void write_stationary_csv(std::ostream& os, const std::vector<FreeEnergyPoint>& pts) {
  if (pts.empty()) return;
  const Index dim = pts.front().e.size();
  std::vector<std::string> head{"kind"};
  for (Index b = 0; b < dim; ++b) head.push_back("E_" + std::to_string(b + 1) + "_dB");
  head.push_back("F");
  head.push_back("is_global_max");
  csv::write_row(os, head);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : pts)
    if (p.kind == FreeEnergyPoint::Kind::LocalMax || p.kind == FreeEnergyPoint::Kind::Boundary)
      best = std::max(best, p.value);
  for (const auto& p : pts) {
    std::vector<std::string> row{to_string(p.kind)};
    for (Index b = 0; b < dim; ++b) row.push_back(csv::fmt(10 * std::log10(p.e(b))));
    row.push_back(csv::fmt(p.value));
    const bool is_max = p.kind == FreeEnergyPoint::Kind::LocalMax ||
                        p.kind == FreeEnergyPoint::Kind::Boundary;
    row.push_back(is_max && p.value == best ? "1" : "0");
    csv::write_row(os, row);
  }
}

}  // namespace vbamp
