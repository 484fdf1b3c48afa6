#pragma once

#include "model.hpp"
#include "types.hpp"
#include "vbamp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace vbamp {

inline double soft_threshold(double u, double tau) {
  if (tau < 0) throw DomainError("soft_threshold: negative threshold");
  const double m = std::abs(u) - tau;
  return m > 0 ? std::copysign(m, u) : 0.0;
}

struct AmpSoftOptions {
  int t_max = 300;
  double eps_tol = 1e-6;
  // threshold multiplier search range for the optimal mode
  double theta_lo = 0.5;
  double theta_hi = 4.0;
  int theta_grid = 15;
  double theta_tol = 0.01;
  double noise_variance = 0.0;  // only used for the mse_hat column of the trace
};

struct AmpSoftResult {
  Vector xhat;
  RunTrace trace;
  bool diverged = false;
  double theta = 0;
  double residual_norm = 0;  // final |r| / sqrt(M)
};

/// Scalar AMP with soft thresholding at tau = theta |r| / sqrt(M) and the
/// Onsager term (|xhat|_0 / M) r.
inline AmpSoftResult amp_soft(const Vector& y, const Matrix& a, double theta,
                              const AmpSoftOptions& opts = {}) {
  const Index m = a.rows(), n = a.cols();
  if (y.size() != m) throw DimensionError("amp_soft: length mismatch");
  if (!(theta >= 0)) throw DomainError("amp_soft: negative threshold multiplier");
  AmpSoftResult res;
  res.theta = theta;
  Vector x = Vector::Zero(n), r = y, u(n);
  const double r0 = y.squaredNorm() / double(m);
  const double rate = double(m) / double(n);
  for (int t = 1; t <= opts.t_max; ++t) {
    const double tau2 = r.squaredNorm() / double(m);
    const double tau = theta * std::sqrt(tau2);
    u.noalias() = a.transpose() * r;
    u += x;
    Vector xn(n);
    Index nnz = 0;
    for (Index i = 0; i < n; ++i) {
      xn(i) = soft_threshold(u(i), tau);
      if (xn(i) != 0.0) ++nnz;
    }
    Vector rn = y - a * xn;
    rn += (double(nnz) / double(m)) * r;
    const double diff = (xn - x).squaredNorm(), prev = x.squaredNorm();
    TraceEntry e;
    e.t = t;
    e.sigma_v = Matrix::Constant(1, 1, tau2);
    e.mse_hat = Vector::Constant(1, rate * (tau2 - opts.noise_variance));
    e.rel_change = prev > 0 ? diff / prev : (diff > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    if (!xn.allFinite() || !rn.allFinite() || (r0 > 0 && rn.squaredNorm() / double(m) > 1e6 * r0)) {
      res.diverged = true;
      break;
    }
    res.trace.entries.push_back(e);
    x = std::move(xn);
    r = std::move(rn);
    if (diff <= opts.eps_tol * prev) {
      res.trace.converged = true;
      break;
    }
  }
  res.xhat = std::move(x);
  res.residual_norm = r.norm() / std::sqrt(double(m));
  return res;
}

/// Picks theta minimizing the final residual norm: coarse grid, then golden
/// section around the best grid point. Runs that do not converge score
/// +inf, since a stalled iteration can leave a deceptively small residual.
inline AmpSoftResult amp_soft_optimal(const Vector& y, const Matrix& a, const AmpSoftOptions& opts = {}) {
  auto score = [&](const AmpSoftResult& r) {
    return (r.trace.converged && !r.diverged) ? r.residual_norm
                                              : std::numeric_limits<double>::infinity();
  };
  AmpSoftResult best;
  double best_score = std::numeric_limits<double>::infinity();
  int best_k = -1;
  const int g = std::max(opts.theta_grid, 2);
  std::vector<double> grid(static_cast<std::size_t>(g));
  for (int k = 0; k < g; ++k) grid[std::size_t(k)] = opts.theta_lo + (opts.theta_hi - opts.theta_lo) * k / (g - 1);
  for (int k = 0; k < g; ++k) {
    AmpSoftResult r = amp_soft(y, a, grid[std::size_t(k)], opts);
    const double s = score(r);
    if (best_k < 0 || s < best_score) {
      best = std::move(r);
      best_score = s;
      best_k = k;
    }
  }
  if (!std::isfinite(best_score)) return best;
  double lo = grid[std::size_t(std::max(best_k - 1, 0))];
  double hi = grid[std::size_t(std::min(best_k + 1, g - 1))];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  auto eval = [&](double th) {
    AmpSoftResult r = amp_soft(y, a, th, opts);
    const double s = score(r);
    if (s < best_score) {
      best_score = s;
      best = r;
    }
    return s;
  };
  double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
  double fc = eval(c), fd = eval(d);
  while (hi - lo > opts.theta_tol) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - phi * (hi - lo);
      fc = eval(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + phi * (hi - lo);
      fd = eval(d);
    }
  }
  return best;
}

struct GroupLassoOptions {
  double lambda = 0.0;
  double rho = 1.0;
  int max_iters = 500;
  double abs_tol = 1e-6;
  double rel_tol = 1e-6;

  void validate() const {
    if (!(lambda >= 0) || !(rho > 0) || max_iters < 1 || !(abs_tol > 0) || !(rel_tol > 0))
      throw ConfigError("invalid group lasso options");
  }
};

struct GroupLassoResult {
  Matrix xhat;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;
};

/// Solves (A^T A + rho I) x = v with a cached factorization; Woodbury form
/// through an M x M system when N > M. Keeps a pointer to `a`.
class RidgeSolver {
 public:
  RidgeSolver(const Matrix& a, double rho) : a_(&a), rho_(rho), wide_(a.cols() > a.rows()) {
    const Index k = wide_ ? a.rows() : a.cols();
    Matrix g = Matrix::Zero(k, k);
    if (wide_) g.selfadjointView<Eigen::Lower>().rankUpdate(a);
    else g.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
    g.diagonal().array() += rho;
    llt_.compute(g);
    if (llt_.info() != Eigen::Success) throw NumericError("ridge factorization failed");
  }

  Matrix solve(const Matrix& v) const {
    if (!wide_) return llt_.solve(v);
    const Matrix t = llt_.solve(*a_ * v);
    return (v - a_->transpose() * t) / rho_;
  }

  double rho() const { return rho_; }

 private:
  const Matrix* a_;
  double rho_;
  bool wide_;
  Eigen::LLT<Matrix> llt_;
};

inline double group_lasso_objective(const Matrix& y, const MeasurementEnsemble& ens, const Matrix& x,
                                    double lambda) {
  const Index b = y.cols();
  double f = 0;
  if (ens.mode == Mode::MMV) f = 0.5 * (y - ens.matrix(0) * x).squaredNorm();
  else
    for (Index k = 0; k < b; ++k) f += 0.5 * (y.col(k) - ens.matrix(k) * x.col(k)).squaredNorm();
  return f + lambda * x.rowwise().norm().sum();
}

/// ADMM for 0.5 sum_b |y(b) - A(b) x(b)|^2 + lambda sum_n |x_n|_2.
/// The per-channel factorizations are built once, so one solver can serve a
/// whole lambda path. The ensemble must outlive the solver.
class GroupLassoSolver {
 public:
  GroupLassoSolver(const MeasurementEnsemble& ens, double rho) : ens_(&ens), rho_(rho) {
    if (!(rho > 0)) throw ConfigError("group lasso rho must be > 0");
    for (const auto& a : ens.matrices) solvers_.emplace_back(a, rho);
  }

  /// Returns the (jointly sparse) z iterate; without convergence the iterate
  /// with the lowest objective is returned.
  GroupLassoResult solve(const Matrix& y, const GroupLassoOptions& opts,
                         const Matrix* warm_start = nullptr) const {
    opts.validate();
    if (opts.rho != rho_) throw ConfigError("group lasso rho differs from the factorized value");
    const MeasurementEnsemble& ens = *ens_;
    const Index b = y.cols(), n = ens.n();
    if (y.rows() != ens.m() || ens.channels() != b) throw DimensionError("group_lasso: shapes");
    const bool mmv = ens.mode == Mode::MMV;
    Matrix aty(n, b);
    if (mmv) aty = ens.matrix(0).transpose() * y;
    else for (Index k = 0; k < b; ++k) aty.col(k) = ens.matrix(k).transpose() * y.col(k);

    Matrix z = Matrix::Zero(n, b);
    if (warm_start) {
      if (warm_start->rows() != n || warm_start->cols() != b) throw DimensionError("group_lasso: warm start");
      z = *warm_start;
    }
    Matrix u = Matrix::Zero(n, b), x(n, b), zold;
    GroupLassoResult res;
    Matrix best = z;
    double best_obj = std::numeric_limits<double>::infinity();
    const double root = std::sqrt(double(n * b));
    for (int it = 1; it <= opts.max_iters; ++it) {
      const Matrix v = aty + opts.rho * (z - u);
      if (mmv) x = solvers_.front().solve(v);
      else for (Index k = 0; k < b; ++k) x.col(k) = solvers_[std::size_t(k)].solve(v.col(k));
      zold = z;
      z = x + u;
      for (Index i = 0; i < n; ++i) {
        const double nr = z.row(i).norm();
        const double s = nr > 0 ? std::max(1.0 - opts.lambda / (opts.rho * nr), 0.0) : 0.0;
        z.row(i) *= s;
      }
      u += x - z;
      const double obj = group_lasso_objective(y, ens, z, opts.lambda);
      res.objective.push_back(obj);
      if (obj < best_obj) {
        best_obj = obj;
        best = z;
      }
      res.iterations = it;
      const double rp = (x - z).norm(), rd = opts.rho * (z - zold).norm();
      const double ep = root * opts.abs_tol + opts.rel_tol * std::max(x.norm(), z.norm());
      const double ed = root * opts.abs_tol + opts.rel_tol * opts.rho * u.norm();
      if (rp <= ep && rd <= ed) {
        res.converged = true;
        break;
      }
    }
    res.xhat = res.converged ? z : best;
    return res;
  }

 private:
  const MeasurementEnsemble* ens_;
  double rho_;
  std::vector<RidgeSolver> solvers_;
};

inline GroupLassoResult group_lasso(const Matrix& y, const MeasurementEnsemble& ens,
                                    const GroupLassoOptions& opts,
                                    const Matrix* warm_start = nullptr) {
  opts.validate();
  return GroupLassoSolver(ens, opts.rho).solve(y, opts, warm_start);
}

/// Smallest lambda for which x = 0 is optimal: max_n |(A^T Y)_n|_2.
inline double group_lasso_lambda_max(const Matrix& y, const MeasurementEnsemble& ens) {
  Matrix aty(ens.n(), y.cols());
  for (Index k = 0; k < y.cols(); ++k) aty.col(k) = ens.matrix(k).transpose() * y.col(k);
  return aty.rowwise().norm().maxCoeff();
}

}  // namespace vbamp
