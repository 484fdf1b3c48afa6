#pragma once

#include "csv.hpp"
#include "denoiser.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "types.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace vbamp {

struct VbampState {
  int t = 0;
  Matrix xhat;         // N x B
  Matrix residual;     // M x B
  Matrix sigma_v;      // effective noise covariance used to produce xhat
  Matrix pseudo_data;  // u rows that were denoised into xhat (empty at t = 0)
};

struct EmOptions {
  bool enabled = false;
  int burn_in = 3;
  int update_period = 1;
  int inner_iterations = 20;
};

struct RunOptions {
  int t_max = 200;
  double eps_tol = 1e-6;
  EmOptions em;

  void validate() const {
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    if (!(eps_tol > 0)) throw ConfigError("eps_tol must be > 0");
    if (em.enabled && (em.update_period < 1 || em.burn_in < 0 || em.inner_iterations < 1))
      throw ConfigError("invalid EM schedule");
  }
};

struct EmSnapshot {
  double epsilon = 0;
  Matrix sigma_x;
  bool fallback = false;
};

struct TraceEntry {
  int t = 0;
  Matrix sigma_v;
  Vector mse_hat;  // R (sigma_v - sigma_w)_bb, linear units
  double rel_change = 0;
  std::optional<EmSnapshot> em;
};

inline double to_db(double v) {
  return v > 0 ? 10.0 * std::log10(v) : -std::numeric_limits<double>::infinity();
}

struct RunTrace {
  std::vector<TraceEntry> entries;
  bool converged = false;

  std::size_t size() const { return entries.size(); }

  void write_csv(std::ostream& os) const {
    if (entries.empty()) return;
    const Index b = entries.front().sigma_v.rows();
    const bool em = entries.back().em.has_value();
    std::vector<std::string> head{"t"};
    for (Index i = 0; i < b; ++i)
      for (Index j = i; j < b; ++j)
        head.push_back("sigma_v_" + std::to_string(i + 1) + std::to_string(j + 1));
    for (Index i = 0; i < b; ++i) head.push_back("mse_hat_" + std::to_string(i + 1) + "_dB");
    head.push_back("rel_change");
    if (em) {
      head.push_back("em_epsilon");
      for (Index i = 0; i < b; ++i)
        for (Index j = i; j < b; ++j)
          head.push_back("em_sigma_x_" + std::to_string(i + 1) + std::to_string(j + 1));
      head.push_back("em_fallback");
    }
    csv::write_row(os, head);
    for (const auto& e : entries) {
      std::vector<std::string> row{std::to_string(e.t)};
      for (Index i = 0; i < b; ++i)
        for (Index j = i; j < b; ++j) row.push_back(csv::fmt(e.sigma_v(i, j)));
      for (Index i = 0; i < b; ++i) row.push_back(csv::fmt_db(to_db(e.mse_hat(i))));
      row.push_back(csv::fmt(e.rel_change));
      if (em) {
        if (e.em) {
          row.push_back(csv::fmt(e.em->epsilon));
          for (Index i = 0; i < b; ++i)
            for (Index j = i; j < b; ++j) row.push_back(csv::fmt(e.em->sigma_x(i, j)));
          row.push_back(e.em->fallback ? "1" : "0");
        } else {
          for (Index k = 0; k < 2 + b * (b + 1) / 2; ++k) row.push_back("");
        }
      }
      csv::write_row(os, row);
    }
  }
};

/// Raised when the iteration produces non-finite values or the effective
/// noise explodes. Carries the trace up to the last finite iteration.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, RunTrace trace)
      : NumericError(what), trace_(std::move(trace)) {}
  const RunTrace& trace() const { return trace_; }

 private:
  RunTrace trace_;
};

struct RunResult {
  Matrix xhat;
  RunTrace trace;
};

struct EmRunResult {
  Matrix xhat;
  RunTrace trace;
  BgPrior fitted_prior;
  NoiseModel fitted_noise;  // the input noise model; EM does not estimate it
};

namespace detail {

inline Matrix apply_transpose(const ProblemInstance& p, const Matrix& r) {
  const auto& ens = p.ensemble;
  if (ens.mode == Mode::MMV) return ens.matrix(0).transpose() * r;
  Matrix out(ens.n(), r.cols());
  for (Index b = 0; b < r.cols(); ++b) out.col(b).noalias() = ens.matrix(b).transpose() * r.col(b);
  return out;
}

inline Matrix apply_forward(const ProblemInstance& p, const Matrix& x) {
  const auto& ens = p.ensemble;
  if (ens.mode == Mode::MMV) return ens.matrix(0) * x;
  Matrix out(ens.m(), x.cols());
  for (Index b = 0; b < x.cols(); ++b) out.col(b).noalias() = ens.matrix(b) * x.col(b);
  return out;
}

}  // namespace detail

/// Empirical residual covariance (1/M), diagonal-projected for DCS.
inline Matrix effective_noise_covariance(const Matrix& residual, Mode mode) {
  Matrix s = symmetrize(residual.transpose() * residual / double(residual.rows()));
  return mode == Mode::DCS ? diagonal_part(s) : s;
}

inline VbampState initial_state(const ProblemInstance& p) {
  VbampState s;
  s.t = 0;
  s.xhat = Matrix::Zero(p.ensemble.n(), p.channels());
  s.residual = p.y;
  s.sigma_v = effective_noise_covariance(p.y, p.mode());
  return s;
}

/// Pseudo-data u = xhat + A^T r per channel.
inline Matrix pseudo_data(const VbampState& s, const ProblemInstance& p) {
  return s.xhat + detail::apply_transpose(p, s.residual);
}

/// Denoises the pseudo-data with the given covariance and forms the
/// Onsager-corrected residual. In DCS mode only the per-channel Jacobian
/// entries enter, the cross terms average out over independent matrices.
inline VbampState complete_iteration(const VbampState& s, const ProblemInstance& p,
                                     const BgPrior& prior, Matrix u, const Matrix& sigma_v) {
  const Index m = p.y.rows();
  BgDenoiser den(prior, sigma_v);
  VbampState next;
  next.t = s.t + 1;
  Matrix jac;
  den.denoise_rows(u, next.xhat, &jac);
  if (p.mode() == Mode::DCS) jac = diagonal_part(jac);
  next.residual = p.y - detail::apply_forward(p, next.xhat);
  next.residual.noalias() += s.residual * jac.transpose() / double(m);
  next.sigma_v = sigma_v;
  next.pseudo_data = std::move(u);
  return next;
}

inline VbampState vbamp_iterate(const VbampState& s, const ProblemInstance& p,
                                const BgPrior& prior) {
  if (s.xhat.rows() != p.ensemble.n() || s.residual.rows() != p.y.rows() ||
      s.xhat.cols() != p.channels() || prior.channels() != p.channels())
    throw DimensionError("vbamp_iterate: state does not match problem");
  const Matrix sv = effective_noise_covariance(s.residual, p.mode());
  return complete_iteration(s, p, prior, pseudo_data(s, p), sv);
}

struct EmFit {
  BgPrior prior;
  bool fallback = false;
};

/// Fits {point mass at 0} + N(0, sigma_u) to the rows of u by EM, then
/// removes the effective noise: sigma_x = PSD-clamp(sigma_u - sigma_v).
inline EmFit em_fit_prior(const Matrix& u, const Matrix& sigma_v, const BgPrior& start,
                          int inner_iterations) {
  const Index b = u.cols();
  const Matrix sv = apply_jitter(sigma_v);
  BgPrior cur = start;
  EmFit out{start, false};
  Matrix xdummy;
  Vector rho;
  for (int it = 0; it < inner_iterations; ++it) {
    BgDenoiser(cur, sv).denoise_rows(u, xdummy, nullptr, &rho);
    const double mass = rho.sum();
    const double eps = mass / double(u.rows());
    if (!(eps >= 1e-6) || !(mass > 0)) {
      out.fallback = true;
      return out;
    }
    const Matrix su = symmetrize(u.transpose() * rho.asDiagonal() * u / mass);
    const Matrix sx = psd_clamp(su - sv);
    const double floor = 1e-12 * std::max(sx.trace(), 0.0) / double(b);
    if (!(sx.trace() > 0) || sym_eigenvalues(sx).minCoeff() <= floor) {
      out.fallback = true;
      return out;
    }
    const double change = std::abs(eps - cur.epsilon) + max_abs(sx - cur.sigma_x) / max_abs(sx);
    cur.epsilon = std::min(eps, 1.0);
    cur.sigma_x = sx;
    out.prior = cur;
    if (change < 1e-10) break;
  }
  return out;
}

namespace detail {

inline void record(RunTrace& trace, const VbampState& s, const ProblemInstance& p,
                   double rel_change, std::optional<EmSnapshot> em) {
  TraceEntry e;
  e.t = s.t;
  e.sigma_v = s.sigma_v;
  e.mse_hat = p.ensemble.rate() * (s.sigma_v - p.noise.sigma_w).diagonal();
  e.rel_change = rel_change;
  e.em = std::move(em);
  trace.entries.push_back(std::move(e));
}

template <class Step>
RunResult run_loop(const ProblemInstance& p, const RunOptions& opts, Step&& step) {
  opts.validate();
  p.validate();
  VbampState s = initial_state(p);
  RunTrace trace;
  double initial_trace = -1.0;
  while (true) {
    std::optional<EmSnapshot> em;
    VbampState next = step(s, em);
    if (initial_trace < 0) initial_trace = next.sigma_v.trace();
    if (!next.xhat.allFinite() || !next.residual.allFinite() || !next.sigma_v.allFinite())
      throw DivergenceError("vbamp diverged: non-finite state at t=" + std::to_string(next.t),
                            trace);
    if (next.sigma_v.trace() > 1e6 * initial_trace && initial_trace > 0)
      throw DivergenceError("vbamp diverged: effective noise exploded at t=" +
                                std::to_string(next.t),
                            trace);
    const double diff = (next.xhat - s.xhat).squaredNorm();
    const double prev = s.xhat.squaredNorm();
    const double rel = prev > 0 ? diff / prev
                                : (diff > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    record(trace, next, p, rel, std::move(em));
    const bool done = diff <= opts.eps_tol * prev;
    s = std::move(next);
    if (done) {
      trace.converged = true;
      break;
    }
    if (s.t >= opts.t_max) break;
  }
  return {std::move(s.xhat), std::move(trace)};
}

}  // namespace detail

inline RunResult vbamp_run(const ProblemInstance& p, const BgPrior& prior,
                           const RunOptions& opts = {}) {
  prior.validate();
  if (prior.channels() != p.channels()) throw DimensionError("prior channel count mismatch");
  return detail::run_loop(p, opts, [&](const VbampState& s, std::optional<EmSnapshot>&) {
    return vbamp_iterate(s, p, prior);
  });
}

/// VBAMP with the prior re-estimated from the pseudo-data each iteration
/// after burn-in. `start` fixes the channel count and the initial values.
inline EmRunResult vbamp_em_run(const ProblemInstance& p, const BgPrior& start,
                                RunOptions opts = {}) {
  opts.em.enabled = true;
  start.validate();
  if (start.channels() != p.channels()) throw DimensionError("prior channel count mismatch");
  BgPrior cur = start;
  auto res = detail::run_loop(p, opts, [&](const VbampState& s, std::optional<EmSnapshot>& em) {
    Matrix u = pseudo_data(s, p);
    const Matrix sv = effective_noise_covariance(s.residual, p.mode());
    const int t = s.t + 1;
    if (t > opts.em.burn_in && (t - opts.em.burn_in - 1) % opts.em.update_period == 0) {
      EmFit fit = em_fit_prior(u, sv, cur, opts.em.inner_iterations);
      cur = fit.prior;
      em = EmSnapshot{cur.epsilon, cur.sigma_x, fit.fallback};
    }
    return complete_iteration(s, p, cur, std::move(u), sv);
  });
  return {std::move(res.xhat), std::move(res.trace), cur, p.noise};
}

}  // namespace vbamp
