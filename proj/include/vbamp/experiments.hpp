#pragma once

#include "baselines.hpp"
#include "model.hpp"
#include "single_pixel.hpp"
#include "types.hpp"
#include "vbamp.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace vbamp {

/// Settings of the synthetic single-pixel comparison.
struct TableSetup {
  Index m = 3330;
  double snr_reference_db = 50.5;
  Vector noise_ratios = (Vector(3) << 8, 8, 1).finished();
  Index reference_channel = 2;
  double epsilon = 0.04;
  SynthSpec synth;
  RunOptions run;
  AmpSoftOptions amp;
  GroupLassoOptions lasso;  // lambda is overridden by the calibrated fraction
  int lambda_points = 32;
  double lambda_lo = 1e-3;  // fractions of lambda_max
  double lambda_hi = 0.5;
};

struct MethodScore {
  std::string method;
  Vector nmse_db;
  std::string detail;  // chosen tuning parameter, iteration count, ...
};

struct LambdaSweepPoint {
  double fraction = 0;
  Vector nmse_db;
  bool converged = false;
};

/// One measurement matrix (fixed masks), reused across images.
class SinglePixelBench {
 public:
  SinglePixelBench(const MaskSet& masks, const TableSetup& setup)
      : setup_(setup), dct_(masks.n()), a_(measurement_matrix(masks, dct_)) {
    if (masks.m() != setup.m) throw DimensionError("mask count differs from setup.m");
    conv_ = convert_measurements(Matrix::Zero(a_.rows(), setup.noise_ratios.size()), Matrix(a_));
    ensemble_ = MeasurementEnsemble::shared(std::move(conv_.a_tilde), setup.noise_ratios.size());
  }

  SinglePixelBench(const SinglePixelBench&) = delete;
  SinglePixelBench& operator=(const SinglePixelBench&) = delete;

  const DctModel& dct() const { return dct_; }
  const Matrix& matrix() const { return a_; }
  const TableSetup& setup() const { return setup_; }
  void set_run_options(const RunOptions& o) { setup_.run = o; }
  const ConvertedMeasurement& converted() const { return conv_; }
  const Matrix& converted_matrix() const { return ensemble_.matrices.front(); }

  Matrix measure_clean(const Matrix& coef) const { return a_ * coef; }

  /// Noise standard deviations in the raw measurement domain.
  Vector noise_sigma(const Matrix& y_clean) const {
    return noise_sigma_for_snr(y_clean, setup_.noise_ratios, setup_.reference_channel,
                               setup_.snr_reference_db);
  }

  /// Loads raw measurements y (M x B) and their per-channel noise sigma.
  void observe(const Matrix& y, const Vector& sigma) {
    if (sigma.size() != y.cols()) throw DimensionError("observe: sigma length");
    set_observations(conv_, y);
    Vector var(sigma.size());
    for (Index b = 0; b < sigma.size(); ++b) var(b) = conv_.converted_variance(sigma(b) * sigma(b));
    noise_var_ = var;
  }

  Matrix recover_mmv(const Matrix& sigma_x) { return run_joint(BgPrior{setup_.epsilon, sigma_x}); }

  /// EM started from epsilon = 0.5 and an identity covariance.
  Matrix recover_mmv_em(Index channels) {
    return recover_mmv_em(BgPrior{0.5, Matrix::Identity(channels, channels)});
  }

  /// EM start for images of unknown statistics: the measurement second
  /// moment rescaled to prior weight epsilon.
  BgPrior em_start(double epsilon) const {
    const double rate = double(conv_.rows) / double(converted_matrix().cols());
    Matrix c = infer_signal_covariance(conv_.y_tilde, NoiseModel{noise_var_.asDiagonal()}, Mode::MMV, rate);
    c /= epsilon;
    c.diagonal().array() += 1e-9 * std::max(c.diagonal().maxCoeff(), 1.0);
    return {epsilon, c};
  }

  Matrix recover_mmv_em(const BgPrior& start) {
    Matrix z;
    with_problem(conv_.y_tilde, noise_var_, [&](const ProblemInstance& p) {
      z = vbamp_em_run(p, start, setup_.run).xhat;
    });
    return reinsert_dc(conv_, z);
  }

  /// Scalar EM-BAMP per channel, started from the diagonal of `start`.
  Matrix recover_bamp_em(const BgPrior& start) {
    const Index b = conv_.y_tilde.cols();
    Matrix z(converted_matrix().cols(), b);
    for (Index k = 0; k < b; ++k) {
      with_problem(conv_.y_tilde.col(k), noise_var_.segment(k, 1), [&](const ProblemInstance& p) {
        const BgPrior prior{start.epsilon, start.sigma_x.block(k, k, 1, 1)};
        z.col(k) = vbamp_em_run(p, prior, setup_.run).xhat.col(0);
      });
    }
    return reinsert_dc(conv_, z);
  }

  /// Scalar BAMP on each channel separately.
  Matrix recover_bamp(const Matrix& sigma_x) {
    const Index b = conv_.y_tilde.cols();
    Matrix z(converted_matrix().cols(), b);
    for (Index k = 0; k < b; ++k) {
      with_problem(conv_.y_tilde.col(k), noise_var_.segment(k, 1), [&](const ProblemInstance& p) {
        const BgPrior prior{setup_.epsilon, sigma_x.block(k, k, 1, 1)};
        z.col(k) = vbamp_run(p, prior, setup_.run).xhat.col(0);
      });
    }
    return reinsert_dc(conv_, z);
  }

  /// Soft-threshold AMP per channel. Non-positive entries of theta request
  /// the residual-minimizing search; the used values are written back.
  Matrix recover_amp(Vector& theta) {
    const Index b = conv_.y_tilde.cols();
    Matrix z(converted_matrix().cols(), b);
    for (Index k = 0; k < b; ++k) {
      AmpSoftOptions o = setup_.amp;
      o.noise_variance = noise_var_(k);
      const Vector yk = conv_.y_tilde.col(k);
      AmpSoftResult r = theta(k) > 0 ? amp_soft(yk, converted_matrix(), theta(k), o)
                                     : amp_soft_optimal(yk, converted_matrix(), o);
      theta(k) = r.theta;
      z.col(k) = r.xhat;
    }
    return reinsert_dc(conv_, z);
  }

  double lambda_max() const { return group_lasso_lambda_max(conv_.y_tilde, ensemble_); }

  Matrix recover_group_lasso(double fraction, const Matrix* warm = nullptr, bool* converged = nullptr,
                             Matrix* z_out = nullptr) {
    GroupLassoOptions o = setup_.lasso;
    o.lambda = fraction * lambda_max();
    if (!lasso_) lasso_ = std::make_unique<GroupLassoSolver>(ensemble_, o.rho);
    GroupLassoResult r = lasso_->solve(conv_.y_tilde, o, warm);
    if (converged) *converged = r.converged;
    if (z_out) *z_out = r.xhat;
    return reinsert_dc(conv_, r.xhat);
  }

  /// Log-spaced lambda fractions from large to small with warm starts,
  /// each scored against the true coefficients.
  std::vector<LambdaSweepPoint> sweep_lambda(const Matrix& truth) {
    std::vector<LambdaSweepPoint> out;
    const int k = std::max(setup_.lambda_points, 2);
    Matrix warm;
    for (int i = 0; i < k; ++i) {
      const double f = setup_.lambda_hi *
                       std::pow(setup_.lambda_lo / setup_.lambda_hi, double(i) / double(k - 1));
      bool conv = false;
      Matrix z;
      const Matrix x = recover_group_lasso(f, warm.size() ? &warm : nullptr, &conv, &z);
      warm = std::move(z);
      out.push_back({f, nmse_db(x, truth), conv});
    }
    return out;
  }

 private:
  template <class Fn>
  void with_problem(const Matrix& y, const Vector& var, Fn&& fn) {
    // the problem borrows the converted matrix for the duration of the call
    ProblemInstance p{MeasurementEnsemble::shared(std::move(ensemble_.matrices.front()), y.cols()),
                      y, NoiseModel{var.asDiagonal()}};
    struct Restore {
      ProblemInstance& p;
      MeasurementEnsemble& e;
      ~Restore() { e.matrices.front() = std::move(p.ensemble.matrices.front()); }
    } restore{p, ensemble_};
    fn(static_cast<const ProblemInstance&>(p));
  }

  Matrix run_joint(const BgPrior& prior) {
    Matrix z;
    with_problem(conv_.y_tilde, noise_var_,
                 [&](const ProblemInstance& p) { z = vbamp_run(p, prior, setup_.run).xhat; });
    return reinsert_dc(conv_, z);
  }

  TableSetup setup_;
  DctModel dct_;
  Matrix a_;
  ConvertedMeasurement conv_;
  MeasurementEnsemble ensemble_;
  Vector noise_var_;
  std::unique_ptr<GroupLassoSolver> lasso_;  // factorization of the converted matrix
};

/// Picks the lambda fraction with the lowest channel-averaged NMSE in dB.
inline const LambdaSweepPoint& select_lambda(const std::vector<LambdaSweepPoint>& sweep) {
  if (sweep.empty()) throw ConfigError("empty lambda sweep");
  std::size_t best = 0;
  for (std::size_t i = 1; i < sweep.size(); ++i)
    if (sweep[i].nmse_db.mean() < sweep[best].nmse_db.mean()) best = i;
  return sweep[best];
}

/// Tuning carried from a calibration image to held-out images.
struct TableCalibration {
  Vector theta;
  double lambda_fraction = 0;
};

/// One synthetic image: coefficients, noisy raw measurements and the noise.
struct TableImage {
  Matrix coefficients;
  Matrix y;
  Vector sigma;
};

inline TableImage make_table_image(const SinglePixelBench& bench, std::uint64_t image_seed,
                                   std::uint64_t noise_seed) {
  TableImage img;
  img.coefficients = synth_image(image_seed, bench.setup().synth).coefficients;
  const Matrix clean = bench.measure_clean(img.coefficients);
  img.sigma = bench.noise_sigma(clean);
  img.y = add_channel_noise(clean, img.sigma, noise_seed);
  return img;
}

inline TableCalibration calibrate_table(SinglePixelBench& bench, const TableImage& img) {
  bench.observe(img.y, img.sigma);
  TableCalibration cal;
  cal.theta = Vector::Zero(img.y.cols());
  bench.recover_amp(cal.theta);
  cal.lambda_fraction = select_lambda(bench.sweep_lambda(img.coefficients)).fraction;
  return cal;
}

/// Scores every method on one image. Row order: AMP, BAMP, MMV-BAMP,
/// MMV-BAMP-EM, group lasso.
inline std::vector<MethodScore> score_table_image(SinglePixelBench& bench, const TableImage& img,
                                                  const TableCalibration& cal) {
  bench.observe(img.y, img.sigma);
  const Matrix& truth = img.coefficients;
  const Matrix& sx = bench.setup().synth.sigma_x;
  std::vector<MethodScore> rows;
  Vector theta = cal.theta;
  rows.push_back({"AMP", nmse_db(bench.recover_amp(theta), truth), ""});
  rows.push_back({"BAMP", nmse_db(bench.recover_bamp(sx), truth), ""});
  rows.push_back({"MMV-BAMP", nmse_db(bench.recover_mmv(sx), truth), ""});
  rows.push_back({"MMV-BAMP-EM", nmse_db(bench.recover_mmv_em(truth.cols()), truth), ""});
  rows.push_back({"group lasso", nmse_db(bench.recover_group_lasso(cal.lambda_fraction), truth), ""});
  std::string th;
  for (Index k = 0; k < theta.size(); ++k) th += (k ? ";" : "") + csv::fmt(theta(k));
  rows[0].detail = "theta=" + th;
  rows[4].detail = "lambda_fraction=" + csv::fmt(cal.lambda_fraction);
  return rows;
}

}  // namespace vbamp
