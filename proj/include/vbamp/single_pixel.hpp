#pragma once

#include "linalg.hpp"
#include "rng.hpp"
#include "types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace vbamp {

/// Binary masks, one per row, each with exactly n/2 ones.
struct MaskSet {
  using Bits = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Bits phi;

  Index m() const { return phi.rows(); }
  Index n() const { return phi.cols(); }
  Vector row(Index i) const { return phi.row(i).cast<double>().transpose(); }
};

inline MaskSet generate_masks(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || n < 2) throw DimensionError("generate_masks: dimensions");
  if (n % 2) throw DomainError("generate_masks: n must be even");
  MaskSet s;
  s.phi = MaskSet::Bits::Zero(m, n);
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < m; ++i) {
    std::iota(idx.begin(), idx.end(), 0u);
    CounterRng rng(seed, std::uint64_t(i));
    for (Index k = 0; k < n / 2; ++k) {
      const auto j = Index(k + Index(rng.below(std::uint64_t(n - k))));
      std::swap(idx[std::size_t(k)], idx[std::size_t(j)]);
      s.phi(i, idx[std::size_t(k)]) = 1;
    }
  }
  return s;
}

/// Orthonormal 2-D DCT-II on side x side images vectorized column-major,
/// i.e. D = D1 (x) D1.
class DctModel {
 public:
  explicit DctModel(Index n) : n_(n) {
    side_ = Index(std::llround(std::sqrt(double(n))));
    if (side_ * side_ != n) throw DomainError("DctModel: n is not a perfect square");
    d1_.resize(side_, side_);
    for (Index k = 0; k < side_; ++k) {
      const double a = std::sqrt((k == 0 ? 1.0 : 2.0) / double(side_));
      for (Index j = 0; j < side_; ++j)
        d1_(k, j) = a * std::cos(std::numbers::pi * double((2 * j + 1) * k) / double(2 * side_));
    }
  }

  Index n() const { return n_; }
  Index side() const { return side_; }
  const Matrix& d1() const { return d1_; }

  /// Coefficients of an image (columns are channels).
  Matrix forward(const Matrix& x) const {
    check(x);
    Matrix out(n_, x.cols());
    for (Index b = 0; b < x.cols(); ++b) {
      Eigen::Map<const Matrix> img(x.col(b).data(), side_, side_);
      Eigen::Map<Matrix> c(out.col(b).data(), side_, side_);
      c.noalias() = d1_ * img * d1_.transpose();
    }
    return out;
  }

  Matrix inverse(const Matrix& c) const {
    check(c);
    Matrix out(n_, c.cols());
    for (Index b = 0; b < c.cols(); ++b) {
      Eigen::Map<const Matrix> co(c.col(b).data(), side_, side_);
      Eigen::Map<Matrix> img(out.col(b).data(), side_, side_);
      img.noalias() = d1_.transpose() * co * d1_;
    }
    return out;
  }

  /// Dense D; only sensible for small n.
  Matrix matrix() const {
    Matrix d(n_, n_);
    for (Index a = 0; a < side_; ++a)
      for (Index b = 0; b < side_; ++b) d.block(a * side_, b * side_, side_, side_) = d1_(a, b) * d1_;
    return d;
  }

 private:
  void check(const Matrix& x) const {
    if (x.rows() != n_) throw DimensionError("DctModel: length mismatch");
  }
  Index n_, side_;
  Matrix d1_;
};

/// A = Phi D^T: row i is the DCT of mask i. The first column equals sqrt(N)/2
/// for every row because each mask has N/2 ones; it is set to that value.
inline Matrix measurement_matrix(const MaskSet& masks, const DctModel& dct) {
  if (masks.n() != dct.n()) throw DimensionError("measurement_matrix: size mismatch");
  const Index m = masks.m(), n = masks.n(), s = dct.side();
  Matrix a(m, n);
  Matrix img(s, s), c(s, s), tmp(s, s);
  for (Index i = 0; i < m; ++i) {
    for (Index k = 0; k < n; ++k) img.data()[k] = masks.phi(i, k);
    tmp.noalias() = dct.d1() * img;
    c.noalias() = tmp * dct.d1().transpose();
    a.row(i) = Eigen::Map<const Vector>(c.data(), n).transpose();
  }
  a.col(0).setConstant(std::sqrt(double(n)) / 2.0);
  return a;
}

/// Measurements after removing the DC column: y_tilde = (y - a1 dc) / (sqrt(M)/2)
/// and a_tilde the remaining columns, mean-removed and normalized to unit
/// norm. The unknowns of the converted problem are z_n = column_scale_n x_n.
struct ConvertedMeasurement {
  Matrix y_tilde;       // M x B
  Matrix a_tilde;       // M x (N-1)
  Vector dc_estimate;   // per channel
  double scale = 1.0;   // sqrt(M)/2
  Vector column_scale;  // N-1
  Index rows = 0;       // M

  /// Noise variance of the converted measurements for raw variance s2.
  double converted_variance(double s2) const { return s2 / (scale * scale); }
};

inline Vector dc_estimate(const Matrix& y, Index n) {
  const double m = double(y.rows());
  return (2.0 / (m * std::sqrt(double(n)))) * y.colwise().sum().transpose();
}

/// Replaces the observations of an existing conversion; the matrix part only
/// depends on the masks.
inline void set_observations(ConvertedMeasurement& c, const Matrix& y) {
  const Index n = c.column_scale.size() + 1;
  if (y.rows() != c.rows) throw DimensionError("set_observations: row mismatch");
  c.dc_estimate = dc_estimate(y, n);
  const double a1 = std::sqrt(double(n)) / 2.0;
  c.y_tilde = (y.rowwise() - a1 * c.dc_estimate.transpose()) / c.scale;
}

/// Consumes the measurement matrix to avoid holding two dense copies.
inline ConvertedMeasurement convert_measurements(const Matrix& y, Matrix&& a) {
  const Index m = a.rows(), n = a.cols();
  if (y.rows() != m) throw DimensionError("convert_measurements: row mismatch");
  ConvertedMeasurement c;
  c.scale = std::sqrt(double(m)) / 2.0;
  c.rows = m;
  c.column_scale.resize(n - 1);
  double* base = a.data();
  for (Index j = 1; j < n; ++j) {
    Eigen::Map<Vector> dst(base + (j - 1) * m, m);
    dst = Eigen::Map<const Vector>(base + j * m, m) / c.scale;
    dst.array() -= dst.mean();
    const double s = dst.norm();
    if (!(s > 0)) throw NumericError("convert_measurements: constant measurement column");
    c.column_scale(j - 1) = s;
    dst /= s;
  }
  a.conservativeResize(m, n - 1);
  c.a_tilde = std::move(a);
  set_observations(c, y);
  return c;
}

inline ConvertedMeasurement convert_measurements(const Matrix& y, const MaskSet& masks,
                                                 const DctModel& dct) {
  return convert_measurements(y, measurement_matrix(masks, dct));
}

/// Full coefficient vectors from converted-domain estimates.
inline Matrix reinsert_dc(const ConvertedMeasurement& c, const Matrix& z) {
  if (z.rows() != c.column_scale.size()) throw DimensionError("reinsert_dc: length mismatch");
  Matrix x(z.rows() + 1, z.cols());
  x.row(0) = c.dc_estimate.transpose();
  x.bottomRows(z.rows()) = c.column_scale.cwiseInverse().asDiagonal() * z;
  return x;
}

/// Square RGB image; pixel (r, c) sits at row r + c * side of `pixels`.
struct ColorImage {
  Index side = 0;
  Matrix pixels;  // N x 3
};

inline ColorImage coefficients_to_image(const Matrix& coef, const DctModel& dct) {
  return {dct.side(), dct.inverse(coef)};
}

inline Matrix image_to_coefficients(const ColorImage& img, const DctModel& dct) {
  return dct.forward(img.pixels);
}

inline ColorImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  auto token = [&]() {
    std::string t;
    char ch;
    while (f.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P6") throw IoError("not a binary PPM (P6): " + path);
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw IoError("malformed PPM header: " + path);
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM header: " + path);
  if (w != h) throw DomainError("image is not square: " + path);
  std::vector<unsigned char> buf(std::size_t(w * h * 3));
  if (!f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
    throw IoError("truncated PPM data: " + path);
  ColorImage img{Index(w), Matrix(w * h, 3)};
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) img.pixels(r + c * h, k) = buf[std::size_t((r * w + c) * 3 + k)];
  return img;
}

inline void write_ppm(const ColorImage& img, const std::string& path) {
  const Index s = img.side;
  std::vector<unsigned char> buf(std::size_t(s * s * 3));
  for (Index r = 0; r < s; ++r)
    for (Index c = 0; c < s; ++c)
      for (int k = 0; k < 3; ++k) {
        const double v = std::clamp(img.pixels(r + c * s, k), 0.0, 255.0);
        buf[std::size_t((r * s + c) * 3 + k)] = static_cast<unsigned char>(std::floor(v + 0.5));
      }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P6\n" << s << ' ' << s << "\n255\n";
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!f) throw IoError("write failed: " + path);
}

struct SynthSpec {
  Index side = 100;
  Index block = 20;
  double dc = 20.0;
  Matrix sigma_x = (Matrix(3, 3) << 4, 3, 2, 3, 4, 3, 2, 3, 4).finished();
};

struct SynthImage {
  ColorImage image;
  Matrix coefficients;  // N x B
};

/// Every non-DC entry of the top-left block x block corner of the coefficient
/// grid is drawn jointly across channels from N(0, sigma_x); the DC is fixed.
inline SynthImage synth_image(std::uint64_t seed, const SynthSpec& spec = {}) {
  const Index s = spec.side, n = s * s, b = spec.sigma_x.rows();
  if (spec.block > s) throw DomainError("synth_image: block larger than image");
  const Matrix l = psd_factor(spec.sigma_x);
  Matrix coef = Matrix::Zero(n, b);
  coef.row(0).setConstant(spec.dc);
  Vector z(b);
  for (Index j = 0; j < spec.block; ++j)
    for (Index i = 0; i < spec.block; ++i) {
      const Index k = i + j * s;
      if (k == 0) continue;
      CounterRng rng(seed, std::uint64_t(k));
      for (Index c = 0; c < b; ++c) z(c) = rng.normal();
      coef.row(k) = (l * z).transpose();
    }
  DctModel dct(n);
  return {coefficients_to_image(coef, dct), coef};
}

/// Per-channel 10 log10(|xhat - x|^2 / |x|^2); -inf for an exact match.
inline Vector nmse_db(const Matrix& xhat, const Matrix& x) {
  if (xhat.rows() != x.rows() || xhat.cols() != x.cols()) throw DimensionError("nmse_db: shapes");
  Vector out(x.cols());
  for (Index b = 0; b < x.cols(); ++b) {
    const double ref = x.col(b).squaredNorm();
    if (!(ref > 0)) throw DomainError("nmse_db: zero reference signal");
    const double err = (xhat.col(b) - x.col(b)).squaredNorm();
    out(b) = err > 0 ? 10.0 * std::log10(err / ref) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

/// Adds N(0, sigma_b^2) noise to channel b; row i from stream (seed, i).
inline Matrix add_channel_noise(const Matrix& y, const Vector& sigma, std::uint64_t seed) {
  if (sigma.size() != y.cols()) throw DimensionError("add_channel_noise: channel mismatch");
  Matrix out = y;
  for (Index i = 0; i < y.rows(); ++i) {
    CounterRng rng(seed, std::uint64_t(i));
    for (Index b = 0; b < y.cols(); ++b) out(i, b) += sigma(b) * rng.normal();
  }
  return out;
}

/// Noise standard deviations with the given ratios such that the reference
/// channel reaches `snr_db` relative to its clean measurement power.
inline Vector noise_sigma_for_snr(const Matrix& y_clean, const Vector& ratios, Index reference,
                                  double snr_db) {
  const double power = y_clean.col(reference).squaredNorm() / double(y_clean.rows());
  const double sref = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  return ratios * (sref / ratios(reference));
}

}  // namespace vbamp
