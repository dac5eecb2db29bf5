#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "egsde/grid.hpp"

namespace egsde::metrics {

inline constexpr double kPeak = 255.0;
inline constexpr double kPsnrCap = 100.0;

// Maps data values in [lo, hi] onto the 0..255 pixel scale.
struct ValueRange {
  double lo = -1.0;
  double hi = 1.0;
};

inline Grid to_pixels(const Grid& x, ValueRange range = {}) {
  Grid out(x.shape());
  const double k = kPeak / (range.hi - range.lo);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - range.lo) * k;
  return out;
}

inline double mse(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("metrics: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

// Root-mean-square difference; inputs on the pixel scale.
inline double l2(std::span<const double> x, std::span<const double> y) { return std::sqrt(mse(x, y)); }

inline double l2(const Grid& x, const Grid& y) {
  require_same_shape(x, y, "l2");
  return l2(x.values(), y.values());
}

inline double psnr_from_rmse(double rmse) {
  if (rmse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(kPeak / rmse));
}

inline double psnr(std::span<const double> x, std::span<const double> y) {
  return psnr_from_rmse(l2(x, y));
}

inline double psnr(const Grid& x, const Grid& y) {
  require_same_shape(x, y, "psnr");
  return psnr(x.values(), y.values());
}

struct SsimOptions {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 1;
  std::size_t window = 8;
  double dynamic_range = kPeak;
};

// Mean SSIM over all window x window patches (stride 1, uniform weights,
// population moments), averaged over channels.
inline double ssim(std::span<const double> x, std::span<const double> y, const SsimOptions& o) {
  if (x.size() != y.size() || x.size() != o.channels * o.height * o.width)
    throw std::invalid_argument("ssim: input size does not match image geometry");
  if (o.window > o.height || o.window > o.width || o.window == 0)
    throw std::invalid_argument("ssim: window " + std::to_string(o.window) + " larger than " +
                                std::to_string(o.height) + "x" + std::to_string(o.width) + " image");
  const double c1 = (0.01 * o.dynamic_range) * (0.01 * o.dynamic_range);
  const double c2 = (0.03 * o.dynamic_range) * (0.03 * o.dynamic_range);
  const double n = static_cast<double>(o.window * o.window);
  const std::size_t plane = o.height * o.width;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < o.channels; ++c) {
    const double* xp = x.data() + c * plane;
    const double* yp = y.data() + c * plane;
    for (std::size_t r0 = 0; r0 + o.window <= o.height; ++r0) {
      for (std::size_t c0 = 0; c0 + o.window <= o.width; ++c0) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t i = 0; i < o.window; ++i) {
          for (std::size_t j = 0; j < o.window; ++j) {
            const double a = xp[(r0 + i) * o.width + c0 + j];
            const double b = yp[(r0 + i) * o.width + c0 + j];
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
          }
        }
        const double mx = sx / n, my = sy / n;
        const double vx = std::max(0.0, sxx / n - mx * mx);
        const double vy = std::max(0.0, syy / n - my * my);
        const double cxy = sxy / n - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Sample mean and unbiased covariance of the rows.
inline Moments moments(const Grid& samples) {
  const Grid m = samples.as_matrix();
  const auto n = static_cast<Eigen::Index>(m.rows());
  const auto d = static_cast<Eigen::Index>(m.cols());
  if (n < d + 1)
    throw std::invalid_argument("frechet: need at least dim+1 = " + std::to_string(d + 1) +
                                " samples, got " + std::to_string(n));
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      m.storage().data(), n, d);
  Moments out;
  out.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return out;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, double tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol * scale)
      throw std::domain_error("frechet: covariance not positive semi-definite (eigenvalue " +
                              std::to_string(ev[i]) + ")");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_a - mu_b||^2 + Tr(A + B - 2 (A^{1/2} B A^{1/2})^{1/2}); the trace term
// equals Tr((AB)^{1/2}) but only needs symmetric square roots.
inline double frechet_from_moments(const Moments& a, const Moments& b, double tol = 1e-8) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("frechet: dimension mismatch");
  const Eigen::MatrixXd sa = detail::psd_sqrt(a.cov, tol);
  const Eigen::MatrixXd inner = sa * b.cov * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -tol * scale)
      throw std::domain_error("frechet: product covariance not positive semi-definite");
    tr_sqrt += std::sqrt(std::max(0.0, ev));
  }
  const double dist = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

inline double frechet_distance(const Grid& set_a, const Grid& set_b) {
  return frechet_from_moments(moments(set_a), moments(set_b));
}

// Per-sample faithfulness numbers for one translated row vs. its source.
struct SampleMetrics {
  double l2 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

}  // namespace egsde::metrics
