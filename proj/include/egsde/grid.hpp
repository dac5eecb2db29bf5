#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace egsde {

// Raised when a NaN/Inf shows up or an iterative procedure diverges.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. Rank-2 grids are read as (rows, cols);
// samplers and the tape keep one sample per row.
class Grid {
 public:
  Grid() = default;

  explicit Grid(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    validate_shape();
  }

  Grid(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_size(shape_) != data_.size())
      throw std::invalid_argument("grid: shape " + shape_string(shape_) + " holds " +
                                  std::to_string(shape_size(shape_)) + " values, got " +
                                  std::to_string(data_.size()));
  }

  static Grid scalar(double v) { return Grid({1, 1}, std::vector<double>{v}); }

  static Grid row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Grid({1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  Grid reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw std::invalid_argument("grid: cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    return Grid(std::move(shape), data_);
  }

  // View as (rows, product of remaining dims).
  Grid as_matrix() const { return reshaped({rows(), cols()}); }

  Grid row_copy(std::size_t r) const {
    auto s = row_span(r);
    return Grid({1, s.size()}, std::vector<double>(s.begin(), s.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Grid& other) const = default;

 private:
  void validate_shape() const {
    if (shape_.empty()) throw std::invalid_argument("grid: empty shape");
    for (auto d : shape_)
      if (d == 0) throw std::invalid_argument("grid: zero dimension in " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (a.size() != b.size() || a.rows() != b.rows())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

inline void require_finite(const Grid& g, const std::string& what) {
  if (!g.all_finite()) throw NumericalError(what + ": non-finite value");
}

// Stacks equally sized rows into a (n, cols) grid.
inline Grid stack_rows(const std::vector<Grid>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const std::size_t n = rows.front().size();
  std::vector<double> data;
  data.reserve(n * rows.size());
  for (const auto& r : rows) {
    if (r.size() != n) throw std::invalid_argument("stack_rows: ragged input");
    data.insert(data.end(), r.storage().begin(), r.storage().end());
  }
  return Grid({rows.size(), n}, std::move(data));
}

// Row-wise concatenation of matrices with equal column counts.
inline Grid concat_rows(const Grid& a, const Grid& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  std::vector<double> data(a.storage().begin(), a.storage().end());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Grid({a.rows() + b.rows(), a.cols()}, std::move(data));
}

inline Grid select_rows(const Grid& g, std::span<const std::size_t> idx) {
  const std::size_t c = g.cols();
  std::vector<double> data;
  data.reserve(idx.size() * c);
  for (auto i : idx) {
    auto r = g.row_span(i);
    data.insert(data.end(), r.begin(), r.end());
  }
  return Grid({idx.size(), c}, std::move(data));
}

inline double max_abs(const Grid& g) {
  double m = 0.0;
  for (double v : g.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace egsde
