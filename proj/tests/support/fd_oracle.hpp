#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "egsde/grid.hpp"

namespace egsde::testing {

// Central differences of a scalar function, one coordinate at a time.
inline Grid central_diff(const std::function<double(const Grid&)>& f, const Grid& x, double h = 1e-5) {
  Grid g(x.shape(), 0.0);
  Grid probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor): the error relative to the
// size of the reference gradient, so tiny components cannot blow it up.
inline double max_rel_error(const Grid& a, const Grid& b, double floor = 1e-8) {
  double num = 0.0, den = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace egsde::testing
