#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "egsde/extractors.hpp"
#include "egsde/grid.hpp"
#include "egsde/random.hpp"
#include "egsde/score_models.hpp"

namespace egsde {

enum class ToyKind { points2d, shapes8, shapes16 };

inline const char* to_string(ToyKind k) {
  switch (k) {
    case ToyKind::points2d: return "points2d";
    case ToyKind::shapes8: return "shapes8";
    case ToyKind::shapes16: return "shapes16";
  }
  return "?";
}

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "points2d") return ToyKind::points2d;
  if (s == "shapes8") return ToyKind::shapes8;
  if (s == "shapes16") return ToyKind::shapes16;
  throw std::invalid_argument("unknown dataset kind '" + s + "' (points2d | shapes8 | shapes16)");
}

// Shared structure (positions / ring radius) is drawn identically in every
// domain; only the style (texture / angular offset) depends on the domain.
//
// shapes: a bright square on a dark background at one of n x n positions plus a
// zero-mean texture (0 checkerboard, 1 horizontal stripes, 2 vertical
// stripes) scaled by one of `amplitudes`. Every texture averages to zero over
// any aligned 2x2 block, so an even low-pass factor removes it exactly.
//
// coarse_std > 0 adds one N(0, coarse_std^2) offset per coarse_factor block;
// this is low-frequency content and therefore shared structure too.
//
// detail_std > 0 adds a N(0, detail_std^2) coefficient on a fixed
// high-frequency direction (checkerboard flipped per quadrant). It is shared
// structure that no even low-pass filter sees.
//
// points2d: points near `spokes` directions on a ring of one of `radii`,
// rotated by domain * pi / spokes.
struct ToyDomainSpec {
  ToyKind kind = ToyKind::shapes8;
  std::size_t num_domains = 2;
  std::size_t samples_per_domain = 1000;
  double noise = 0.1;
  double background = -0.5;
  double foreground = 0.5;
  std::size_t positions_per_axis = 3;
  // Per-block brightness jitter (std of one offset shared by a coarse block).
  double coarse_std = 0.0;
  std::size_t coarse_factor = 4;
  double detail_std = 0.0;
  // Per-domain constant added to every pixel (missing entries are 0).
  std::vector<double> domain_offsets;
  std::vector<double> amplitudes{0.2, 0.6};
  std::size_t spokes = 4;
  std::vector<double> radii{1.0, 2.0};

  void validate() const {
    if (num_domains < 2 || num_domains > 3)
      throw std::invalid_argument("ToyDomainSpec: num_domains must be 2 or 3");
    if (samples_per_domain == 0) throw std::invalid_argument("ToyDomainSpec: no samples requested");
    if (!(noise > 0.0)) throw std::invalid_argument("ToyDomainSpec: noise must be > 0");
    if (!(coarse_std >= 0.0)) throw std::invalid_argument("ToyDomainSpec: coarse_std must be >= 0");
    if (!(detail_std >= 0.0)) throw std::invalid_argument("ToyDomainSpec: detail_std must be >= 0");
    if (kind != ToyKind::points2d && (positions_per_axis == 0 || positions_per_axis > 5))
      throw std::invalid_argument("ToyDomainSpec: positions_per_axis must be in 1..5");
    if (kind == ToyKind::points2d ? radii.empty() || spokes == 0 : amplitudes.empty())
      throw std::invalid_argument("ToyDomainSpec: empty structure/style levels");
  }

  ImageGeometry geometry() const {
    switch (kind) {
      case ToyKind::points2d: return ImageGeometry::points(2);
      case ToyKind::shapes8: return {1, 8, 8};
      case ToyKind::shapes16: return {1, 16, 16};
    }
    return {};
  }

  // Number of values of the shared factor.
  std::size_t structure_levels() const {
    return kind == ToyKind::points2d ? radii.size() * spokes : positions_per_axis * positions_per_axis;
  }
  std::size_t style_levels() const { return kind == ToyKind::points2d ? 1 : amplitudes.size(); }
};

struct ToyDomain {
  std::size_t label = 0;
  GaussianMixture mixture;
  Grid samples;                        // [n, D]
  std::vector<std::size_t> structure;  // shared-factor index per sample
};

namespace detail {

inline double texture(std::size_t domain, std::size_t r, std::size_t c) {
  switch (domain) {
    case 0: return ((r + c) % 2 == 0) ? 1.0 : -1.0;
    case 1: return (r % 2 == 0) ? 1.0 : -1.0;
    default: return (c % 2 == 0) ? 1.0 : -1.0;
  }
}

inline std::vector<double> shape_mean(const ToyDomainSpec& spec, std::size_t domain,
                                      std::size_t position, double amplitude) {
  const auto g = spec.geometry();
  const std::size_t side = g.height / 2, n = spec.positions_per_axis;
  const std::size_t stride = n > 1 ? (g.height - side) / (n - 1) : 0;
  const std::size_t r0 = (position / n) * stride, c0 = (position % n) * stride;
  const double offset = domain < spec.domain_offsets.size() ? spec.domain_offsets[domain] : 0.0;
  std::vector<double> m(g.size());
  for (std::size_t r = 0; r < g.height; ++r)
    for (std::size_t c = 0; c < g.width; ++c) {
      const bool inside = r >= r0 && r < r0 + side && c >= c0 && c < c0 + side;
      m[r * g.width + c] = (inside ? spec.foreground : spec.background) +
                           amplitude * texture(domain, r, c) + offset;
    }
  return m;
}

inline std::vector<double> detail_direction(const ImageGeometry& g) {
  std::vector<double> p(g.size());
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t r = 0; r < g.height; ++r)
      for (std::size_t q = 0; q < g.width; ++q) {
        const bool flip = (r < g.height / 2) != (q < g.width / 2);
        p[(c * g.height + r) * g.width + q] = texture(0, r, q) * (flip ? -1.0 : 1.0);
      }
  return p;
}

inline std::vector<double> point_mean(const ToyDomainSpec& spec, std::size_t domain,
                                      std::size_t structure) {
  const double radius = spec.radii[structure / spec.spokes];
  const double spoke = static_cast<double>(structure % spec.spokes);
  const double angle = 2.0 * std::numbers::pi * spoke / static_cast<double>(spec.spokes) +
                       std::numbers::pi * static_cast<double>(domain) /
                           static_cast<double>(spec.spokes);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

}  // namespace detail

// Component layout: structure-major, style-minor, equal weights.
inline GaussianMixture toy_mixture(const ToyDomainSpec& spec, std::size_t domain) {
  spec.validate();
  GaussianMixture mix;
  const std::size_t ns = spec.structure_levels(), na = spec.style_levels();
  const double w = 1.0 / static_cast<double>(ns * na);
  const std::size_t dim = spec.geometry().size();
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a) {
      auto mean = spec.kind == ToyKind::points2d
                      ? detail::point_mean(spec, domain, s)
                      : detail::shape_mean(spec, domain, s, spec.amplitudes[a]);
      const bool img = spec.kind != ToyKind::points2d;
      mix.components.push_back({w, std::move(mean), std::vector<double>(dim, spec.noise * spec.noise),
                                img ? spec.coarse_std * spec.coarse_std : 0.0,
                                img ? spec.detail_std * spec.detail_std : 0.0});
    }
  if (spec.kind != ToyKind::points2d) {
    const auto g = spec.geometry();
    if (spec.coarse_std > 0.0) mix.blocks = BlockLayout{g.channels, g.height, g.width, spec.coarse_factor};
    if (spec.detail_std > 0.0) mix.detail = detail::detail_direction(g);
  }
  mix.validate();
  return mix;
}

// Every domain draws its structure index from the same uniform law; the
// domain label only enters through the component means.
inline std::vector<ToyDomain> make_toy_domains(const ToyDomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t ns = spec.structure_levels(), na = spec.style_levels();
  const std::size_t dim = spec.geometry().size();
  std::vector<ToyDomain> out;
  std::vector<std::size_t> block_of;
  for (std::size_t d = 0; d < spec.num_domains; ++d) {
    ToyDomain dom{d, toy_mixture(spec, d), Grid({spec.samples_per_domain, dim}), {}};
    if (dom.mixture.blocks) block_of = dom.mixture.blocks->block_index();
    RandomStream structure(seed, 2 * d);
    RandomStream noise(seed, 2 * d + 1);
    for (std::size_t r = 0; r < spec.samples_per_domain; ++r) {
      const auto s = static_cast<std::size_t>(structure.uniform() * static_cast<double>(ns)) % ns;
      const auto a = static_cast<std::size_t>(structure.uniform() * static_cast<double>(na)) % na;
      const auto& comp = dom.mixture.components[s * na + a];
      for (std::size_t k = 0; k < dim; ++k) dom.samples.at(r, k) = comp.mean[k] + spec.noise * noise.normal();
      if (dom.mixture.blocks) {
        std::vector<double> offset(dom.mixture.blocks->block_count());
        for (double& o : offset) o = spec.coarse_std * structure.normal();
        for (std::size_t k = 0; k < dim; ++k) dom.samples.at(r, k) += offset[block_of[k]];
      }
      if (!dom.mixture.detail.empty()) {
        const double z = spec.detail_std * structure.normal();
        for (std::size_t k = 0; k < dim; ++k) dom.samples.at(r, k) += z * dom.mixture.detail[k];
      }
      dom.structure.push_back(s);
    }
    out.push_back(std::move(dom));
  }
  return out;
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

// c(alpha) * sqrt((n + m) / (n m)); c = 1.628 at alpha = 0.01.
inline double ks_critical_1pct(std::size_t n, std::size_t m) {
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return 1.628 * std::sqrt((nn + mm) / (nn * mm));
}

}  // namespace egsde
