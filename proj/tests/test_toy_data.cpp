#include <gtest/gtest.h>

#include <cmath>

#include "egsde/toy_data.hpp"

using namespace egsde;

namespace {

ToyDomainSpec image_spec() {
  ToyDomainSpec s;
  s.samples_per_domain = 300;
  s.coarse_std = 1.0;
  s.coarse_factor = 2;
  s.detail_std = 0.5;
  s.amplitudes = {1.0, 2.0};
  return s;
}

}  // namespace

TEST(ToyData, SameSeedSameSamples) {
  const auto a = make_toy_domains(image_spec(), 4);
  const auto b = make_toy_domains(image_spec(), 4);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_EQ(a[d].samples, b[d].samples);
    EXPECT_EQ(a[d].structure, b[d].structure);
  }
  EXPECT_NE(make_toy_domains(image_spec(), 5)[0].samples, a[0].samples);
}

TEST(ToyData, SharedStructureHasTheSameLawInEveryDomain) {
  auto spec = image_spec();
  spec.samples_per_domain = 2000;
  const auto doms = make_toy_domains(spec, 6);
  std::vector<double> a(doms[0].structure.begin(), doms[0].structure.end());
  std::vector<double> b(doms[1].structure.begin(), doms[1].structure.end());
  EXPECT_LT(ks_statistic(a, b), ks_critical_1pct(a.size(), b.size()));
}

TEST(ToyData, DomainsDifferOnlyInHighFrequencies) {
  // Component means of the two domains agree after an even block average.
  const auto spec = image_spec();
  const auto m0 = toy_mixture(spec, 0), m1 = toy_mixture(spec, 1);
  const LowPassFilter f{2, spec.geometry()};
  for (std::size_t k = 0; k < m0.components.size(); ++k) {
    const Grid a = low_pass(Grid::row(m0.components[k].mean), f);
    const Grid b = low_pass(Grid::row(m1.components[k].mean), f);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_NE(m0.components[k].mean, m1.components[k].mean);
  }
}

TEST(ToyData, SampleMomentsMatchTheMixture) {
  auto spec = image_spec();
  spec.samples_per_domain = 4000;
  spec.coarse_std = 0.0;
  spec.detail_std = 0.0;
  const auto doms = make_toy_domains(spec, 7);
  const auto& mix = doms[1].mixture;
  std::vector<double> mean(mix.dim(), 0.0);
  for (const auto& c : mix.components)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += c.weight * c.mean[k];
  const Grid& x = doms[1].samples;
  for (std::size_t k = 0; k < mean.size(); k += 9) {
    double m = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) m += x.at(r, k);
    m /= static_cast<double>(x.rows());
    EXPECT_NEAR(m, mean[k], 0.1) << "pixel " << k;
  }
}

TEST(ToyData, ThreeDomainsAndPoints) {
  auto spec = image_spec();
  spec.num_domains = 3;
  EXPECT_EQ(make_toy_domains(spec, 1).size(), 3u);
  ToyDomainSpec pts;
  pts.kind = ToyKind::points2d;
  pts.samples_per_domain = 50;
  const auto doms = make_toy_domains(pts, 1);
  EXPECT_EQ(doms[0].samples.cols(), 2u);
  EXPECT_EQ(doms[0].mixture.components.size(), pts.radii.size() * pts.spokes);
}

TEST(ToyData, InvalidSpecsAreRejected) {
  auto s = image_spec();
  s.num_domains = 4;
  EXPECT_THROW(make_toy_domains(s, 1), std::invalid_argument);
  s = image_spec();
  s.noise = 0.0;
  EXPECT_THROW(make_toy_domains(s, 1), std::invalid_argument);
  s = image_spec();
  s.amplitudes.clear();
  EXPECT_THROW(make_toy_domains(s, 1), std::invalid_argument);
  EXPECT_THROW(parse_toy_kind("cats"), std::invalid_argument);
}

TEST(KsStatistic, KnownValues) {
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 3}, {2, 4}), 0.5);
}
