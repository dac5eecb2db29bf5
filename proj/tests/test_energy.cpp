#include <gtest/gtest.h>

#include <cmath>

#include "egsde/energy.hpp"
#include "egsde/random.hpp"
#include "fd_oracle.hpp"

using namespace egsde;
using egsde::testing::central_diff;
using egsde::testing::max_rel_error;

namespace {

DomainClassifier small_classifier(std::size_t positions_h = 2) {
  ClassifierArch arch;
  arch.data_dim = 16;
  arch.width = 24;
  arch.embed_dim = 8;
  arch.feature_channels = 4;
  arch.feature_height = positions_h;
  arch.feature_width = 2;
  arch.input_geometry = {1, 4, 4};
  arch.highpass_factor = 2;
  return DomainClassifier::init(arch, 11);
}

EnergyContext context(const DomainClassifier* clf) {
  EnergyContext ctx;
  ctx.classifier = clf;
  ctx.filter = LowPassFilter{2, {1, 4, 4}};
  return ctx;
}

double row_sum_value(const Grid& y, double s, const EnergySpec& spec, const EnergyContext& ctx,
                     const std::vector<Grid>& src) {
  const Grid v = evaluate_energy(y, s, spec, ctx, src, false).value;
  double acc = 0.0;
  for (double x : v.values()) acc += x;
  return acc;
}

}  // namespace

TEST(Similarity, CosineOfParallelAndOppositeRows) {
  const Grid a = Grid::row({1.0, 2.0, 3.0, -1.0});
  Grid b = a;
  for (double& v : b.values()) v *= 2.5;
  EXPECT_NEAR(feature_cosine(a, b)[0], 1.0, 1e-15);
  for (double& v : b.values()) v = -v;
  EXPECT_NEAR(feature_cosine(a, b)[0], -1.0, 1e-15);
}

TEST(Similarity, CosineAveragesOverPositions) {
  // Two positions of width 2: first parallel (1), second orthogonal (0).
  const Grid a = Grid::row({1.0, 0.0, 1.0, 0.0});
  const Grid b = Grid::row({3.0, 0.0, 0.0, 2.0});
  EXPECT_NEAR(feature_cosine(a, b, 2)[0], 0.5, 1e-15);
}

TEST(Similarity, ZeroFeatureVectorIsAnError) {
  const Grid a = Grid::row({0.0, 0.0});
  const Grid b = Grid::row({1.0, 0.0});
  EXPECT_THROW(feature_cosine(a, b), std::domain_error);
}

TEST(Similarity, DomainIndependentIsMinusFilteredSquaredDistance) {
  RandomStream rs(1, 0);
  const Grid y = rs.gaussian({2, 16});
  const Grid x = rs.gaussian({2, 16});
  const LowPassFilter f{2, {1, 4, 4}};
  const Grid got = i_similarity(y, x, f);
  const Grid ly = low_pass(y, f), lx = low_pass(x, f);
  for (std::size_t r = 0; r < 2; ++r) {
    double d = 0.0;
    for (std::size_t k = 0; k < 16; ++k) d += (ly.at(r, k) - lx.at(r, k)) * (ly.at(r, k) - lx.at(r, k));
    EXPECT_NEAR(got[r], -d, 1e-12);
  }
}

TEST(Similarity, HighFrequencyChangesDoNotMoveDomainIndependentScore) {
  RandomStream rs(2, 0);
  const Grid y = rs.gaussian({1, 16});
  Grid y2 = y;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) y2[r * 4 + c] += ((r + c) % 2 ? 0.8 : -0.8);
  const Grid x = rs.gaussian({1, 16});
  const LowPassFilter f{2, {1, 4, 4}};
  EXPECT_NEAR(i_similarity(y, x, f)[0], i_similarity(y2, x, f)[0], 1e-12);
}

// Gradient checks with frozen perturbed sources so the energy is deterministic.
class EnergyGradient : public ::testing::TestWithParam<double> {};

TEST_P(EnergyGradient, CompositeMatchesFiniteDifferences) {
  const double s = GetParam();
  const auto clf = small_classifier();
  const auto ctx = context(&clf);
  RandomStream rs(3, static_cast<std::uint64_t>(s * 1000));
  for (auto spec : {EnergySpec::two_expert(3.0, 0.0), EnergySpec::two_expert(0.0, 2.0),
                    EnergySpec::two_expert(3.0, 2.0),
                    EnergySpec::two_expert(1.5, 0.7, Similarity::neg_sq_l2, Similarity::cosine)}) {
    spec.mc_samples = 2;
    for (int p = 0; p < 4; ++p) {
      const Grid y = rs.gaussian({2, 16});
      const Grid x0 = rs.gaussian({2, 16});
      const auto src = draw_sources(x0, perturbation_kernel(ctx.schedule, s), spec, rs);
      const Grid g = evaluate_energy(y, s, spec, ctx, src).gradient;
      auto f = [&](const Grid& q) { return row_sum_value(q, s, spec, ctx, src); };
      EXPECT_LT(max_rel_error(g, central_diff(f, y)), 1e-4) << "s=" << s;
    }
  }
}

TEST_P(EnergyGradient, ClassifierGuidanceMatchesFiniteDifferences) {
  const double s = GetParam();
  const auto clf = small_classifier(1);
  const auto ctx = context(&clf);
  EnergySpec spec;
  spec.terms.push_back({ExpertKind::classifier_guidance, 1.7, Similarity::cosine, 1});
  RandomStream rs(4, 0);
  const Grid y = rs.gaussian({3, 16});
  const std::vector<Grid> src{rs.gaussian({3, 16})};
  const Grid g = evaluate_energy(y, s, spec, ctx, src).gradient;
  auto f = [&](const Grid& q) { return row_sum_value(q, s, spec, ctx, src); };
  EXPECT_LT(max_rel_error(g, central_diff(f, y)), 1e-4);
  const Grid lp = classifier_log_prob(clf, y, s, 1);
  const Grid v = evaluate_energy(y, s, spec, ctx, src, false).value;
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(v[r], -1.7 * lp[r], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Times, EnergyGradient, ::testing::Values(0.05, 0.2, 0.4, 0.6, 0.9));

TEST(Energy, ZeroWeightsGiveZeroEnergyWithoutClassifier) {
  const auto ctx = context(nullptr);
  const Grid y({2, 16}, 0.3);
  const auto ev = evaluate_energy(y, 0.3, EnergySpec::two_expert(0.0, 0.0), ctx, {y});
  for (double v : ev.value.values()) EXPECT_EQ(v, 0.0);
  for (double v : ev.gradient.values()) EXPECT_EQ(v, 0.0);
}

TEST(Energy, MissingClassifierIsAnError) {
  const auto ctx = context(nullptr);
  const Grid y({1, 16}, 0.3);
  EXPECT_THROW(evaluate_energy(y, 0.3, EnergySpec::two_expert(1.0, 0.0), ctx, {y}),
               std::invalid_argument);
}

TEST(Energy, NoiseFreeUsesCleanSource) {
  EnergySpec spec = EnergySpec::two_expert(0.0, 1.0);
  spec.noise_free = true;
  spec.mc_samples = 3;
  RandomStream rs(5, 0);
  const Grid x0 = rs.gaussian({2, 16});
  const auto before = rs.counter();
  const auto src = draw_sources(x0, perturbation_kernel(VpSchedule{}, 0.5), spec, rs);
  ASSERT_EQ(src.size(), 1u);
  EXPECT_EQ(src[0], x0);
  EXPECT_EQ(rs.counter(), before);
}

TEST(Energy, PerturbedSourcesFollowTheKernel) {
  EnergySpec spec;
  spec.mc_samples = 1;
  const Grid x0({4000, 1}, 2.0);
  RandomStream rs(6, 0);
  const auto k = perturbation_kernel(VpSchedule{}, 0.4);
  const Grid xs = draw_sources(x0, k, spec, rs)[0];
  double m = 0.0, v = 0.0;
  for (double x : xs.values()) m += x;
  m /= 4000.0;
  for (double x : xs.values()) v += (x - m) * (x - m);
  v /= 3999.0;
  EXPECT_NEAR(m, 2.0 * k.mean_coef, 4.0 * k.std / std::sqrt(4000.0));
  EXPECT_NEAR(std::sqrt(v), k.std, 0.05 * k.std);
}

TEST(Energy, NegativeWeightIsRejected) {
  EnergySpec spec = EnergySpec::two_expert(-1.0, 0.0);
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}
