#include <gtest/gtest.h>

#include <cmath>

#include "egsde/random.hpp"
#include "egsde/score_models.hpp"
#include "egsde/toy_data.hpp"
#include "fd_oracle.hpp"

using namespace egsde;
using egsde::testing::central_diff;
using egsde::testing::max_rel_error;

namespace {

// 2x2 image, blocks of 2x2 (one block), detail along a fixed direction.
GaussianMixture structured_mixture() {
  GaussianMixture m;
  m.components.push_back({0.3, {0.5, -0.2, 0.1, 0.8}, {0.2, 0.2, 0.2, 0.2}, 0.7, 0.4});
  m.components.push_back({0.7, {-1.0, 0.3, 0.4, -0.5}, {0.1, 0.1, 0.1, 0.1}, 0.2, 1.1});
  m.blocks = BlockLayout{1, 2, 2, 2};
  m.detail = {1.0, -1.0, -1.0, 1.0};
  m.validate();
  return m;
}

}  // namespace

TEST(GmmScore, SingleGaussianClosedForm) {
  GaussianMixture m;
  m.components.push_back({1.0, {1.0, -2.0}, {0.5, 2.0}});
  const auto k = perturbation_kernel(VpSchedule{}, 0.2);
  const Grid y = Grid::row({0.3, 0.4});
  const Grid s = gmm_score(m, y, k);
  const double a = k.mean_coef, v2 = k.variance();
  EXPECT_NEAR(s[0], -(0.3 - a * 1.0) / (a * a * 0.5 + v2), 1e-12);
  EXPECT_NEAR(s[1], -(0.4 + a * 2.0) / (a * a * 2.0 + v2), 1e-12);
}

TEST(GmmScore, MatchesFiniteDifferencesOfLogDensity) {
  const auto mix = structured_mixture();
  RandomStream rs(4, 0);
  for (double t : {0.01, 0.1, 0.4, 0.9}) {
    const auto k = perturbation_kernel(VpSchedule{}, t);
    for (int p = 0; p < 5; ++p) {
      const Grid y = rs.gaussian({1, 4});
      auto f = [&](const Grid& q) { return gmm_log_density(mix, q, k)[0]; };
      EXPECT_LT(max_rel_error(gmm_score(mix, y, k), central_diff(f, y)), 1e-6) << "t=" << t;
    }
  }
}

TEST(GmmScore, ToyMixtureScoreMatchesFiniteDifferences) {
  ToyDomainSpec spec;
  spec.coarse_std = 3.0;
  spec.coarse_factor = 2;
  spec.detail_std = 1.0;
  const auto mix = toy_mixture(spec, 1);
  RandomStream rs(5, 0);
  const auto k = perturbation_kernel(VpSchedule{}, 0.3);
  const Grid y = mix.sample(1, rs);
  Grid yt = y;
  for (double& v : yt.values()) v = k.mean_coef * v + k.std * rs.normal();
  auto f = [&](const Grid& q) { return gmm_log_density(mix, q, k)[0]; };
  EXPECT_LT(max_rel_error(gmm_score(mix, yt, k), central_diff(f, yt, 1e-4)), 1e-6);
}

TEST(GmmScore, LogDensityMatchesDenseGaussian) {
  // One component; compare with an explicit covariance inverse in 2-D
  // (block of 2 pixels via a 1x1x2 image and factor... use 1x2x2 single block).
  GaussianMixture m;
  m.components.push_back({1.0, {0.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, 0.5, 0.25});
  m.blocks = BlockLayout{1, 2, 2, 2};
  m.detail = {1.0, 0.0, 0.0, -1.0};
  const auto k = perturbation_kernel(VpSchedule{}, 0.0);
  // C = I + 0.5 * 11^T + 0.25 p p^T
  double c[4][4];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) c[i][j] = (i == j) + 0.5 + 0.25 * m.detail[i] * m.detail[j];
  const Grid y = Grid::row({0.3, -0.1, 0.7, 0.2});
  // Solve C z = y by Gaussian elimination for the quadratic form, and log det.
  double a[4][5];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) a[i][j] = c[i][j];
    a[i][4] = y[i];
  }
  double logdet = 0.0;
  for (int i = 0; i < 4; ++i) {
    logdet += std::log(a[i][i]);
    for (int r = i + 1; r < 4; ++r) {
      const double f = a[r][i] / a[i][i];
      for (int q = i; q < 5; ++q) a[r][q] -= f * a[i][q];
    }
  }
  double z[4];
  for (int i = 3; i >= 0; --i) {
    z[i] = a[i][4];
    for (int q = i + 1; q < 4; ++q) z[i] -= a[i][q] * z[q];
    z[i] /= a[i][i];
  }
  double quad = 0.0;
  for (int i = 0; i < 4; ++i) quad += y[i] * z[i];
  const double want = -0.5 * quad - 0.5 * logdet - 2.0 * std::log(2.0 * M_PI);
  EXPECT_NEAR(gmm_log_density(m, y, k)[0], want, 1e-12);
}

TEST(GaussianMixture, ValidationCatchesBadInput) {
  GaussianMixture m;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.components.push_back({0.5, {0.0}, {1.0}});
  EXPECT_THROW(m.validate(), std::invalid_argument);  // weights sum to 0.5
  m.components[0].weight = 1.0;
  m.components[0].var[0] = 0.0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(NoisePredictor, ZeroTrainingStepsKeepInitialization) {
  RandomStream rs(1, 0);
  const Grid data = rs.gaussian({64, 2});
  ScoreTrainHyper h;
  h.epochs = 0;
  h.seed = 9;
  NoisePredictorArch arch{2, 2, 16, 8};
  auto res = train_noise_predictor(data, VpSchedule{}, h, arch);
  EXPECT_TRUE(res.model == NoisePredictor::init(res.model.arch, 9));
}

TEST(NoisePredictor, TrainingReducesDenoisingLoss) {
  // Two separated clusters in 2-D.
  RandomStream rs(2, 0);
  Grid data({512, 2});
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const double c = (r % 2) ? 2.0 : -2.0;
    data.at(r, 0) = c + 0.1 * rs.normal();
    data.at(r, 1) = -c + 0.1 * rs.normal();
  }
  ScoreTrainHyper h;
  h.epochs = 8;
  h.iterations_per_epoch = 50;
  h.batch = 128;
  h.seed = 4;
  NoisePredictorArch arch{2, 2, 32, 16};
  auto res = train_noise_predictor(data, VpSchedule{}, h, arch);
  ASSERT_EQ(res.epoch_loss.size(), 8u);
  EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
  const double before = dsm_loss(nullptr, data, VpSchedule{}, 2000, 1e-3, 77);
  const double after = dsm_loss(&res.model, data, VpSchedule{}, 2000, 1e-3, 77);
  EXPECT_LT(after, 0.9 * before);
}

TEST(NoisePredictor, TrainingIsDeterministic) {
  RandomStream rs(3, 0);
  const Grid data = rs.gaussian({64, 2});
  ScoreTrainHyper h;
  h.epochs = 2;
  h.iterations_per_epoch = 5;
  h.batch = 16;
  NoisePredictorArch arch{2, 1, 8, 4};
  auto a = train_noise_predictor(data, VpSchedule{}, h, arch);
  auto b = train_noise_predictor(data, VpSchedule{}, h, arch);
  EXPECT_TRUE(a.model == b.model);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(NoisePredictor, NetworkScoreIsMinusEpsOverSigma) {
  NoisePredictorArch arch{3, 1, 8, 4};
  auto net = NoisePredictor::init(arch, 1);
  RandomStream rs(6, 0);
  const Grid y = rs.gaussian({2, 3});
  const auto k = perturbation_kernel(VpSchedule{}, 0.5);
  const Grid s = ScoreField(net)(y, k);
  const Grid e = net.eps(y, 0.5);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_DOUBLE_EQ(s[i], -e[i] / k.std);
}
