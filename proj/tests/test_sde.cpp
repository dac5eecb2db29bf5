#include <gtest/gtest.h>

#include <cmath>

#include "egsde/random.hpp"
#include "egsde/sde.hpp"

using namespace egsde;

TEST(VpSchedule, LinearBeta) {
  VpSchedule s;
  EXPECT_DOUBLE_EQ(s.beta(0.0), 0.1);
  EXPECT_DOUBLE_EQ(s.beta(1.0), 20.0);
  EXPECT_DOUBLE_EQ(s.beta(0.5), 0.1 + 0.5 * 19.9);
  EXPECT_THROW(s.beta(1.5), std::out_of_range);
  EXPECT_THROW(s.beta(-0.1), std::out_of_range);
}

TEST(VpSchedule, RejectsBadParameters) {
  EXPECT_THROW((VpSchedule{0.0, 20.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((VpSchedule{1.0, 0.5, 1.0}.validate()), std::invalid_argument);
}

TEST(PerturbationKernel, ClosedForm) {
  VpSchedule s;
  const auto k0 = perturbation_kernel(s, 0.0);
  EXPECT_EQ(k0.mean_coef, 1.0);
  EXPECT_EQ(k0.std, 0.0);
  // integral of beta on [0, 1] = 0.1 + 19.9 / 2 = 10.05
  const auto k1 = perturbation_kernel(s, 1.0);
  EXPECT_NEAR(k1.mean_coef, std::exp(-0.5 * 10.05), 1e-15);
  EXPECT_NEAR(k1.mean_coef, 0.0065716, 1e-7);
  EXPECT_NEAR(k1.std, std::sqrt(1.0 - std::exp(-10.05)), 1e-15);
  for (double t : {0.01, 0.3, 0.7}) {
    const auto k = perturbation_kernel(s, t);
    EXPECT_NEAR(k.mean_coef * k.mean_coef + k.variance(), 1.0, 1e-14) << t;
  }
}

TEST(PerturbationKernel, StdAccurateForTinyTimes) {
  // 1 - exp(-b) = b - b^2/2 + ..., b = 0.1 t + 9.95 t^2; naive 1 - exp loses
  // half the digits here.
  const double t = 1e-12, b = 0.1 * t + 9.95 * t * t;
  const auto k = perturbation_kernel(VpSchedule{}, t);
  EXPECT_NEAR(k.std, std::sqrt(b - 0.5 * b * b), 1e-21);
  EXPECT_GT(std::abs(std::sqrt(1.0 - std::exp(-b)) - k.std), 1e-14);
}

TEST(PerturbationKernel, ForwardSimulationMoments) {
  // Euler-Maruyama on the forward SDE from a point mass at 1.
  VpSchedule s;
  const int paths = 4000, steps = 2000;
  const double t_end = 0.5, h = t_end / steps;
  std::vector<double> x(paths, 1.0);
  RandomStream rs(11, 0);
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    for (double& v : x) v += s.drift_coef(t) * v * h + s.diffusion(t) * std::sqrt(h) * rs.normal();
  }
  double m = 0, m2 = 0;
  for (double v : x) m += v;
  m /= paths;
  for (double v : x) m2 += (v - m) * (v - m);
  const double sd = std::sqrt(m2 / (paths - 1));
  const auto k = perturbation_kernel(s, t_end);
  EXPECT_NEAR(m, k.mean_coef, 5.0 * k.std / std::sqrt(paths));
  EXPECT_NEAR(sd, k.std, 0.05 * k.std);
}

TEST(EmStep, MatchesFormulaWithoutNoise) {
  VpSchedule s;
  const Grid y = Grid::row({1.0, -2.0});
  const Grid score = Grid::row({0.5, 0.25});
  const Grid grad = Grid::row({0.1, -0.3});
  const Grid zero({1, 2}, 0.0);
  const double t = 0.4, h = 0.01;
  const Grid out = em_step(s, y, t, h, score, grad, zero);
  for (std::size_t i = 0; i < 2; ++i) {
    const double want = y[i] - (-0.5 * s.beta(t) * y[i] - s.beta(t) * (score[i] - grad[i])) * h;
    EXPECT_DOUBLE_EQ(out[i], want);
  }
}

TEST(EmStep, NoiseScalesWithDiffusion) {
  VpSchedule s;
  const Grid y({1, 1}, 0.0), z({1, 1}, 1.0);
  const double h = 0.04, t = 0.3;
  const Grid out = em_step(s, y, t, h, y, y, z);
  EXPECT_DOUBLE_EQ(out[0], std::sqrt(s.beta(t)) * std::sqrt(h));
}

TEST(EmStep, RejectsNonFiniteState) {
  VpSchedule s;
  Grid y = Grid::row({std::nan(""), 0.0});
  const Grid z({1, 2}, 0.0);
  EXPECT_THROW(em_step(s, y, 0.5, 0.01, z, z, z), NumericalError);
}

TEST(VpAncestralStep, RejectsTooLargeStep) {
  VpSchedule s;
  const Grid z({1, 1}, 0.0);
  EXPECT_THROW(vp_ancestral_step(s, z, 1.0, 0.06, z, z, z), std::invalid_argument);
}

TEST(VpAncestralStep, AgreesWithEmToFirstOrder) {
  VpSchedule s;
  const Grid y = Grid::row({0.7}), score = Grid::row({-0.4}), z({1, 1}, 0.0);
  for (double h : {1e-3, 1e-4}) {
    const double d = vp_ancestral_step(s, y, 0.5, h, score, z, z)[0] - em_step(s, y, 0.5, h, score, z, z)[0];
    EXPECT_LT(std::abs(d), 50.0 * h * h);
  }
}

TEST(GuidedEps, IsScoreMinusEnergyGradient) {
  const auto k = perturbation_kernel(VpSchedule{}, 0.3);
  const Grid eps = Grid::row({0.2, -1.0}), grad = Grid::row({3.0, 0.5});
  const Grid s = eps_to_score(guided_eps(eps, grad, k), k);
  const Grid plain = eps_to_score(eps, k);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(s[i], plain[i] - grad[i], 1e-12);
  EXPECT_THROW(eps_to_score(eps, perturbation_kernel(VpSchedule{}, 0.0)), std::invalid_argument);
}
