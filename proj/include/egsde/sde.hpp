#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "egsde/grid.hpp"

namespace egsde {

// Linear variance-preserving schedule beta(t) = beta_min + t (beta_max - beta_min).
struct VpSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double horizon = 1.0;

  void validate() const {
    if (!(beta_min > 0.0) || !(beta_max > beta_min))
      throw std::invalid_argument("VpSchedule: need 0 < beta_min < beta_max");
    if (!(horizon > 0.0)) throw std::invalid_argument("VpSchedule: horizon must be positive");
  }

  void check_time(double t) const {
    if (!(t >= 0.0 && t <= horizon))
      throw std::out_of_range("VpSchedule: t=" + std::to_string(t) + " outside [0, " +
                              std::to_string(horizon) + "]");
  }

  double beta(double t) const {
    check_time(t);
    return beta_min + t * (beta_max - beta_min);
  }

  // Closed-form antiderivative of beta on [0, t].
  double integral(double t) const {
    check_time(t);
    return beta_min * t + 0.5 * (beta_max - beta_min) * t * t;
  }

  double drift_coef(double t) const { return -0.5 * beta(t); }
  double diffusion(double t) const { return std::sqrt(beta(t)); }
};

// q_{t|0}(y_t | y_0) = N(mean_coef * y_0, std^2 I).
struct PerturbationKernel {
  double t = 0.0;
  double mean_coef = 1.0;
  double std = 0.0;

  double variance() const { return std * std; }
};

inline PerturbationKernel perturbation_kernel(const VpSchedule& schedule, double t) {
  const double b = schedule.integral(t);
  PerturbationKernel k;
  k.t = t;
  k.mean_coef = std::exp(-0.5 * b);
  // -expm1(-b) keeps std accurate for tiny t.
  k.std = std::sqrt(-std::expm1(-b));
  return k;
}

inline Grid perturb(const Grid& x0, const PerturbationKernel& kernel, const Grid& noise) {
  require_same_shape(x0, noise, "perturb");
  Grid out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = kernel.mean_coef * x0[i] + kernel.std * noise[i];
  return out;
}

// Euler-Maruyama step of the energy-guided reverse SDE from s to s - h:
//   y_t = y_s - [f(y_s, s) - g(s)^2 (score - grad E)] h + g(s) sqrt(h) z
// with the VP drift f(y, s) = -beta(s) y / 2 and g(s) = sqrt(beta(s)).
inline Grid em_step(const VpSchedule& schedule, const Grid& y_s, double s, double h,
                    const Grid& score_val, const Grid& energy_grad, const Grid& noise) {
  if (!(h > 0.0)) throw std::invalid_argument("em_step: step size must be positive");
  require_same_shape(y_s, score_val, "em_step");
  require_same_shape(y_s, energy_grad, "em_step");
  require_same_shape(y_s, noise, "em_step");
  require_finite(y_s, "em_step(y_s)");
  require_finite(score_val, "em_step(score)");
  require_finite(energy_grad, "em_step(energy_grad)");
  require_finite(noise, "em_step(noise)");

  const double f = schedule.drift_coef(s);
  const double g = schedule.diffusion(s);
  const double g2 = g * g;
  const double noise_scale = g * std::sqrt(h);
  Grid out(y_s.shape());
  for (std::size_t i = 0; i < y_s.size(); ++i) {
    const double guided = score_val[i] - energy_grad[i];
    out[i] = y_s[i] - (f * y_s[i] - g2 * guided) * h + noise_scale * noise[i];
  }
  return out;
}

// Ancestral (DDPM-style) VP step from s to s - h:
//   y_t = (y_s + beta h (score - grad E)) / sqrt(1 - beta h) + sqrt(beta h) z
inline Grid vp_ancestral_step(const VpSchedule& schedule, const Grid& y_s, double s, double h,
                              const Grid& score_val, const Grid& energy_grad, const Grid& noise) {
  if (!(h > 0.0)) throw std::invalid_argument("vp_ancestral_step: step size must be positive");
  require_same_shape(y_s, score_val, "vp_ancestral_step");
  require_same_shape(y_s, energy_grad, "vp_ancestral_step");
  require_same_shape(y_s, noise, "vp_ancestral_step");
  const double bh = schedule.beta(s) * h;
  if (!(bh < 1.0))
    throw std::invalid_argument("vp_ancestral_step: beta(s)*h = " + std::to_string(bh) +
                                " must be < 1");
  require_finite(y_s, "vp_ancestral_step(y_s)");
  require_finite(score_val, "vp_ancestral_step(score)");
  require_finite(energy_grad, "vp_ancestral_step(energy_grad)");
  require_finite(noise, "vp_ancestral_step(noise)");

  const double pre = 1.0 / std::sqrt(1.0 - bh);
  const double noise_scale = std::sqrt(bh);
  Grid out(y_s.shape());
  for (std::size_t i = 0; i < y_s.size(); ++i) {
    const double guided = score_val[i] - energy_grad[i];
    out[i] = pre * (y_s[i] + bh * guided) + noise_scale * noise[i];
  }
  return out;
}

// score = -eps / sigma_t for a noise-prediction network.
inline Grid eps_to_score(const Grid& eps_val, const PerturbationKernel& kernel) {
  if (!(kernel.std > 0.0))
    throw std::invalid_argument("eps_to_score: sigma_t is zero (t = 0)");
  Grid out(eps_val.shape());
  for (std::size_t i = 0; i < eps_val.size(); ++i) out[i] = -eps_val[i] / kernel.std;
  return out;
}

inline Grid score_to_eps(const Grid& score, const PerturbationKernel& kernel) {
  Grid out(score.shape());
  for (std::size_t i = 0; i < score.size(); ++i) out[i] = -score[i] * kernel.std;
  return out;
}

// Guided noise prediction eps + sigma_t * grad E; through eps_to_score this is
// exactly score - grad E.
inline Grid guided_eps(const Grid& eps_val, const Grid& energy_grad,
                       const PerturbationKernel& kernel) {
  require_same_shape(eps_val, energy_grad, "guided_eps");
  Grid out(eps_val.shape());
  for (std::size_t i = 0; i < eps_val.size(); ++i)
    out[i] = eps_val[i] + kernel.std * energy_grad[i];
  return out;
}

}  // namespace egsde
