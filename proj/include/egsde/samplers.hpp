#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "egsde/energy.hpp"
#include "egsde/extractors.hpp"
#include "egsde/grid.hpp"
#include "egsde/random.hpp"
#include "egsde/score_models.hpp"
#include "egsde/sde.hpp"

namespace egsde {

enum class SamplerKind { egsde_em, egsde_vp, sdedit, ilvr };

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::egsde_em: return "egsde_em";
    case SamplerKind::egsde_vp: return "egsde_vp";
    case SamplerKind::sdedit: return "sdedit";
    case SamplerKind::ilvr: return "ilvr";
  }
  return "?";
}

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "egsde_em" || s == "egsde") return SamplerKind::egsde_em;
  if (s == "egsde_vp") return SamplerKind::egsde_vp;
  if (s == "sdedit") return SamplerKind::sdedit;
  if (s == "ilvr") return SamplerKind::ilvr;
  throw std::invalid_argument("unknown sampler '" + s + "' (egsde_em | egsde_vp | sdedit | ilvr)");
}

struct TranslationConfig {
  double lambda_s = 500.0;
  double lambda_i = 2.0;
  double m_frac = 0.5;
  std::size_t steps = 500;
  std::size_t k_repeats = 1;
  std::uint64_t seed = 0;
  SamplerKind sampler = SamplerKind::egsde_em;
  Similarity sim_s = Similarity::cosine;
  Similarity sim_i = Similarity::neg_sq_l2;
  bool noise_free = false;
  std::size_t mc_samples = 1;
  std::optional<std::size_t> guidance_class;
  double guidance_lambda = 0.0;
  // Low-pass factor shared by the faithful expert and ILVR's refinement.
  std::size_t filter_factor = 4;
  std::size_t range_t = 20;
  // Retain every n-th state (plus both endpoints); 0 keeps endpoints only.
  std::size_t retain_every = 10;
  std::size_t threads = 0;  // 0 = hardware concurrency

  void validate() const {
    if (!(m_frac > 0.0 && m_frac <= 1.0))
      throw std::invalid_argument("TranslationConfig: m_frac must lie in (0, 1]");
    if (steps < 1) throw std::invalid_argument("TranslationConfig: steps must be >= 1");
    if (k_repeats < 1) throw std::invalid_argument("TranslationConfig: k must be >= 1");
    if (mc_samples < 1) throw std::invalid_argument("TranslationConfig: mc_samples must be >= 1");
    if (!(lambda_s >= 0.0) || !(lambda_i >= 0.0) || !(guidance_lambda >= 0.0))
      throw std::invalid_argument("TranslationConfig: weights must be >= 0");
  }

  EnergySpec energy() const {
    if (sampler == SamplerKind::sdedit || sampler == SamplerKind::ilvr) return {};
    EnergySpec e = EnergySpec::two_expert(lambda_s, lambda_i, sim_s, sim_i);
    e.mc_samples = mc_samples;
    e.noise_free = noise_free;
    if (guidance_class && guidance_lambda > 0.0)
      e.terms.push_back({ExpertKind::classifier_guidance, guidance_lambda, Similarity::cosine,
                         *guidance_class});
    return e;
  }
};

// Everything a sampler reads but never modifies.
struct TranslationModels {
  ScoreField score;
  const DomainClassifier* classifier = nullptr;
  ImageGeometry geometry;
  VpSchedule schedule;
};

struct RetainedState {
  std::size_t step = 0;  // global step index, 0 = start point of round 1
  double t = 0.0;
  Grid state;
};

// Per-step records for a batch. energy/grad_norm are [total_steps, B].
struct Trajectory {
  std::vector<double> times;           // s at each update
  std::vector<std::uint64_t> draw_ids;  // Monte Carlo draw index per update
  Grid energy;
  Grid grad_norm;
  std::vector<RetainedState> states;
  std::size_t rounds = 1;
  std::size_t steps_per_round = 0;
};

struct TranslationResult {
  Grid output;
  Trajectory trajectory;
};

namespace detail {

// One RandomStream pair per trajectory: lane 0 drives start/step noise, lane 1
// the Monte Carlo source draws. Keeping them apart means that switching the
// energy off never shifts the step noise.
struct TrajectoryStreams {
  std::vector<RandomStream> noise;
  std::vector<RandomStream> mc;

  TrajectoryStreams(std::uint64_t seed, std::size_t first_id, std::size_t rows) {
    for (std::size_t r = 0; r < rows; ++r) {
      RandomStream base(seed, first_id + r);
      noise.push_back(base.fork(0));
      mc.push_back(base.fork(1));
    }
  }
};

inline Grid gaussian_rows(std::vector<RandomStream>& streams, std::size_t cols) {
  Grid g({streams.size(), cols});
  for (std::size_t r = 0; r < streams.size(); ++r)
    for (double& v : g.row_span(r)) v = streams[r].normal();
  return g;
}

inline void check_state(const Grid& y, std::size_t round, std::size_t i, double s) {
  if (!y.all_finite())
    throw NumericalError("sampler: non-finite state in round " + std::to_string(round) +
                         " at step i=" + std::to_string(i) + " (s=" + std::to_string(s) + ")");
}

inline double row_norm(std::span<const double> v) {
  double a = 0.0;
  for (double x : v) a += x * x;
  return std::sqrt(a);
}

// Guided (or plain SDEdit) translation for a chunk of rows, with K repeats.
inline TranslationResult run_guided(const Grid& x0, const TranslationConfig& cfg,
                                    const TranslationModels& models, std::size_t first_id) {
  const Grid src = x0.as_matrix();
  const std::size_t rows = src.rows(), dim = src.cols();
  const EnergySpec spec = cfg.energy();
  const bool guided = spec.active();
  EnergyContext ctx{models.classifier, LowPassFilter{cfg.filter_factor, models.geometry},
                    models.schedule};
  if (guided) ctx.filter.validate();

  const double horizon = models.schedule.horizon;
  const double m_time = cfg.m_frac * horizon;
  const std::size_t n = cfg.steps;
  const double h = m_time / static_cast<double>(n);
  const auto start_kernel = perturbation_kernel(models.schedule, m_time);
  TrajectoryStreams streams(cfg.seed, first_id, rows);

  TranslationResult res;
  Trajectory& traj = res.trajectory;
  traj.rounds = cfg.k_repeats;
  traj.steps_per_round = n;
  const std::size_t total = n * cfg.k_repeats;
  traj.energy = Grid({total, rows}, 0.0);
  traj.grad_norm = Grid({total, rows}, 0.0);

  auto retain = [&](std::size_t step, double t, const Grid& y, bool force) {
    if (force || (cfg.retain_every > 0 && step % cfg.retain_every == 0))
      traj.states.push_back({step, t, y});
  };

  Grid y0 = src;
  Grid y;
  std::size_t global = 0;
  for (std::size_t round = 0; round < cfg.k_repeats; ++round) {
    y = perturb(y0, start_kernel, gaussian_rows(streams.noise, dim));
    retain(global, m_time, y, round == 0);
    for (std::size_t i = n; i >= 1; --i) {
      const double s = m_time * (static_cast<double>(i) / static_cast<double>(n));
      const auto kernel = perturbation_kernel(models.schedule, s);
      Grid grad(y.shape(), 0.0);
      if (guided) {
        traj.draw_ids.push_back(global);
        auto sources = draw_sources(src, kernel, spec, streams.mc);
        auto eval = evaluate_energy(y, s, spec, ctx, sources, true);
        grad = std::move(eval.gradient);
        for (std::size_t r = 0; r < rows; ++r) {
          traj.energy.at(global, r) = eval.value[r];
          traj.grad_norm.at(global, r) = row_norm(grad.row_span(r));
        }
      }
      const Grid score = models.score(y, kernel);
      const Grid z = i > 1 ? gaussian_rows(streams.noise, dim) : Grid(y.shape(), 0.0);
      y = cfg.sampler == SamplerKind::egsde_vp
              ? vp_ancestral_step(models.schedule, y, s, h, score, grad, z)
              : em_step(models.schedule, y, s, h, score, grad, z);
      check_state(y, round + 1, i, s);
      traj.times.push_back(s);
      ++global;
      retain(global, s - h, y, i == 1 && round + 1 == cfg.k_repeats);
    }
    y0 = y;
  }
  res.output = std::move(y);
  return res;
}

// ILVR: unconditional sampling from y_T ~ N(0, I) with the low-pass
// refinement y <- (y - LP(y)) + LP(x_t) after each update whose resulting
// time index j = i - 1 satisfies j >= range_t.
inline TranslationResult run_ilvr(const Grid& x0, const TranslationConfig& cfg,
                                  const TranslationModels& models, std::size_t first_id) {
  const Grid src = x0.as_matrix();
  const std::size_t rows = src.rows(), dim = src.cols();
  const LowPassFilter filter{cfg.filter_factor, models.geometry};
  filter.validate();
  const double horizon = models.schedule.horizon;
  const std::size_t n = cfg.steps;
  const double h = horizon / static_cast<double>(n);
  TrajectoryStreams streams(cfg.seed, first_id, rows);

  TranslationResult res;
  Trajectory& traj = res.trajectory;
  traj.steps_per_round = n;
  traj.energy = Grid({n, rows}, 0.0);
  traj.grad_norm = Grid({n, rows}, 0.0);

  Grid y = gaussian_rows(streams.noise, dim);
  traj.states.push_back({0, horizon, y});
  const Grid zero(y.shape(), 0.0);
  for (std::size_t i = n; i >= 1; --i) {
    const double s = horizon * (static_cast<double>(i) / static_cast<double>(n));
    const double t = horizon * (static_cast<double>(i - 1) / static_cast<double>(n));
    const Grid score = models.score(y, perturbation_kernel(models.schedule, s));
    const Grid z = i > 1 ? gaussian_rows(streams.noise, dim) : zero;
    y = em_step(models.schedule, y, s, h, score, zero, z);
    if (i - 1 >= cfg.range_t) {
      const Grid x_t = perturb(src, perturbation_kernel(models.schedule, t),
                               gaussian_rows(streams.mc, dim));
      const Grid lp_y = low_pass(y, filter);
      const Grid lp_x = low_pass(x_t, filter);
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = (y[k] - lp_y[k]) + lp_x[k];
    }
    check_state(y, 1, i, s);
    traj.times.push_back(s);
    const std::size_t step = n - i + 1;
    if (i == 1 || (cfg.retain_every > 0 && step % cfg.retain_every == 0))
      traj.states.push_back({step, t, y});
  }
  res.output = std::move(y);
  return res;
}

inline TranslationResult run_chunk(const Grid& x0, const TranslationConfig& cfg,
                                   const TranslationModels& models, std::size_t first_id) {
  return cfg.sampler == SamplerKind::ilvr ? run_ilvr(x0, cfg, models, first_id)
                                          : run_guided(x0, cfg, models, first_id);
}

// Row-wise concatenation of chunk results (trajectory grids are [steps, B]).
inline TranslationResult merge_chunks(std::vector<TranslationResult>& parts) {
  if (parts.size() == 1) return std::move(parts.front());
  TranslationResult out;
  std::vector<Grid> rows;
  for (auto& p : parts)
    for (std::size_t r = 0; r < p.output.rows(); ++r) rows.push_back(p.output.row_copy(r));
  out.output = stack_rows(rows);
  Trajectory& t = out.trajectory;
  const Trajectory& first = parts.front().trajectory;
  t.times = first.times;
  t.draw_ids = first.draw_ids;
  t.rounds = first.rounds;
  t.steps_per_round = first.steps_per_round;
  const std::size_t steps = first.energy.rows();
  auto join = [&](auto member) {
    std::size_t total_cols = 0;
    for (auto& p : parts) total_cols += (p.trajectory.*member).cols();
    Grid g({steps, total_cols});
    std::size_t off = 0;
    for (auto& p : parts) {
      const Grid& src = p.trajectory.*member;
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t c = 0; c < src.cols(); ++c) g.at(s, off + c) = src.at(s, c);
      off += src.cols();
    }
    return g;
  };
  t.energy = join(&Trajectory::energy);
  t.grad_norm = join(&Trajectory::grad_norm);
  for (std::size_t k = 0; k < first.states.size(); ++k) {
    std::vector<Grid> rs;
    for (auto& p : parts) {
      const Grid& st = p.trajectory.states[k].state;
      for (std::size_t r = 0; r < st.rows(); ++r) rs.push_back(st.row_copy(r));
    }
    t.states.push_back({first.states[k].step, first.states[k].t, stack_rows(rs)});
  }
  return out;
}

}  // namespace detail

// Translates every row of x0. Row r uses trajectory id first_id + r, so the
// result of a row never depends on batch size, chunking or thread count.
inline TranslationResult translate(const Grid& x0, const TranslationConfig& cfg,
                                   const TranslationModels& models, std::size_t first_id = 0) {
  cfg.validate();
  models.schedule.validate();
  if (models.score.empty()) throw std::invalid_argument("translate: no score field");
  const Grid src = x0.as_matrix();
  require_finite(src, "translate(x0)");
  if (src.cols() != models.geometry.size())
    throw std::invalid_argument("translate: sample size does not match data geometry");

  std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, src.rows());
  if (threads <= 1) return detail::run_chunk(src, cfg, models, first_id);

  const std::size_t per = (src.rows() + threads - 1) / threads;
  threads = (src.rows() + per - 1) / per;  // no empty chunks
  std::vector<TranslationResult> parts(threads);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    const std::size_t lo = w * per, hi = std::min(src.rows(), lo + per);
    pool.emplace_back([&, w, lo, hi] {
      try {
        std::vector<std::size_t> idx;
        for (std::size_t r = lo; r < hi; ++r) idx.push_back(r);
        parts[w] = detail::run_chunk(select_rows(src, idx), cfg, models, first_id + lo);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return detail::merge_chunks(parts);
}

// egsde_em or its ancestral VP variant (egsde_vp), with K = cfg.k_repeats.
inline TranslationResult egsde_translate(const Grid& x0, TranslationConfig cfg,
                                         const TranslationModels& models, std::size_t first_id = 0) {
  if (cfg.sampler != SamplerKind::egsde_vp) cfg.sampler = SamplerKind::egsde_em;
  return translate(x0, cfg, models, first_id);
}

// K rounds, each re-perturbing the previous output to time M
// while the energy keeps conditioning on the original x0.
inline TranslationResult egsde_repeat(const Grid& x0, TranslationConfig cfg,
                                      const TranslationModels& models, std::size_t first_id = 0) {
  return egsde_translate(x0, std::move(cfg), models, first_id);
}

inline TranslationResult sdedit_translate(const Grid& x0, TranslationConfig cfg,
                                          const TranslationModels& models,
                                          std::size_t first_id = 0) {
  cfg.sampler = SamplerKind::sdedit;
  return translate(x0, cfg, models, first_id);
}

inline TranslationResult ilvr_translate(const Grid& x0, TranslationConfig cfg,
                                        const TranslationModels& models, std::size_t first_id = 0) {
  cfg.sampler = SamplerKind::ilvr;
  return translate(x0, cfg, models, first_id);
}

}  // namespace egsde
