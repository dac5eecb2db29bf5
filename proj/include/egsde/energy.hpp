#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egsde/extractors.hpp"
#include "egsde/grid.hpp"
#include "egsde/random.hpp"
#include "egsde/sde.hpp"
#include "egsde/tape.hpp"

namespace egsde {

enum class ExpertKind { domain_specific, domain_independent, classifier_guidance };
enum class Similarity { cosine, neg_sq_l2 };

inline const char* to_string(Similarity s) { return s == Similarity::cosine ? "cosine" : "neg_sq_l2"; }

inline Similarity parse_similarity(const std::string& s) {
  if (s == "cosine") return Similarity::cosine;
  if (s == "neg_sq_l2") return Similarity::neg_sq_l2;
  throw std::invalid_argument("unknown similarity '" + s + "' (expected cosine | neg_sq_l2)");
}

struct ExpertTerm {
  ExpertKind kind = ExpertKind::domain_specific;
  double weight = 0.0;
  Similarity similarity = Similarity::cosine;
  std::size_t target_class = 0;  // classifier_guidance only
};

struct EnergySpec {
  std::vector<ExpertTerm> terms;
  std::size_t mc_samples = 1;
  bool noise_free = false;

  // lambda_s * S_s(cosine) - lambda_i * S_i(neg_sq_l2) unless overridden.
  static EnergySpec two_expert(double lambda_s, double lambda_i,
                               Similarity sim_s = Similarity::cosine,
                               Similarity sim_i = Similarity::neg_sq_l2) {
    EnergySpec e;
    e.terms.push_back({ExpertKind::domain_specific, lambda_s, sim_s, 0});
    e.terms.push_back({ExpertKind::domain_independent, lambda_i, sim_i, 0});
    return e;
  }

  void validate() const {
    if (mc_samples < 1) throw std::invalid_argument("EnergySpec: mc_samples must be >= 1");
    for (const auto& t : terms)
      if (!(t.weight >= 0.0) || !std::isfinite(t.weight))
        throw std::invalid_argument("EnergySpec: term weights must be finite and >= 0");
  }

  bool active() const {
    for (const auto& t : terms)
      if (t.weight > 0.0) return true;
    return false;
  }

  bool needs_classifier() const {
    for (const auto& t : terms)
      if (t.weight > 0.0 && t.kind != ExpertKind::domain_independent) return true;
    return false;
  }
};

// What an energy evaluation can see besides its inputs.
struct EnergyContext {
  const DomainClassifier* classifier = nullptr;
  LowPassFilter filter;
  VpSchedule schedule;
};

namespace detail {

inline void require_nonzero_rows(const Grid& norms, const char* what) {
  for (double v : norms.values())
    if (!(v > 0.0))
      throw std::domain_error(std::string(what) + ": zero feature vector, cosine undefined");
}

// Per-row similarity between feature rows laid out as `positions` blocks of
// equal width. Cosine is averaged over positions; neg_sq_l2 sums over all.
inline ad::Var similarity(ad::Var fy, ad::Var fx, std::size_t positions, Similarity kind) {
  const std::size_t rows = fy.rows();
  if (fy.cols() != fx.cols() || fx.rows() != rows)
    throw std::invalid_argument("similarity: feature shape mismatch");
  if (kind == Similarity::neg_sq_l2) return ad::scale(ad::row_sqnorm(fy - fx), -1.0);
  const std::size_t width = fy.cols() / positions;
  auto py = ad::reshape(fy, rows * positions, width);
  auto px = ad::reshape(fx, rows * positions, width);
  auto ny = ad::row_norm(py);
  auto nx = ad::row_norm(px);
  require_nonzero_rows(ny.value(), "cosine similarity");
  require_nonzero_rows(nx.value(), "cosine similarity");
  auto cos = ad::row_dot(py, px) / (ny * nx);
  return ad::row_mean(ad::reshape(cos, rows, positions));
}

}  // namespace detail

// Domain-specific similarity S_s(y, x_t, t) per row.
inline Grid s_similarity(const Grid& y, const Grid& x_t, double t, const DomainClassifier& clf,
                         Similarity kind = Similarity::cosine) {
  require_same_shape(y, x_t, "s_similarity");
  ad::Tape tape;
  auto b = clf.bind_params(tape, false);
  const auto emb = time_embedding_rows(t, y.rows(), clf.arch.embed_dim);
  auto fy = clf.features(tape, b, tape.constant(y.as_matrix()), emb);
  auto fx = clf.features(tape, b, tape.constant(x_t.as_matrix()), emb);
  return detail::similarity(fy, fx, clf.arch.feature_positions(), kind).value();
}

// Cosine similarity of precomputed feature rows (positions blocks per row).
inline Grid feature_cosine(const Grid& fy, const Grid& fx, std::size_t positions = 1) {
  ad::Tape tape;
  return detail::similarity(tape.constant(fy.as_matrix()), tape.constant(fx.as_matrix()), positions,
                            Similarity::cosine)
      .value();
}

// Domain-independent similarity S_i(y, x_t) = -||LP(y) - LP(x_t)||^2 per row
// (or the cosine of the filtered images).
inline Grid i_similarity(const Grid& y, const Grid& x_t, const LowPassFilter& filter,
                         Similarity kind = Similarity::neg_sq_l2) {
  require_same_shape(y, x_t, "i_similarity");
  ad::Tape tape;
  auto ly = low_pass(tape.constant(y.as_matrix()), filter);
  auto lx = low_pass(tape.constant(x_t.as_matrix()), filter);
  return detail::similarity(ly, lx, 1, kind).value();
}

struct EnergyEvaluation {
  Grid value;     // [B, 1]
  Grid gradient;  // shape of y
};

// Perturbed sources x_s ~ q_{s|0}(. | x0): one draw per Monte Carlo sample,
// row r drawn from streams[r]. In noise-free mode the clean source is used.
inline std::vector<Grid> draw_sources(const Grid& x0, const PerturbationKernel& kernel,
                                      const EnergySpec& spec, std::span<RandomStream> streams) {
  const Grid xm = x0.as_matrix();
  if (spec.noise_free) return {xm};
  if (streams.size() != xm.rows())
    throw std::invalid_argument("draw_sources: need one stream per row");
  std::vector<Grid> out;
  for (std::size_t m = 0; m < spec.mc_samples; ++m) {
    Grid noise(xm.shape());
    for (std::size_t r = 0; r < xm.rows(); ++r)
      for (double& v : noise.row_span(r)) v = streams[r].normal();
    out.push_back(perturb(xm, kernel, noise));
  }
  return out;
}

// Whole-batch draw from a single stream.
inline std::vector<Grid> draw_sources(const Grid& x0, const PerturbationKernel& kernel,
                                      const EnergySpec& spec, RandomStream& stream) {
  const Grid xm = x0.as_matrix();
  if (spec.noise_free) return {xm};
  std::vector<Grid> out;
  for (std::size_t m = 0; m < spec.mc_samples; ++m)
    out.push_back(perturb(xm, kernel, stream.gaussian(xm.shape())));
  return out;
}

// E(y, x0, s) = sum over terms, averaged over the given perturbed sources:
//   domain_specific:    +lambda * S_s(y, x_s, s)
//   domain_independent: -lambda * S_i(y, x_s, s)
//   classifier_guidance: -lambda * log p_s(c | y)
// Zero-weight terms are skipped entirely.
inline EnergyEvaluation evaluate_energy(const Grid& y, double s, const EnergySpec& spec,
                                        const EnergyContext& ctx, const std::vector<Grid>& sources,
                                        bool with_gradient = true) {
  spec.validate();
  const Grid ym = y.as_matrix();
  const std::size_t rows = ym.rows();
  if (sources.empty()) throw std::invalid_argument("evaluate_energy: no source draws");
  for (const auto& src : sources) require_same_shape(ym, src, "evaluate_energy");

  EnergyEvaluation out{Grid({rows, 1}, 0.0), Grid(y.shape(), 0.0)};
  if (!spec.active()) return out;
  if (spec.needs_classifier() && ctx.classifier == nullptr)
    throw std::invalid_argument("evaluate_energy: classifier required by energy terms");

  ad::Tape tape;
  auto yv = tape.variable(ym);
  const double inv_m = 1.0 / static_cast<double>(sources.size());

  std::optional<DomainClassifier::Binding> clf_params;
  std::optional<ad::Var> fy;
  Grid emb;
  auto y_features = [&]() -> ad::Var {
    if (!fy) {
      clf_params = ctx.classifier->bind_params(tape, false);
      emb = time_embedding_rows(s, rows, ctx.classifier->arch.embed_dim);
      fy = ctx.classifier->features(tape, *clf_params, yv, emb);
    }
    return *fy;
  };

  std::optional<ad::Var> total;
  auto accumulate = [&](ad::Var term) { total = total ? *total + term : term; };

  for (const auto& term : spec.terms) {
    if (!(term.weight > 0.0)) continue;
    switch (term.kind) {
      case ExpertKind::domain_specific: {
        auto f = y_features();
        const std::size_t positions = ctx.classifier->arch.feature_positions();
        for (const auto& src : sources) {
          auto fx = ctx.classifier->features(tape, *clf_params, tape.constant(src), emb);
          accumulate(ad::scale(detail::similarity(f, fx, positions, term.similarity),
                               term.weight * inv_m));
        }
        break;
      }
      case ExpertKind::domain_independent: {
        auto ly = low_pass(yv, ctx.filter);
        for (const auto& src : sources) {
          auto lx = low_pass(tape.constant(src), ctx.filter);
          accumulate(
              ad::scale(detail::similarity(ly, lx, 1, term.similarity), -term.weight * inv_m));
        }
        break;
      }
      case ExpertKind::classifier_guidance: {
        if (term.target_class >= ctx.classifier->arch.num_domains)
          throw std::out_of_range("classifier guidance: target class out of range");
        auto f = y_features();
        auto logp = ad::pick_col(ad::log_softmax(ctx.classifier->logits_from_features(*clf_params, f)),
                                 term.target_class);
        accumulate(ad::scale(logp, -term.weight));
        break;
      }
    }
  }

  out.value = total->value();
  if (with_gradient) {
    auto grads = ad::reverse_gradient(ad::sum(*total), {yv});
    out.gradient = grads[0].reshaped(y.shape());
  }
  return out;
}

inline Grid energy_value(const Grid& y, const Grid& x0, double s, const EnergySpec& spec,
                         const EnergyContext& ctx, RandomStream& stream) {
  const auto kernel = perturbation_kernel(ctx.schedule, s);
  return evaluate_energy(y, s, spec, ctx, draw_sources(x0, kernel, spec, stream), false).value;
}

inline Grid energy_gradient(const Grid& y, const Grid& x0, double s, const EnergySpec& spec,
                            const EnergyContext& ctx, RandomStream& stream) {
  const auto kernel = perturbation_kernel(ctx.schedule, s);
  return evaluate_energy(y, s, spec, ctx, draw_sources(x0, kernel, spec, stream), true).gradient;
}

}  // namespace egsde
