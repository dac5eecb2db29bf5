#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "egsde/grid.hpp"
#include "egsde/mlp.hpp"
#include "egsde/random.hpp"
#include "egsde/sde.hpp"
#include "egsde/tape.hpp"

namespace egsde {

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> var;   // per dimension
  double coarse_var = 0.0;   // shared offset variance per block, see BlockLayout
  double detail_var = 0.0;   // variance of the coefficient on GaussianMixture::detail
};

// Partition of a channels x height x width row into factor x factor blocks.
// A component with coarse_var = e adds e * 1 1^T on every block, i.e. each
// block receives one common N(0, e) brightness offset.
struct BlockLayout {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t factor = 1;

  std::size_t size() const { return channels * height * width; }
  std::size_t block_count() const { return channels * (height / factor) * (width / factor); }
  std::size_t block_size() const { return factor * factor; }

  std::vector<std::size_t> block_index() const {
    if (factor == 0 || height % factor || width % factor)
      throw std::invalid_argument("BlockLayout: dimensions not divisible by factor");
    std::vector<std::size_t> idx(size());
    const std::size_t bh = height / factor, bw = width / factor;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t r = 0; r < height; ++r)
        for (std::size_t q = 0; q < width; ++q)
          idx[(c * height + r) * width + q] = (c * bh + r / factor) * bw + q / factor;
    return idx;
  }
};

struct GaussianMixture {
  std::vector<MixtureComponent> components;
  std::optional<BlockLayout> blocks;
  // One fixed direction p; a component with detail_var = c adds c p p^T.
  std::vector<double> detail;

  std::size_t dim() const { return components.empty() ? 0 : components.front().mean.size(); }

  void validate() const {
    if (components.empty()) throw std::invalid_argument("GaussianMixture: no components");
    double total = 0.0;
    std::vector<std::size_t> idx;
    if (blocks) {
      if (blocks->size() != dim()) throw std::invalid_argument("GaussianMixture: block layout size mismatch");
      idx = blocks->block_index();
    }
    for (const auto& c : components) {
      if (c.mean.size() != dim() || c.var.size() != dim())
        throw std::invalid_argument("GaussianMixture: inconsistent component dimensions");
      if (!(c.weight >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
      for (double v : c.var)
        if (!(v > 0.0)) throw std::invalid_argument("GaussianMixture: variances must be > 0");
      if (!(c.coarse_var >= 0.0)) throw std::invalid_argument("GaussianMixture: coarse_var must be >= 0");
      if (!(c.detail_var >= 0.0)) throw std::invalid_argument("GaussianMixture: detail_var must be >= 0");
      if (c.detail_var > 0.0 && detail.size() != dim())
        throw std::invalid_argument("GaussianMixture: detail_var needs a detail direction of size dim");
      if (c.coarse_var > 0.0) {
        if (!blocks) throw std::invalid_argument("GaussianMixture: coarse_var needs a block layout");
        std::vector<double> first(blocks->block_count(), -1.0);
        for (std::size_t d = 0; d < dim(); ++d) {
          double& f = first[idx[d]];
          if (f < 0.0) f = c.var[d];
          else if (f != c.var[d])
            throw std::invalid_argument("GaussianMixture: var must be constant within a block");
        }
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  }

  Grid sample(std::size_t n, RandomStream& stream) const {
    Grid out({n, dim()});
    const auto idx = blocks ? blocks->block_index() : std::vector<std::size_t>{};
    std::vector<double> offset(blocks ? blocks->block_count() : 0);
    for (std::size_t r = 0; r < n; ++r) {
      const double u = stream.uniform();
      double acc = 0.0;
      std::size_t k = components.size() - 1;
      for (std::size_t j = 0; j < components.size(); ++j) {
        acc += components[j].weight;
        if (u < acc) {
          k = j;
          break;
        }
      }
      const auto& c = components[k];
      for (std::size_t d = 0; d < dim(); ++d)
        out.at(r, d) = c.mean[d] + std::sqrt(c.var[d]) * stream.normal();
      if (c.coarse_var > 0.0) {
        for (double& o : offset) o = std::sqrt(c.coarse_var) * stream.normal();
        for (std::size_t d = 0; d < dim(); ++d) out.at(r, d) += offset[idx[d]];
      }
      if (c.detail_var > 0.0) {
        const double z = std::sqrt(c.detail_var) * stream.normal();
        for (std::size_t d = 0; d < dim(); ++d) out.at(r, d) += z * detail[d];
      }
    }
    return out;
  }
};

namespace detail {

// Per-component Gaussian pieces of the t-perturbed mixture. Within block b the
// covariance is A = u I + w 1 1^T with u = a^2 var + sigma^2 and w = a^2 coarse_var,
// whose inverse is (I - w/(u + n w) 1 1^T) / u. A detail direction adds
// v p p^T (v = a^2 detail_var), handled by Sherman-Morrison on top of A.
class PerturbedMixture {
 public:
  PerturbedMixture(const GaussianMixture& mix, const PerturbationKernel& kernel)
      : mix_(mix), a2_(kernel.mean_coef * kernel.mean_coef), a_(kernel.mean_coef),
        s2_(kernel.variance()), diff_(mix.dim()), grad_(mix.dim()), q_(mix.dim()) {
    if (mix.blocks) {
      idx_ = mix.blocks->block_index();
      sums_.resize(mix.blocks->block_count());
      n_ = static_cast<double>(mix.blocks->block_size());
    }
  }

  // log(weight_k) + log N(y; a m_k, C_k); caches C_k^{-1} (y - a m_k) for add_score().
  double log_term(std::size_t k, std::span<const double> y) {
    const auto& c = mix_.components[k];
    for (std::size_t d = 0; d < y.size(); ++d) diff_[d] = y[d] - a_ * c.mean[d];
    double logdet = block_inverse(c, diff_, grad_);
    double quad = 0.0;
    for (std::size_t d = 0; d < y.size(); ++d) quad += diff_[d] * grad_[d];
    if (c.detail_var > 0.0) {
      block_inverse(c, mix_.detail, q_);
      const double v = a2_ * c.detail_var;
      double gamma = 0.0, qd = 0.0;
      for (std::size_t d = 0; d < y.size(); ++d) {
        gamma += mix_.detail[d] * q_[d];
        qd += q_[d] * diff_[d];
      }
      const double f = v / (1.0 + v * gamma);
      quad -= f * qd * qd;
      logdet += std::log1p(v * gamma);
      for (std::size_t d = 0; d < y.size(); ++d) grad_[d] -= f * qd * q_[d];
    }
    return std::log(c.weight) - 0.5 * (quad + logdet);
  }

  // Adds resp * grad_y log N(y; a m_k, C_k) to out; call right after log_term(k, y).
  void add_score(double resp, std::span<double> out) const {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] -= resp * grad_[d];
  }

 private:
  // out = A^{-1} v; returns log det(2 pi A).
  double block_inverse(const MixtureComponent& c, std::span<const double> v, std::vector<double>& out) {
    const double w = a2_ * c.coarse_var;
    double logdet = 0.0;
    for (std::size_t d = 0; d < v.size(); ++d)
      logdet += std::log(2.0 * std::numbers::pi * (a2_ * c.var[d] + s2_));
    if (w > 0.0) {
      std::fill(sums_.begin(), sums_.end(), 0.0);
      for (std::size_t d = 0; d < v.size(); ++d) sums_[idx_[d]] += v[d];
    }
    std::vector<bool> seen(w > 0.0 ? sums_.size() : 0, false);
    for (std::size_t d = 0; d < v.size(); ++d) {
      const double u = a2_ * c.var[d] + s2_;
      double g = v[d];
      if (w > 0.0) {
        const std::size_t b = idx_[d];
        g -= w * sums_[b] / (u + n_ * w);
        if (!seen[b]) {
          seen[b] = true;
          logdet += std::log1p(n_ * w / u);
        }
      }
      out[d] = g / u;
    }
    return logdet;
  }

  const GaussianMixture& mix_;
  double a2_, a_, s2_;
  std::vector<double> diff_, grad_, q_;
  std::vector<std::size_t> idx_;
  std::vector<double> sums_;
  double n_ = 1.0;
};

inline double log_sum_exp(std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  return m + std::log(z);
}

}  // namespace detail

// log q_t(y) for the mixture pushed through the VP perturbation kernel.
inline Grid gmm_log_density(const GaussianMixture& mix, const Grid& y,
                            const PerturbationKernel& kernel) {
  if (y.cols() != mix.dim()) throw std::invalid_argument("gmm_log_density: dimension mismatch");
  Grid out({y.rows(), 1});
  detail::PerturbedMixture pm(mix, kernel);
  std::vector<double> logs(mix.components.size());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t k = 0; k < logs.size(); ++k) logs[k] = pm.log_term(k, y.row_span(r));
    out[r] = detail::log_sum_exp(logs);
  }
  return out;
}

// Exact score of the t-perturbed mixture; component k becomes
// N(a m_k, a^2 C_k + sigma^2 I).
inline Grid gmm_score(const GaussianMixture& mix, const Grid& y, const PerturbationKernel& kernel) {
  if (y.cols() != mix.dim()) throw std::invalid_argument("gmm_score: dimension mismatch");
  require_finite(y, "gmm_score(y)");
  Grid out(y.shape(), 0.0);
  detail::PerturbedMixture pm(mix, kernel);
  std::vector<double> logs(mix.components.size());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row_span(r);
    for (std::size_t k = 0; k < logs.size(); ++k) logs[k] = pm.log_term(k, yr);
    const double lse = detail::log_sum_exp(logs);
    auto o = out.row_span(r);
    for (std::size_t k = 0; k < logs.size(); ++k) {
      const double resp = std::exp(logs[k] - lse);
      if (resp < 1e-300) continue;
      pm.log_term(k, yr);
      pm.add_score(resp, o);
    }
  }
  return out;
}

struct NoisePredictorArch {
  std::size_t data_dim = 1;
  std::size_t hidden_layers = 4;
  std::size_t width = 128;
  std::size_t embed_dim = 32;
};

// eps(y, t): an Mlp over [y | time_embedding(t)].
struct NoisePredictor {
  NoisePredictorArch arch;
  Mlp net;

  static NoisePredictor init(const NoisePredictorArch& arch, std::uint64_t seed) {
    std::vector<std::size_t> widths{arch.data_dim + arch.embed_dim};
    for (std::size_t l = 0; l < arch.hidden_layers; ++l) widths.push_back(arch.width);
    widths.push_back(arch.data_dim);
    RandomStream init(seed, 0xC0FFEE);
    return NoisePredictor{arch, Mlp(widths, init)};
  }

  ad::Var forward(ad::Tape& tape, const MlpBinding& params, ad::Var y, const Grid& emb) const {
    return apply(params, ad::concat_cols(y, tape.constant(emb)));
  }

  Grid eps(const Grid& y, double t) const {
    if (y.cols() != arch.data_dim)
      throw std::invalid_argument("NoisePredictor: input width " + std::to_string(y.cols()) +
                                  " != " + std::to_string(arch.data_dim));
    ad::Tape tape;
    auto params = bind(tape, net, false);
    auto out = forward(tape, params, tape.constant(y.as_matrix()),
                       time_embedding_rows(t, y.rows(), arch.embed_dim));
    return out.value().reshaped(y.shape());
  }

  bool operator==(const NoisePredictor& o) const {
    return arch.data_dim == o.arch.data_dim && arch.hidden_layers == o.arch.hidden_layers &&
           arch.width == o.arch.width && arch.embed_dim == o.arch.embed_dim && net == o.net;
  }
};

inline Grid score_of(const NoisePredictor& model, const Grid& y, const PerturbationKernel& kernel) {
  if (!(kernel.std > 0.0)) throw std::invalid_argument("score_of: t = 0 has no noise scale");
  return eps_to_score(model.eps(y, kernel.t), kernel);
}

struct ScoreTrainHyper {
  std::size_t epochs = 20;
  std::size_t iterations_per_epoch = 100;
  std::size_t batch = 256;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double t_min = 1e-3;
  std::uint64_t seed = 0;
};

struct ScoreTrainResult {
  NoisePredictor model;
  std::vector<double> epoch_loss;  // mean DSM loss per epoch
};

namespace detail {

struct DsmBatch {
  Grid noisy;
  Grid noise;
  Grid emb;
};

inline DsmBatch make_dsm_batch(const Grid& data, const VpSchedule& schedule, std::size_t batch,
                               double t_min, std::size_t embed_dim, RandomStream& stream) {
  const std::size_t dim = data.cols();
  DsmBatch b{Grid({batch, dim}), Grid({batch, dim}), Grid({batch, embed_dim})};
  std::vector<double> times(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto idx = static_cast<std::size_t>(stream.next_u64() % data.rows());
    times[r] = t_min + (schedule.horizon - t_min) * stream.uniform();
    const auto k = perturbation_kernel(schedule, times[r]);
    for (std::size_t d = 0; d < dim; ++d) {
      const double z = stream.normal();
      b.noise.at(r, d) = z;
      b.noisy.at(r, d) = k.mean_coef * data.at(idx, d) + k.std * z;
    }
  }
  b.emb = time_embedding_rows(times, embed_dim);
  return b;
}

}  // namespace detail

// Mean of ||eps - eps_hat||^2 / D over fresh (x0, t, eps) draws.
inline double dsm_loss(const NoisePredictor* model, const Grid& data, const VpSchedule& schedule,
                       std::size_t samples, double t_min, std::uint64_t seed) {
  RandomStream stream(seed, 0xD5D5);
  const std::size_t embed = model ? model->arch.embed_dim : 2;
  auto b = detail::make_dsm_batch(data, schedule, samples, t_min, embed, stream);
  Grid pred(b.noise.shape(), 0.0);
  if (model) {
    ad::Tape tape;
    auto params = bind(tape, model->net, false);
    pred = model->forward(tape, params, tape.constant(b.noisy), b.emb).value();
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - b.noise[i]) * (pred[i] - b.noise[i]);
  return acc / static_cast<double>(pred.size());
}

// Denoising score matching with momentum SGD. Minibatches draw (x0, t, eps)
// from a stream seeded by hyper.seed, so training is reproducible bit for bit.
inline ScoreTrainResult train_noise_predictor(
    const Grid& data, const VpSchedule& schedule, const ScoreTrainHyper& hyper,
    const NoisePredictorArch& arch_in = {},
    const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.rows() == 0) throw std::invalid_argument("train_noise_predictor: empty dataset");
  schedule.validate();
  NoisePredictorArch arch = arch_in;
  arch.data_dim = data.cols();
  ScoreTrainResult result{NoisePredictor::init(arch, hyper.seed), {}};
  MomentumSgd opt(hyper.learning_rate, hyper.momentum);
  RandomStream stream(hyper.seed, 0x7EA1);
  auto params = result.model.net.parameters();

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t it = 0; it < hyper.iterations_per_epoch; ++it) {
      auto b = detail::make_dsm_batch(data, schedule, hyper.batch, hyper.t_min, arch.embed_dim,
                                      stream);
      ad::Tape tape;
      auto binding = bind(tape, result.model.net, true);
      auto pred = result.model.forward(tape, binding, tape.constant(b.noisy), b.emb);
      auto diff = pred - tape.constant(b.noise);
      auto loss = ad::mean(diff * diff);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw NumericalError("train_noise_predictor: loss diverged at epoch " +
                             std::to_string(epoch) + ", iteration " + std::to_string(it));
      auto vars = binding.all();
      auto grads = ad::reverse_gradient(loss, vars);
      opt.step(params, grads);
      epoch_loss += lv;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(hyper.iterations_per_epoch, 1));
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  if (!result.model.net.all_finite())
    throw NumericalError("train_noise_predictor: non-finite parameters after training");
  return result;
}

// A score s(y, t): either the exact score of a known mixture or a trained
// noise predictor read through eps_to_score.
class ScoreField {
 public:
  ScoreField() = default;
  explicit ScoreField(GaussianMixture mix) : impl_(std::move(mix)) {}
  explicit ScoreField(NoisePredictor net) : impl_(std::move(net)) {}

  Grid operator()(const Grid& y, const PerturbationKernel& kernel) const {
    if (const auto* mix = std::get_if<GaussianMixture>(&impl_)) return gmm_score(*mix, y, kernel);
    if (const auto* net = std::get_if<NoisePredictor>(&impl_)) return score_of(*net, y, kernel);
    throw std::logic_error("ScoreField: empty");
  }

  bool empty() const { return std::holds_alternative<std::monostate>(impl_); }
  bool analytic() const { return std::holds_alternative<GaussianMixture>(impl_); }

 private:
  std::variant<std::monostate, GaussianMixture, NoisePredictor> impl_;
};

}  // namespace egsde
