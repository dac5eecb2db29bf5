#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "egsde/grid.hpp"
#include "egsde/mlp.hpp"
#include "egsde/random.hpp"
#include "egsde/sde.hpp"
#include "egsde/tape.hpp"

namespace egsde {

// Layout of one sample row: channels x height x width, row-major.
struct ImageGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }

  // Point data of dimension d is a 1 x 1 x d "image".
  static ImageGeometry points(std::size_t dim) { return {1, 1, dim}; }
  bool operator==(const ImageGeometry&) const = default;
};

// Box-average down-sampling followed by nearest-neighbour up-sampling.
struct LowPassFilter {
  std::size_t factor = 1;
  ImageGeometry geometry;

  void validate() const {
    if (factor == 0) throw std::invalid_argument("LowPassFilter: factor must be positive");
    if (geometry.height % factor != 0 || geometry.width % factor != 0)
      throw std::invalid_argument("LowPassFilter: " + std::to_string(geometry.height) + "x" +
                                  std::to_string(geometry.width) + " not divisible by factor " +
                                  std::to_string(factor));
  }
};

inline ad::Var low_pass(ad::Var x, const LowPassFilter& filter) {
  filter.validate();
  return ad::low_pass(x, filter.geometry.channels, filter.geometry.height, filter.geometry.width,
                      filter.factor);
}

inline Grid low_pass(const Grid& x, const LowPassFilter& filter) {
  filter.validate();
  const Grid m = x.as_matrix();
  if (m.cols() != filter.geometry.size())
    throw std::invalid_argument("low_pass: sample size does not match filter geometry");
  Grid out(m.shape());
  ad::detail::low_pass_rows(m.values(), out.values(), m.rows(), filter.geometry.channels,
                            filter.geometry.height, filter.geometry.width, filter.factor);
  return out.reshaped(x.shape());
}

struct ClassifierArch {
  std::size_t data_dim = 2;
  std::size_t embed_dim = 32;
  std::size_t hidden_layers = 2;
  std::size_t width = 64;
  // Penultimate feature map, stored position-major: row = [pos0 C | pos1 C | ...].
  std::size_t feature_channels = 16;
  std::size_t feature_height = 1;
  std::size_t feature_width = 1;
  std::size_t num_domains = 2;
  // > 0: the trunk sees x - low_pass(x) instead of x, so content that survives
  // the filter (shared brightness layout) cannot move the features.
  std::size_t highpass_factor = 0;
  ImageGeometry input_geometry{};

  std::size_t feature_positions() const { return feature_height * feature_width; }
  std::size_t feature_size() const { return feature_channels * feature_positions(); }
};

// Time-dependent domain classifier. The trunk maps [x | emb(t)] to the
// penultimate feature map (SiLU activated); the head is one linear layer.
struct DomainClassifier {
  ClassifierArch arch;
  Mlp trunk;
  Mlp head;

  static DomainClassifier init(const ClassifierArch& arch, std::uint64_t seed) {
    if (arch.num_domains < 2) throw std::invalid_argument("DomainClassifier: need >= 2 domains");
    if (arch.highpass_factor > 0) {
      if (arch.input_geometry.size() != arch.data_dim)
        throw std::invalid_argument("DomainClassifier: input_geometry does not match data_dim");
      LowPassFilter{arch.highpass_factor, arch.input_geometry}.validate();
    }
    std::vector<std::size_t> widths{arch.data_dim + arch.embed_dim};
    for (std::size_t l = 0; l < arch.hidden_layers; ++l) widths.push_back(arch.width);
    widths.push_back(arch.feature_size());
    RandomStream init(seed, 0xC1A55);
    DomainClassifier c{arch, Mlp(widths, init), {}};
    c.head = Mlp({arch.feature_size(), arch.num_domains}, init);
    return c;
  }

  struct Binding {
    MlpBinding trunk;
    MlpBinding head;
  };

  Binding bind_params(ad::Tape& tape, bool trainable) const {
    return {bind(tape, trunk, trainable), bind(tape, head, trainable)};
  }

  ad::Var features(ad::Tape& tape, const Binding& b, ad::Var x, const Grid& emb) const {
    if (arch.highpass_factor > 0) x = x - low_pass(x, LowPassFilter{arch.highpass_factor, arch.input_geometry});
    auto in = ad::concat_cols(x, tape.constant(emb));
    return apply_layers(b.trunk, in, 0, b.trunk.weights.size(), true);
  }

  ad::Var logits_from_features(const Binding& b, ad::Var feats) const { return apply(b.head, feats); }

  bool operator==(const DomainClassifier& o) const {
    return trunk == o.trunk && head == o.head && arch.num_domains == o.arch.num_domains &&
           arch.feature_channels == o.arch.feature_channels &&
           arch.feature_height == o.arch.feature_height &&
           arch.feature_width == o.arch.feature_width &&
           arch.highpass_factor == o.arch.highpass_factor && arch.input_geometry == o.arch.input_geometry;
  }
};

inline void check_input(const DomainClassifier& clf, const Grid& x) {
  if (x.cols() != clf.arch.data_dim)
    throw std::invalid_argument("DomainClassifier: input width " + std::to_string(x.cols()) +
                                " != " + std::to_string(clf.arch.data_dim));
  require_finite(x, "DomainClassifier input");
}

// Penultimate activations, one row per sample ([B, H*W*C], position-major).
inline Grid domain_features(const DomainClassifier& clf, const Grid& x, double t) {
  check_input(clf, x);
  ad::Tape tape;
  auto b = clf.bind_params(tape, false);
  auto xm = x.as_matrix();
  return clf.features(tape, b, tape.constant(xm), time_embedding_rows(t, xm.rows(), clf.arch.embed_dim))
      .value();
}

inline Grid classifier_logits(const DomainClassifier& clf, const Grid& x, double t) {
  check_input(clf, x);
  ad::Tape tape;
  auto b = clf.bind_params(tape, false);
  auto xm = x.as_matrix();
  auto f = clf.features(tape, b, tape.constant(xm),
                        time_embedding_rows(t, xm.rows(), clf.arch.embed_dim));
  return clf.logits_from_features(b, f).value();
}

// log p_t(c | x), one value per row.
inline Grid classifier_log_prob(const DomainClassifier& clf, const Grid& x, double t,
                                std::size_t c) {
  if (c >= clf.arch.num_domains)
    throw std::out_of_range("classifier_log_prob: class " + std::to_string(c) + " >= " +
                            std::to_string(clf.arch.num_domains));
  check_input(clf, x);
  ad::Tape tape;
  auto b = clf.bind_params(tape, false);
  auto xm = x.as_matrix();
  auto f = clf.features(tape, b, tape.constant(xm),
                        time_embedding_rows(t, xm.rows(), clf.arch.embed_dim));
  return ad::pick_col(ad::log_softmax(clf.logits_from_features(b, f)), c).value();
}

struct ClassifierTrainHyper {
  std::size_t epochs = 20;
  std::size_t iterations_per_epoch = 50;
  std::size_t batch = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double t_min = 1e-3;
  std::uint64_t seed = 0;
};

struct ClassifierTrainResult {
  DomainClassifier model;
  std::vector<double> epoch_loss;
};

// Cross-entropy on inputs diffused to t ~ U[t_min, T]. Each minibatch row
// picks its domain uniformly, so unequal set sizes stay balanced.
inline ClassifierTrainResult train_domain_classifier(
    const std::vector<Grid>& domain_sets, const VpSchedule& schedule,
    const ClassifierTrainHyper& hyper, const ClassifierArch& arch_in,
    const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (domain_sets.size() < 2)
    throw std::invalid_argument("train_domain_classifier: need at least two domains");
  for (const auto& s : domain_sets)
    if (s.rows() == 0) throw std::invalid_argument("train_domain_classifier: empty domain set");
  schedule.validate();
  ClassifierArch arch = arch_in;
  arch.data_dim = domain_sets.front().cols();
  arch.num_domains = domain_sets.size();
  ClassifierTrainResult result{DomainClassifier::init(arch, hyper.seed), {}};
  MomentumSgd opt(hyper.learning_rate, hyper.momentum, hyper.weight_decay);
  RandomStream stream(hyper.seed, 0xC1A5);
  std::vector<Grid*> params = result.model.trunk.parameters();
  for (Grid* p : result.model.head.parameters()) params.push_back(p);
  const std::size_t dim = arch.data_dim;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t it = 0; it < hyper.iterations_per_epoch; ++it) {
      Grid x({hyper.batch, dim});
      Grid onehot({hyper.batch, arch.num_domains}, 0.0);
      std::vector<double> times(hyper.batch);
      for (std::size_t r = 0; r < hyper.batch; ++r) {
        const auto d = static_cast<std::size_t>(stream.next_u64() % domain_sets.size());
        const Grid& set = domain_sets[d];
        const auto idx = static_cast<std::size_t>(stream.next_u64() % set.rows());
        times[r] = hyper.t_min + (schedule.horizon - hyper.t_min) * stream.uniform();
        const auto k = perturbation_kernel(schedule, times[r]);
        for (std::size_t j = 0; j < dim; ++j)
          x.at(r, j) = k.mean_coef * set.at(idx, j) + k.std * stream.normal();
        onehot.at(r, d) = 1.0;
      }
      ad::Tape tape;
      auto b = result.model.bind_params(tape, true);
      auto f = result.model.features(tape, b, tape.constant(x),
                                     time_embedding_rows(times, arch.embed_dim));
      auto logp = ad::log_softmax(result.model.logits_from_features(b, f));
      auto loss = ad::scale(ad::mean(ad::row_sum(logp * tape.constant(onehot))), -1.0);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw NumericalError("train_domain_classifier: loss diverged at epoch " +
                             std::to_string(epoch) + ", iteration " + std::to_string(it));
      std::vector<ad::Var> vars = b.trunk.all();
      for (auto v : b.head.all()) vars.push_back(v);
      auto grads = ad::reverse_gradient(loss, vars);
      opt.step(params, grads);
      epoch_loss += lv;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(hyper.iterations_per_epoch, 1));
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

// Fraction of samples classified correctly after diffusing each to time t
// (t = 0 uses the clean inputs).
inline double classifier_accuracy(const DomainClassifier& clf, const std::vector<Grid>& domain_sets,
                                  const VpSchedule& schedule, double t, std::uint64_t seed) {
  const auto k = perturbation_kernel(schedule, t);
  std::size_t correct = 0, total = 0;
  for (std::size_t d = 0; d < domain_sets.size(); ++d) {
    RandomStream stream(seed, d);
    const Grid& set = domain_sets[d];
    Grid x = perturb(set.as_matrix(), k, stream.gaussian({set.rows(), set.cols()}));
    const Grid logits = classifier_logits(clf, x, t);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits.at(r, j) > logits.at(r, best)) best = j;
      correct += (best == d);
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace egsde
