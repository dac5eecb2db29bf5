#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "egsde/grid.hpp"
#include "egsde/random.hpp"
#include "egsde/tape.hpp"

namespace egsde {

// Sinusoidal time features: sin/cos of 1000 t at geometrically spaced frequencies.
inline std::vector<double> time_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be even");
  const std::size_t half = dim / 2;
  std::vector<double> e(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    const double arg = 1000.0 * t * freq;
    e[k] = std::sin(arg);
    e[half + k] = std::cos(arg);
  }
  return e;
}

// One row per sample, each row the embedding of that sample's time.
inline Grid time_embedding_rows(std::span<const double> times, std::size_t dim) {
  Grid out({times.size(), dim});
  for (std::size_t r = 0; r < times.size(); ++r) {
    auto e = time_embedding(times[r], dim);
    std::copy(e.begin(), e.end(), out.row_span(r).begin());
  }
  return out;
}

inline Grid time_embedding_rows(double t, std::size_t rows, std::size_t dim) {
  std::vector<double> times(rows, t);
  return time_embedding_rows(times, dim);
}

struct DenseLayer {
  Grid weight;  // [in, out]
  Grid bias;    // [1, out]
};

// Fully connected stack with SiLU between layers. The last layer is linear.
class Mlp {
 public:
  Mlp() = default;

  Mlp(const std::vector<std::size_t>& widths, RandomStream& init) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output width");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      DenseLayer layer{Grid({in, out}), Grid({1, out}, 0.0)};
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& w : layer.weight.values()) w = sd * init.normal();
      layers_.push_back(std::move(layer));
    }
  }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t input_width() const { return layers_.front().weight.rows(); }
  std::size_t output_width() const { return layers_.back().weight.cols(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Flattened parameter list in (w0, b0, w1, b1, ...) order.
  std::vector<Grid*> parameters() {
    std::vector<Grid*> p;
    for (auto& l : layers_) {
      p.push_back(&l.weight);
      p.push_back(&l.bias);
    }
    return p;
  }
  std::vector<const Grid*> parameters() const {
    std::vector<const Grid*> p;
    for (const auto& l : layers_) {
      p.push_back(&l.weight);
      p.push_back(&l.bias);
    }
    return p;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
    return true;
  }

  bool operator==(const Mlp& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (!(layers_[i].weight == other.layers_[i].weight) ||
          !(layers_[i].bias == other.layers_[i].bias))
        return false;
    return true;
  }

 private:
  std::vector<DenseLayer> layers_;
};

// Parameters of an Mlp placed on a tape.
struct MlpBinding {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;

  std::vector<ad::Var> all() const {
    std::vector<ad::Var> v;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      v.push_back(weights[i]);
      v.push_back(biases[i]);
    }
    return v;
  }
};

inline MlpBinding bind(ad::Tape& tape, const Mlp& net, bool trainable) {
  MlpBinding b;
  for (const auto& l : net.layers()) {
    b.weights.push_back(trainable ? tape.variable(l.weight) : tape.constant(l.weight));
    b.biases.push_back(trainable ? tape.variable(l.bias) : tape.constant(l.bias));
  }
  return b;
}

// Runs layers [first, last) and returns the pre-activation of the final one
// unless activate_last is set.
inline ad::Var apply_layers(const MlpBinding& b, ad::Var x, std::size_t first, std::size_t last,
                            bool activate_last) {
  for (std::size_t l = first; l < last; ++l) {
    x = ad::add_bias(ad::matmul(x, b.weights[l]), b.biases[l]);
    if (l + 1 < last || activate_last) x = ad::silu(x);
  }
  return x;
}

inline ad::Var apply(const MlpBinding& b, ad::Var x) {
  return apply_layers(b, x, 0, b.weights.size(), false);
}

// Plain SGD with heavy-ball momentum: v <- mu v + g; p <- p - lr v.
class MomentumSgd {
 public:
  // weight_decay is decoupled from the gradient: p <- p - lr (v + wd p).
  MomentumSgd(double learning_rate, double momentum, double weight_decay = 0.0)
      : lr_(learning_rate), momentum_(momentum), wd_(weight_decay) {}

  void step(const std::vector<Grid*>& params, const std::vector<Grid>& grads) {
    if (velocity_.empty())
      for (const Grid* p : params) velocity_.emplace_back(p->shape(), 0.0);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Grid& p = *params[k];
      Grid& v = velocity_[k];
      const Grid& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        p[i] -= lr_ * (v[i] + wd_ * p[i]);
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  double wd_;
  std::vector<Grid> velocity_;
};

}  // namespace egsde
