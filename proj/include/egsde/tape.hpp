#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egsde/grid.hpp"

// Reverse-mode differentiation over a fixed set of row-wise primitives.
//
// Every value on the tape is a rank-2 grid with one sample per row. Row-wise
// primitives never mix rows, so the gradient of sum_b f(x_b) with respect to
// the stacked input is the stacked per-sample gradient. That is what lets the
// samplers push a whole batch of trajectories through one tape per step.
namespace egsde::ad {

enum class Op {
  leaf,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  matmul,       // X[B,in] * W[in,out]
  bias,         // X[B,n] + b[1,n]
  silu,
  tanh,
  sqrt,
  concat_cols,  // [A | B]
  reshape,
  row_sum,
  row_mean,
  sum,
  mean,
  row_dot,
  row_norm,
  low_pass,     // per-row box down-sample + nearest up-sample
  log_softmax,  // per row
  pick_col,
};

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct Node {
  Op op = Op::leaf;
  std::size_t a = kNone;
  std::size_t b = kNone;
  double scalar = 0.0;
  std::size_t p0 = 0, p1 = 0, p2 = 0, p3 = 0;
  bool needs_grad = false;
  Grid value;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = kNone;

  const Grid& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

namespace detail {

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline void check_same(const Grid& a, const Grid& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("tape ") + op + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Box average over factor x factor blocks, then nearest-neighbour upsampling,
// applied independently per row and per channel. The map is symmetric, so the
// same routine is its own adjoint.
inline void low_pass_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                          std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t factor) {
  const std::size_t plane = height * width;
  const std::size_t per_row = channels * plane;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = r * per_row + c * plane;
      for (std::size_t bh = 0; bh < height; bh += factor) {
        for (std::size_t bw = 0; bw < width; bw += factor) {
          double acc = 0.0;
          for (std::size_t i = 0; i < factor; ++i)
            for (std::size_t j = 0; j < factor; ++j) acc += in[base + (bh + i) * width + bw + j];
          acc *= inv;
          for (std::size_t i = 0; i < factor; ++i)
            for (std::size_t j = 0; j < factor; ++j) out[base + (bh + i) * width + bw + j] = acc;
        }
      }
    }
  }
}

}  // namespace detail

class Tape {
 public:
  Tape() { nodes_.reserve(64); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf the caller may differentiate with respect to.
  Var variable(Grid value) { return leaf(std::move(value), true); }
  // A leaf treated as constant (gradients never flow into it).
  Var constant(Grid value) { return leaf(std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Replaces a leaf's value; call replay() to refresh dependants.
  void set_leaf(Var v, Grid value) {
    Node& n = nodes_.at(v.id);
    if (n.op != Op::leaf) throw std::invalid_argument("tape: set_leaf on a non-leaf node");
    n.value = to_matrix(std::move(value));
  }

  // Recomputes every non-leaf node in recording order.
  void replay() {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op != Op::leaf) nodes_[i].value = forward(nodes_[i]);
  }

  Var record(Node n) {
    n.needs_grad = (n.a != kNone && nodes_[n.a].needs_grad) ||
                   (n.b != kNone && nodes_[n.b].needs_grad);
    n.value = forward(n);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  // Gradients of a scalar output with respect to each input. Inputs that the
  // output does not depend on receive zeros.
  std::vector<Grid> gradient(Var output, std::span<const Var> inputs) const {
    const Node& out = nodes_.at(output.id);
    if (out.value.size() != 1)
      throw std::invalid_argument("reverse_gradient: output is not scalar (shape " +
                                  shape_string(out.value.shape()) + ")");
    for (const Var& in : inputs)
      if (in.tape != this || in.id >= nodes_.size())
        throw std::invalid_argument("reverse_gradient: input is not on this tape");

    std::vector<Grid> adj(output.id + 1);
    adj[output.id] = Grid({1, 1}, 1.0);
    for (std::size_t k = output.id + 1; k-- > 0;) {
      if (adj[k].empty()) continue;
      const Node& n = nodes_[k];
      if (n.op == Op::leaf || !n.needs_grad) continue;
      backward(n, adj[k], adj);
    }

    std::vector<Grid> result;
    result.reserve(inputs.size());
    for (const Var& in : inputs) {
      const Grid& v = nodes_[in.id].value;
      if (in.id < adj.size() && !adj[in.id].empty())
        result.push_back(adj[in.id].reshaped(v.shape()));
      else
        result.push_back(Grid(v.shape(), 0.0));
    }
    return result;
  }

 private:
  friend struct Var;

  static Grid to_matrix(Grid g) {
    if (g.rank() == 2) return g;
    return g.as_matrix();
  }

  Var leaf(Grid value, bool needs_grad) {
    Node n;
    n.op = Op::leaf;
    n.needs_grad = needs_grad;
    n.value = to_matrix(std::move(value));
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Grid& val(std::size_t id) const { return nodes_[id].value; }

  Grid forward(const Node& n) const {
    using detail::check_same;
    switch (n.op) {
      case Op::leaf:
        return n.value;
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        check_same(x, y, "elementwise");
        Grid out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          switch (n.op) {
            case Op::add: out[i] = x[i] + y[i]; break;
            case Op::sub: out[i] = x[i] - y[i]; break;
            case Op::mul: out[i] = x[i] * y[i]; break;
            default: out[i] = x[i] / y[i]; break;
          }
        }
        return out;
      }
      case Op::scale:
      case Op::add_scalar:
      case Op::silu:
      case Op::tanh:
      case Op::sqrt: {
        const Grid& x = val(n.a);
        Grid out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          switch (n.op) {
            case Op::scale: out[i] = n.scalar * x[i]; break;
            case Op::add_scalar: out[i] = x[i] + n.scalar; break;
            case Op::silu: out[i] = detail::silu(x[i]); break;
            case Op::tanh: out[i] = std::tanh(x[i]); break;
            default: out[i] = std::sqrt(x[i]); break;
          }
        }
        return out;
      }
      case Op::matmul: {
        const Grid& x = val(n.a);
        const Grid& w = val(n.b);
        const std::size_t rows = x.rows(), in = x.cols(), outc = w.cols();
        if (w.rows() != in)
          throw std::invalid_argument("tape matmul: inner dimension mismatch " +
                                      shape_string(x.shape()) + " * " + shape_string(w.shape()));
        Grid out({rows, outc}, 0.0);
        const double* wp = w.storage().data();
        for (std::size_t r = 0; r < rows; ++r) {
          double* o = &out.at(r, 0);
          const double* xr = &x.storage()[r * in];
          for (std::size_t i = 0; i < in; ++i) {
            const double xi = xr[i];
            const double* wr = wp + i * outc;
            for (std::size_t j = 0; j < outc; ++j) o[j] += xi * wr[j];
          }
        }
        return out;
      }
      case Op::bias: {
        const Grid& x = val(n.a);
        const Grid& b = val(n.b);
        if (b.size() != x.cols()) throw std::invalid_argument("tape bias: width mismatch");
        Grid out = x;
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t j = 0; j < x.cols(); ++j) out.at(r, j) += b[j];
        return out;
      }
      case Op::concat_cols: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        if (x.rows() != y.rows()) throw std::invalid_argument("tape concat: row mismatch");
        const std::size_t p = x.cols(), q = y.cols();
        Grid out({x.rows(), p + q});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t j = 0; j < p; ++j) out.at(r, j) = x.at(r, j);
          for (std::size_t j = 0; j < q; ++j) out.at(r, p + j) = y.at(r, j);
        }
        return out;
      }
      case Op::reshape:
        return val(n.a).reshaped({n.p0, n.p1});
      case Op::row_sum:
      case Op::row_mean: {
        const Grid& x = val(n.a);
        Grid out({x.rows(), 1});
        const double k = n.op == Op::row_mean ? 1.0 / static_cast<double>(x.cols()) : 1.0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double acc = 0.0;
          for (double v : x.row_span(r)) acc += v;
          out[r] = acc * k;
        }
        return out;
      }
      case Op::sum:
      case Op::mean: {
        const Grid& x = val(n.a);
        double acc = 0.0;
        for (double v : x.values()) acc += v;
        if (n.op == Op::mean) acc /= static_cast<double>(x.size());
        return Grid::scalar(acc);
      }
      case Op::row_dot: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        check_same(x, y, "row_dot");
        Grid out({x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double acc = 0.0;
          for (std::size_t j = 0; j < x.cols(); ++j) acc += x.at(r, j) * y.at(r, j);
          out[r] = acc;
        }
        return out;
      }
      case Op::row_norm: {
        const Grid& x = val(n.a);
        Grid out({x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double acc = 0.0;
          for (double v : x.row_span(r)) acc += v * v;
          out[r] = std::sqrt(acc);
        }
        return out;
      }
      case Op::low_pass: {
        const Grid& x = val(n.a);
        Grid out(x.shape());
        detail::low_pass_rows(x.values(), out.values(), x.rows(), n.p0, n.p1, n.p2, n.p3);
        return out;
      }
      case Op::log_softmax: {
        const Grid& x = val(n.a);
        Grid out(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double m = -std::numeric_limits<double>::infinity();
          for (double v : x.row_span(r)) m = std::max(m, v);
          double z = 0.0;
          for (double v : x.row_span(r)) z += std::exp(v - m);
          const double lse = m + std::log(z);
          for (std::size_t j = 0; j < x.cols(); ++j) out.at(r, j) = x.at(r, j) - lse;
        }
        return out;
      }
      case Op::pick_col: {
        const Grid& x = val(n.a);
        if (n.p0 >= x.cols()) throw std::out_of_range("tape pick_col: column out of range");
        Grid out({x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) out[r] = x.at(r, n.p0);
        return out;
      }
    }
    throw std::logic_error("tape: unknown op");
  }

  void accumulate(std::vector<Grid>& adj, std::size_t id, const Grid& g) const {
    if (!nodes_[id].needs_grad) return;
    if (adj[id].empty()) {
      adj[id] = g.reshaped(nodes_[id].value.shape());
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) adj[id][i] += g[i];
  }

  void backward(const Node& n, const Grid& g, std::vector<Grid>& adj) const {
    switch (n.op) {
      case Op::leaf:
        return;
      case Op::add:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g);
        return;
      case Op::sub: {
        accumulate(adj, n.a, g);
        if (nodes_[n.b].needs_grad) {
          Grid neg = g;
          for (double& v : neg.values()) v = -v;
          accumulate(adj, n.b, neg);
        }
        return;
      }
      case Op::mul: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        if (nodes_[n.a].needs_grad) {
          Grid ga(x.shape());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
          accumulate(adj, n.a, ga);
        }
        if (nodes_[n.b].needs_grad) {
          Grid gb(y.shape());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * x[i];
          accumulate(adj, n.b, gb);
        }
        return;
      }
      case Op::div: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        if (nodes_[n.a].needs_grad) {
          Grid ga(x.shape());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / y[i];
          accumulate(adj, n.a, ga);
        }
        if (nodes_[n.b].needs_grad) {
          Grid gb(y.shape());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i] * x[i] / (y[i] * y[i]);
          accumulate(adj, n.b, gb);
        }
        return;
      }
      case Op::scale: {
        Grid ga = g;
        for (double& v : ga.values()) v *= n.scalar;
        accumulate(adj, n.a, ga);
        return;
      }
      case Op::add_scalar:
        accumulate(adj, n.a, g);
        return;
      case Op::silu:
      case Op::tanh:
      case Op::sqrt: {
        const Grid& x = val(n.a);
        const Grid& y = n.value;
        Grid ga(x.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (n.op) {
            case Op::silu: ga[i] = g[i] * detail::silu_grad(x[i]); break;
            case Op::tanh: ga[i] = g[i] * (1.0 - y[i] * y[i]); break;
            default: ga[i] = g[i] * 0.5 / y[i]; break;
          }
        }
        accumulate(adj, n.a, ga);
        return;
      }
      case Op::matmul: {
        const Grid& x = val(n.a);
        const Grid& w = val(n.b);
        const std::size_t rows = x.rows(), in = x.cols(), outc = w.cols();
        if (nodes_[n.a].needs_grad) {
          Grid gx({rows, in}, 0.0);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = &g.storage()[r * outc];
            for (std::size_t i = 0; i < in; ++i) {
              const double* wr = &w.storage()[i * outc];
              double acc = 0.0;
              for (std::size_t j = 0; j < outc; ++j) acc += gr[j] * wr[j];
              gx.at(r, i) = acc;
            }
          }
          accumulate(adj, n.a, gx);
        }
        if (nodes_[n.b].needs_grad) {
          Grid gw({in, outc}, 0.0);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = &g.storage()[r * outc];
            for (std::size_t i = 0; i < in; ++i) {
              const double xi = x.at(r, i);
              double* o = &gw.at(i, 0);
              for (std::size_t j = 0; j < outc; ++j) o[j] += xi * gr[j];
            }
          }
          accumulate(adj, n.b, gw);
        }
        return;
      }
      case Op::bias: {
        accumulate(adj, n.a, g);
        if (nodes_[n.b].needs_grad) {
          const Grid& b = val(n.b);
          Grid gb(b.shape(), 0.0);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(r, j);
          accumulate(adj, n.b, gb);
        }
        return;
      }
      case Op::concat_cols: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        const std::size_t p = x.cols(), q = y.cols();
        if (nodes_[n.a].needs_grad) {
          Grid ga(x.shape());
          for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t j = 0; j < p; ++j) ga.at(r, j) = g.at(r, j);
          accumulate(adj, n.a, ga);
        }
        if (nodes_[n.b].needs_grad) {
          Grid gb(y.shape());
          for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t j = 0; j < q; ++j) gb.at(r, j) = g.at(r, p + j);
          accumulate(adj, n.b, gb);
        }
        return;
      }
      case Op::reshape:
        accumulate(adj, n.a, g);
        return;
      case Op::row_sum:
      case Op::row_mean: {
        const Grid& x = val(n.a);
        const double k = n.op == Op::row_mean ? 1.0 / static_cast<double>(x.cols()) : 1.0;
        Grid ga(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t j = 0; j < x.cols(); ++j) ga.at(r, j) = g[r] * k;
        accumulate(adj, n.a, ga);
        return;
      }
      case Op::sum:
      case Op::mean: {
        const Grid& x = val(n.a);
        const double k = n.op == Op::mean ? g[0] / static_cast<double>(x.size()) : g[0];
        accumulate(adj, n.a, Grid(x.shape(), k));
        return;
      }
      case Op::row_dot: {
        const Grid& x = val(n.a);
        const Grid& y = val(n.b);
        if (nodes_[n.a].needs_grad) {
          Grid ga(x.shape());
          for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t j = 0; j < x.cols(); ++j) ga.at(r, j) = g[r] * y.at(r, j);
          accumulate(adj, n.a, ga);
        }
        if (nodes_[n.b].needs_grad) {
          Grid gb(y.shape());
          for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t j = 0; j < y.cols(); ++j) gb.at(r, j) = g[r] * x.at(r, j);
          accumulate(adj, n.b, gb);
        }
        return;
      }
      case Op::row_norm: {
        const Grid& x = val(n.a);
        const Grid& norm = n.value;
        Grid ga(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t j = 0; j < x.cols(); ++j)
            ga.at(r, j) = g[r] * x.at(r, j) / norm[r];
        accumulate(adj, n.a, ga);
        return;
      }
      case Op::low_pass: {
        const Grid& x = val(n.a);
        Grid ga(x.shape());
        detail::low_pass_rows(g.values(), ga.values(), x.rows(), n.p0, n.p1, n.p2, n.p3);
        accumulate(adj, n.a, ga);
        return;
      }
      case Op::log_softmax: {
        const Grid& y = n.value;
        Grid ga(y.shape());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double gs = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) gs += g.at(r, j);
          for (std::size_t j = 0; j < y.cols(); ++j)
            ga.at(r, j) = g.at(r, j) - std::exp(y.at(r, j)) * gs;
        }
        accumulate(adj, n.a, ga);
        return;
      }
      case Op::pick_col: {
        const Grid& x = val(n.a);
        Grid ga(x.shape(), 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) ga.at(r, n.p0) = g[r];
        accumulate(adj, n.a, ga);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

inline const Grid& Var::value() const { return tape->node(id).value; }

namespace detail {

inline Var unary(Op op, Var a, double scalar = 0.0) {
  Node n;
  n.op = op;
  n.a = a.id;
  n.scalar = scalar;
  return a.tape->record(std::move(n));
}

inline Var binary(Op op, Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("tape: operands live on different tapes");
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  return a.tape->record(std::move(n));
}

}  // namespace detail

inline Var operator+(Var a, Var b) { return detail::binary(Op::add, a, b); }
inline Var operator-(Var a, Var b) { return detail::binary(Op::sub, a, b); }
inline Var operator*(Var a, Var b) { return detail::binary(Op::mul, a, b); }
inline Var operator/(Var a, Var b) { return detail::binary(Op::div, a, b); }
inline Var scale(Var a, double c) { return detail::unary(Op::scale, a, c); }
inline Var add_scalar(Var a, double c) { return detail::unary(Op::add_scalar, a, c); }
inline Var matmul(Var x, Var w) { return detail::binary(Op::matmul, x, w); }
inline Var add_bias(Var x, Var b) { return detail::binary(Op::bias, x, b); }
inline Var silu(Var a) { return detail::unary(Op::silu, a); }
inline Var tanh(Var a) { return detail::unary(Op::tanh, a); }
inline Var sqrt(Var a) { return detail::unary(Op::sqrt, a); }
inline Var concat_cols(Var a, Var b) { return detail::binary(Op::concat_cols, a, b); }
inline Var row_sum(Var a) { return detail::unary(Op::row_sum, a); }
inline Var row_mean(Var a) { return detail::unary(Op::row_mean, a); }
inline Var sum(Var a) { return detail::unary(Op::sum, a); }
inline Var mean(Var a) { return detail::unary(Op::mean, a); }
inline Var row_dot(Var a, Var b) { return detail::binary(Op::row_dot, a, b); }
inline Var row_norm(Var a) { return detail::unary(Op::row_norm, a); }
inline Var log_softmax(Var a) { return detail::unary(Op::log_softmax, a); }

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size())
    throw std::invalid_argument("tape reshape: size mismatch");
  Node n;
  n.op = Op::reshape;
  n.a = a.id;
  n.p0 = rows;
  n.p1 = cols;
  return a.tape->record(std::move(n));
}

inline Var pick_col(Var a, std::size_t col) {
  Node n;
  n.op = Op::pick_col;
  n.a = a.id;
  n.p0 = col;
  return a.tape->record(std::move(n));
}

inline Var low_pass(Var a, std::size_t channels, std::size_t height, std::size_t width,
                    std::size_t factor) {
  if (channels * height * width != a.cols())
    throw std::invalid_argument("tape low_pass: row size does not match image geometry");
  if (factor == 0 || height % factor != 0 || width % factor != 0)
    throw std::invalid_argument("tape low_pass: dimensions not divisible by factor");
  Node n;
  n.op = Op::low_pass;
  n.a = a.id;
  n.p0 = channels;
  n.p1 = height;
  n.p2 = width;
  n.p3 = factor;
  return a.tape->record(std::move(n));
}

// Squared row norms and per-row cosine similarity, built from the primitives.
inline Var row_sqnorm(Var a) { return row_dot(a, a); }

inline Var row_cosine(Var a, Var b) { return row_dot(a, b) / (row_norm(a) * row_norm(b)); }

inline std::vector<Grid> reverse_gradient(Var output, std::span<const Var> inputs) {
  return output.tape->gradient(output, inputs);
}

inline std::vector<Grid> reverse_gradient(Var output, std::initializer_list<Var> inputs) {
  return output.tape->gradient(output, std::span<const Var>(inputs.begin(), inputs.size()));
}

}  // namespace egsde::ad
