#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace simba {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

class Tape;

/// Dense tensor of 64-bit reals, row-major, rank 1 or 2 (scalars use shape {1}).
/// Data is shared and treated as immutable once the tensor participates in an
/// operation; builders fill the buffer right after allocation and then hand the
/// tensor around by value.
struct Tensor {
  Shape shape;
  std::shared_ptr<double[]> buf;
  int node = -1;             // id on `tape`, -1 when not recorded
  const Tape* tape = nullptr;
  bool requires_grad = false;

  Tensor() = default;

  std::int64_t numel() const { return shape_numel(shape); }
  bool defined() const { return static_cast<bool>(buf); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.size() == 2 ? shape[1] : (shape.empty() ? 1 : shape[0]); }

  const double* data() const { return buf.get(); }
  double* data() { return buf.get(); }
  double operator[](std::int64_t i) const { return buf[i]; }
  double& operator[](std::int64_t i) { return buf[i]; }
  double at(int r, int c) const { return buf[static_cast<std::int64_t>(r) * cols() + c]; }

  double scalar() const {
    if (numel() != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape));
    return buf[0];
  }

  static Tensor empty(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.buf = std::shared_ptr<double[]>(new double[static_cast<size_t>(t.numel())]);
    return t;
  }
  static Tensor zeros(Shape s) {
    Tensor t = empty(std::move(s));
    std::fill(t.data(), t.data() + t.numel(), 0.0);
    return t;
  }
  static Tensor full(Shape s, double v) {
    Tensor t = empty(std::move(s));
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }
  static Tensor scalar_of(double v) { return full({1}, v); }
  static Tensor from(Shape s, std::initializer_list<double> vals) {
    Tensor t = empty(std::move(s));
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }
  static Tensor from_vec(Shape s, const std::vector<double>& vals) {
    Tensor t = empty(std::move(s));
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }

  Tensor clone() const {
    Tensor t = empty(shape);
    std::copy(data(), data() + numel(), t.data());
    return t;
  }

  /// Detached copy of the handle (same storage, no tape linkage).
  Tensor detached() const {
    Tensor t = *this;
    t.node = -1;
    t.tape = nullptr;
    t.requires_grad = false;
    return t;
  }

  std::vector<double> to_vec() const { return std::vector<double>(data(), data() + numel()); }
};

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

inline MapC as_mat(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
inline MapM as_mat(Tensor& t) { return MapM(t.data(), t.rows(), t.cols()); }

[[noreturn]] inline void shape_error(const char* prim, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(prim) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

}  // namespace detail

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scalar_mul,
  relu,
  tanh_fn,
  exp_fn,
  log_fn,
  square,
  sqrt_fn,
  sum,
  mean,
  concat,
  broadcast,
  slice,
  linear,      // fused x*W + b
  layer_norm,  // fused (x-mean)/sqrt(var+eps) * gain + bias over the last axis
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "elementwise-mul";
    case Op::scalar_mul: return "scalar-mul";
    case Op::relu: return "relu";
    case Op::tanh_fn: return "tanh";
    case Op::exp_fn: return "exp";
    case Op::log_fn: return "log";
    case Op::square: return "square";
    case Op::sqrt_fn: return "sqrt";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::concat: return "concat";
    case Op::broadcast: return "broadcast";
    case Op::slice: return "slice";
    case Op::linear: return "linear";
    case Op::layer_norm: return "layer_norm";
  }
  return "?";
}

/// Gradient map produced by Tape::backward. Indexed by tape node id; absent
/// entries mean the loss did not depend on that node (gradient is zero).
struct Gradients {
  std::vector<Tensor> by_node;

  /// Gradient of the loss with respect to `t`; exact zeros when untouched.
  Tensor of(const Tensor& t) const {
    if (t.node >= 0 && t.node < static_cast<int>(by_node.size()) && by_node[t.node].defined())
      return by_node[t.node];
    return Tensor::zeros(t.shape);
  }
};

/// Reverse-mode tape. Nodes are appended in execution order, which is a
/// topological order by construction; backward walks the list once in reverse.
/// A tape is single-threaded; independent tapes may run concurrently.
class Tape {
  struct Node {
    Op op = Op::leaf;
    std::array<int, 3> in{-1, -1, -1};
    std::array<Tensor, 3> saved;  // saved values needed by the adjoint
    Tensor out;
    double attr = 0.0;                   // scalar_mul factor / layer_norm eps
    int axis = 0, start = 0, len = 0;    // slice / concat split point
    bool needs_grad = false;
  };

 public:
  size_t size() const { return nodes_.size(); }

  /// Records `t` as a differentiable leaf on this tape.
  Tensor watch(const Tensor& t) { return make_leaf(t, true); }

  /// Records `t` as a constant leaf (no gradient is ever computed for it).
  Tensor constant(const Tensor& t) { return make_leaf(t, false); }

  Tensor matmul(const Tensor& a0, const Tensor& b0) {
    Tensor a = on_tape(a0), b = on_tape(b0);
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
      detail::shape_error("matmul", a.shape, b.shape);
    Tensor out = Tensor::empty({a.shape[0], b.shape[1]});
    detail::as_mat(out).noalias() = detail::as_mat(a) * detail::as_mat(b);
    return record(Op::matmul, {a, b}, std::move(out));
  }

  /// Fused affine map: x (B,in) * W (in,out) + b (out), broadcasting b over rows.
  Tensor linear(const Tensor& x0, const Tensor& w0, const Tensor& b0) {
    Tensor x = on_tape(x0), w = on_tape(w0), b = on_tape(b0);
    if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[0])
      detail::shape_error("linear", x.shape, w.shape);
    if (b.numel() != w.shape[1]) detail::shape_error("linear", w.shape, b.shape);
    Tensor out = Tensor::empty({x.shape[0], w.shape[1]});
    detail::as_mat(out).noalias() = detail::as_mat(x) * detail::as_mat(w);
    const int rows = out.shape[0], cols = out.shape[1];
    for (int r = 0; r < rows; ++r) {
      double* o = out.data() + static_cast<std::int64_t>(r) * cols;
      for (int c = 0; c < cols; ++c) o[c] += b[c];
    }
    return record(Op::linear, {x, w, b}, std::move(out));
  }

  Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(Op::add, a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(Op::sub, a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(Op::mul, a, b); }

  Tensor scalar_mul(const Tensor& x0, double c) {
    Tensor x = on_tape(x0);
    Tensor out = Tensor::empty(x.shape);
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = c * x[i];
    Tensor r = record(Op::scalar_mul, {x}, std::move(out));
    nodes_[r.node].attr = c;
    return r;
  }

  Tensor relu(const Tensor& x0) { return ew_unary(Op::relu, x0); }
  Tensor tanh(const Tensor& x0) { return ew_unary(Op::tanh_fn, x0); }
  Tensor exp(const Tensor& x0) { return ew_unary(Op::exp_fn, x0); }
  Tensor log(const Tensor& x0) { return ew_unary(Op::log_fn, x0); }
  Tensor square(const Tensor& x0) { return ew_unary(Op::square, x0); }
  Tensor sqrt(const Tensor& x0) { return ew_unary(Op::sqrt_fn, x0); }

  Tensor sum(const Tensor& x0) { return reduce(Op::sum, x0); }
  Tensor mean(const Tensor& x0) { return reduce(Op::mean, x0); }

  /// Concatenates along the last axis: {n}+{m} -> {n+m}, (B,n)+(B,m) -> (B,n+m).
  Tensor concat(const Tensor& a0, const Tensor& b0) {
    Tensor a = on_tape(a0), b = on_tape(b0);
    if (a.rank() != b.rank()) detail::shape_error("concat", a.shape, b.shape);
    Tensor out;
    if (a.rank() == 1) {
      out = Tensor::empty({a.shape[0] + b.shape[0]});
      std::copy(a.data(), a.data() + a.numel(), out.data());
      std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    } else {
      if (a.shape[0] != b.shape[0]) detail::shape_error("concat", a.shape, b.shape);
      const int rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
      out = Tensor::empty({rows, ca + cb});
      for (int r = 0; r < rows; ++r) {
        std::copy(a.data() + static_cast<std::int64_t>(r) * ca,
                  a.data() + static_cast<std::int64_t>(r + 1) * ca,
                  out.data() + static_cast<std::int64_t>(r) * (ca + cb));
        std::copy(b.data() + static_cast<std::int64_t>(r) * cb,
                  b.data() + static_cast<std::int64_t>(r + 1) * cb,
                  out.data() + static_cast<std::int64_t>(r) * (ca + cb) + ca);
      }
    }
    Tensor r = record(Op::concat, {a, b}, std::move(out));
    nodes_[r.node].len = (a.rank() == 1) ? a.shape[0] : a.shape[1];
    return r;
  }

  /// Broadcasts x to `target`: {1}->any, {n}/(1,n)->(B,n), (B,1)->(B,n).
  Tensor broadcast(const Tensor& x0, const Shape& target) {
    Tensor x = on_tape(x0);
    Tensor out = Tensor::empty(target);
    const std::int64_t n = out.numel();
    if (x.numel() == 1) {
      std::fill(out.data(), out.data() + n, x[0]);
    } else if (target.size() == 2 && (x.rank() == 1 || (x.rank() == 2 && x.shape[0] == 1)) &&
               x.cols() == target[1]) {
      for (int r = 0; r < target[0]; ++r)
        std::copy(x.data(), x.data() + target[1], out.data() + static_cast<std::int64_t>(r) * target[1]);
    } else if (target.size() == 2 && x.rank() == 2 && x.shape[0] == target[0] && x.shape[1] == 1) {
      for (int r = 0; r < target[0]; ++r)
        std::fill(out.data() + static_cast<std::int64_t>(r) * target[1],
                  out.data() + static_cast<std::int64_t>(r + 1) * target[1], x[r]);
    } else {
      detail::shape_error("broadcast", x.shape, target);
    }
    return record(Op::broadcast, {x}, std::move(out));
  }

  /// Contiguous slice along `axis` (0 = rows, 1 = cols for matrices).
  Tensor slice(const Tensor& x0, int axis, int start, int len) {
    Tensor x = on_tape(x0);
    if (axis < 0 || axis >= x.rank() || start < 0 || len < 1 || start + len > x.shape[axis])
      throw std::invalid_argument("slice: bad range [" + std::to_string(start) + "," +
                                  std::to_string(start + len) + ") axis " + std::to_string(axis) +
                                  " for shape " + shape_str(x.shape));
    Tensor out;
    if (x.rank() == 1) {
      out = Tensor::empty({len});
      std::copy(x.data() + start, x.data() + start + len, out.data());
    } else if (axis == 0) {
      out = Tensor::empty({len, x.shape[1]});
      std::copy(x.data() + static_cast<std::int64_t>(start) * x.shape[1],
                x.data() + static_cast<std::int64_t>(start + len) * x.shape[1], out.data());
    } else {
      out = Tensor::empty({x.shape[0], len});
      for (int r = 0; r < x.shape[0]; ++r)
        std::copy(x.data() + static_cast<std::int64_t>(r) * x.shape[1] + start,
                  x.data() + static_cast<std::int64_t>(r) * x.shape[1] + start + len,
                  out.data() + static_cast<std::int64_t>(r) * len);
    }
    Tensor r = record(Op::slice, {x}, std::move(out));
    Node& nd = nodes_[r.node];
    nd.axis = axis;
    nd.start = start;
    nd.len = len;
    return r;
  }

  /// Fused layer normalization over the last axis with learnable gain/bias.
  Tensor layer_norm(const Tensor& x0, const Tensor& gain0, const Tensor& bias0, double eps) {
    Tensor x = on_tape(x0), gain = on_tape(gain0), bias = on_tape(bias0);
    const int d = x.cols();
    if (gain.numel() != d || bias.numel() != d) detail::shape_error("layer_norm", x.shape, gain.shape);
    const int rows = x.rows();
    Tensor out = Tensor::empty(x.shape);
    Tensor stats = Tensor::empty({rows, 2});  // per-row mean and 1/sqrt(var+eps)
    for (int r = 0; r < rows; ++r) {
      const double* xr = x.data() + static_cast<std::int64_t>(r) * d;
      double* yr = out.data() + static_cast<std::int64_t>(r) * d;
      double m = 0;
      for (int c = 0; c < d; ++c) m += xr[c];
      m /= d;
      double v = 0;
      for (int c = 0; c < d; ++c) v += (xr[c] - m) * (xr[c] - m);
      v /= d;
      const double rstd = 1.0 / std::sqrt(v + eps);
      for (int c = 0; c < d; ++c) yr[c] = (xr[c] - m) * rstd * gain[c] + bias[c];
      stats[2 * r] = m;
      stats[2 * r + 1] = rstd;
    }
    Tensor r = record(Op::layer_norm, {x, gain, bias}, std::move(out));
    nodes_[r.node].attr = eps;
    stats_.push_back(std::move(stats));
    stats_node_.push_back(r.node);
    return r;
  }

  /// Generic dispatcher over the primitive set. Conventions: scalar-mul takes
  /// the factor as a 1-element second input; broadcast takes a shape template
  /// as second input (values ignored); slice uses the (axis,start,len) overload.
  Tensor apply(Op kind, const std::vector<Tensor>& inputs) {
    switch (kind) {
      case Op::matmul: need(kind, inputs, 2); return matmul(inputs[0], inputs[1]);
      case Op::add: need(kind, inputs, 2); return add(inputs[0], inputs[1]);
      case Op::sub: need(kind, inputs, 2); return sub(inputs[0], inputs[1]);
      case Op::mul: need(kind, inputs, 2); return mul(inputs[0], inputs[1]);
      case Op::scalar_mul: need(kind, inputs, 2); return scalar_mul(inputs[0], inputs[1].scalar());
      case Op::relu: need(kind, inputs, 1); return relu(inputs[0]);
      case Op::tanh_fn: need(kind, inputs, 1); return tanh(inputs[0]);
      case Op::exp_fn: need(kind, inputs, 1); return exp(inputs[0]);
      case Op::log_fn: need(kind, inputs, 1); return log(inputs[0]);
      case Op::square: need(kind, inputs, 1); return square(inputs[0]);
      case Op::sqrt_fn: need(kind, inputs, 1); return sqrt(inputs[0]);
      case Op::sum: need(kind, inputs, 1); return sum(inputs[0]);
      case Op::mean: need(kind, inputs, 1); return mean(inputs[0]);
      case Op::concat: need(kind, inputs, 2); return concat(inputs[0], inputs[1]);
      case Op::broadcast: need(kind, inputs, 2); return broadcast(inputs[0], inputs[1].shape);
      case Op::linear: need(kind, inputs, 3); return linear(inputs[0], inputs[1], inputs[2]);
      default:
        throw std::invalid_argument(std::string("apply: kind ") + op_name(kind) +
                                    " needs its dedicated overload");
    }
  }
  Tensor apply(Op kind, const std::vector<Tensor>& inputs, int axis, int start, int len) {
    if (kind != Op::slice) throw std::invalid_argument("apply: ranged overload is for slice");
    need(kind, inputs, 1);
    return slice(inputs[0], axis, start, len);
  }

  /// Reverse pass from a scalar loss. Visits each node exactly once, skipping
  /// subgraphs that cannot reach a watched leaf.
  Gradients backward(const Tensor& loss) const {
    if (loss.tape != this || loss.node < 0)
      throw std::invalid_argument("backward: loss is not on this tape");
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape));
    Gradients g;
    g.by_node.resize(nodes_.size());
    g.by_node[loss.node] = Tensor::full(loss.shape, 1.0);
    for (int id = loss.node; id >= 0; --id) {
      const Node& n = nodes_[id];
      if (!g.by_node[id].defined() || n.op == Op::leaf || !n.needs_grad) continue;
      propagate(n, id, g);
    }
    return g;
  }

 private:
  static void need(Op kind, const std::vector<Tensor>& in, size_t n) {
    if (in.size() != n)
      throw std::invalid_argument(std::string("apply: ") + op_name(kind) + " expects " +
                                  std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  }

  Tensor make_leaf(const Tensor& t, bool grad) {
    Node n;
    n.op = Op::leaf;
    n.needs_grad = grad;
    Tensor out = t;
    out.node = static_cast<int>(nodes_.size());
    out.tape = this;
    out.requires_grad = grad;
    n.out = out;
    nodes_.push_back(std::move(n));
    return out;
  }

  /// Tensors from outside (or from another tape) enter as leaves. Foreign
  /// tape handles are treated as constants: gradients never cross tapes.
  Tensor on_tape(const Tensor& t) {
    if (t.tape == this && t.node >= 0) return t;
    return make_leaf(t, t.tape == nullptr && t.requires_grad);
  }

  Tensor record(Op op, std::initializer_list<Tensor> inputs, Tensor&& value) {
    Node n;
    n.op = op;
    int k = 0;
    for (const Tensor& t : inputs) {
      n.in[k] = t.node;
      n.saved[k] = t;
      n.needs_grad = n.needs_grad || nodes_[t.node].needs_grad;
      ++k;
    }
    Tensor out = std::move(value);
    out.node = static_cast<int>(nodes_.size());
    out.tape = this;
    out.requires_grad = n.needs_grad;
    n.out = out;
    nodes_.push_back(std::move(n));
    return out;
  }

  Tensor ew_binary(Op op, const Tensor& a0, const Tensor& b0) {
    Tensor a = on_tape(a0), b = on_tape(b0);
    if (a.shape != b.shape) detail::shape_error(op_name(op), a.shape, b.shape);
    Tensor out = Tensor::empty(a.shape);
    const std::int64_t n = out.numel();
    switch (op) {
      case Op::add: for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i]; break;
      case Op::sub: for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i]; break;
      default:      for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i]; break;
    }
    return record(op, {a, b}, std::move(out));
  }

  Tensor ew_unary(Op op, const Tensor& x0) {
    Tensor x = on_tape(x0);
    Tensor out = Tensor::empty(x.shape);
    const std::int64_t n = x.numel();
    switch (op) {
      case Op::relu:
        for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
        break;
      case Op::tanh_fn:
        for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
        break;
      case Op::exp_fn:
        for (std::int64_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
        break;
      case Op::log_fn:
        for (std::int64_t i = 0; i < n; ++i) {
          if (x[i] <= 0) throw std::domain_error("log: non-positive input " + std::to_string(x[i]));
          out[i] = std::log(x[i]);
        }
        break;
      case Op::square:
        for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] * x[i];
        break;
      default:  // sqrt
        for (std::int64_t i = 0; i < n; ++i) {
          if (x[i] <= 0) throw std::domain_error("sqrt: non-positive input " + std::to_string(x[i]));
          out[i] = std::sqrt(x[i]);
        }
        break;
    }
    return record(op, {x}, std::move(out));
  }

  Tensor reduce(Op op, const Tensor& x0) {
    Tensor x = on_tape(x0);
    double acc = 0;
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += x[i];
    if (op == Op::mean) acc /= static_cast<double>(n);
    return record(op, {x}, Tensor::scalar_of(acc));
  }

  void accumulate(Gradients& g, int id, const Tensor& contrib) const {
    if (id < 0 || !nodes_[id].needs_grad) return;
    Tensor& slot = g.by_node[id];
    if (!slot.defined()) {
      slot = contrib.clone();
      return;
    }
    const std::int64_t n = slot.numel();
    for (std::int64_t i = 0; i < n; ++i) slot[i] += contrib[i];
  }

  bool wants(int id) const { return id >= 0 && nodes_[id].needs_grad; }

  void propagate(const Node& n, int id, Gradients& g) const {
    const Tensor& dy = g.by_node[id];
    switch (n.op) {
      case Op::matmul: {
        const Tensor &a = n.saved[0], &b = n.saved[1];
        if (wants(n.in[0])) {
          Tensor da = Tensor::empty(a.shape);
          detail::as_mat(da).noalias() = detail::as_mat(dy) * detail::as_mat(b).transpose();
          accumulate(g, n.in[0], da);
        }
        if (wants(n.in[1])) {
          Tensor db = Tensor::empty(b.shape);
          detail::as_mat(db).noalias() = detail::as_mat(a).transpose() * detail::as_mat(dy);
          accumulate(g, n.in[1], db);
        }
        break;
      }
      case Op::linear: {
        const Tensor &x = n.saved[0], &w = n.saved[1];
        if (wants(n.in[0])) {
          Tensor dx = Tensor::empty(x.shape);
          detail::as_mat(dx).noalias() = detail::as_mat(dy) * detail::as_mat(w).transpose();
          accumulate(g, n.in[0], dx);
        }
        if (wants(n.in[1])) {
          Tensor dw = Tensor::empty(w.shape);
          detail::as_mat(dw).noalias() = detail::as_mat(x).transpose() * detail::as_mat(dy);
          accumulate(g, n.in[1], dw);
        }
        if (wants(n.in[2])) {
          const int rows = dy.rows(), cols = dy.cols();
          Tensor db = Tensor::zeros(n.saved[2].shape);
          for (int r = 0; r < rows; ++r) {
            const double* d = dy.data() + static_cast<std::int64_t>(r) * cols;
            for (int c = 0; c < cols; ++c) db[c] += d[c];
          }
          accumulate(g, n.in[2], db);
        }
        break;
      }
      case Op::add:
        if (wants(n.in[0])) accumulate(g, n.in[0], dy);
        if (wants(n.in[1])) accumulate(g, n.in[1], dy);
        break;
      case Op::sub: {
        if (wants(n.in[0])) accumulate(g, n.in[0], dy);
        if (wants(n.in[1])) {
          Tensor db = Tensor::empty(dy.shape);
          const std::int64_t m = dy.numel();
          for (std::int64_t i = 0; i < m; ++i) db[i] = -dy[i];
          accumulate(g, n.in[1], db);
        }
        break;
      }
      case Op::mul: {
        const Tensor &a = n.saved[0], &b = n.saved[1];
        const std::int64_t m = dy.numel();
        if (wants(n.in[0])) {
          Tensor da = Tensor::empty(dy.shape);
          for (std::int64_t i = 0; i < m; ++i) da[i] = dy[i] * b[i];
          accumulate(g, n.in[0], da);
        }
        if (wants(n.in[1])) {
          Tensor db = Tensor::empty(dy.shape);
          for (std::int64_t i = 0; i < m; ++i) db[i] = dy[i] * a[i];
          accumulate(g, n.in[1], db);
        }
        break;
      }
      case Op::scalar_mul: {
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = n.attr * dy[i];
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::relu: {
        // derivative at exactly 0 is defined as 0 (strict x > 0 test),
        // matching the forward's max(x, 0) saved values
        const Tensor& x = n.saved[0];
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = x[i] > 0 ? dy[i] : 0.0;
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::tanh_fn: {
        const Tensor& y = n.out;
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::exp_fn: {
        const Tensor& y = n.out;
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = dy[i] * y[i];
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::log_fn: {
        const Tensor& x = n.saved[0];
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = dy[i] / x[i];
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::square: {
        const Tensor& x = n.saved[0];
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = 2.0 * x[i] * dy[i];
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::sqrt_fn: {
        const Tensor& y = n.out;
        Tensor dx = Tensor::empty(dy.shape);
        const std::int64_t m = dy.numel();
        for (std::int64_t i = 0; i < m; ++i) dx[i] = dy[i] / (2.0 * y[i]);
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::sum: {
        accumulate_fill(g, n.in[0], n.saved[0].shape, dy[0]);
        break;
      }
      case Op::mean: {
        accumulate_fill(g, n.in[0], n.saved[0].shape, dy[0] / static_cast<double>(n.saved[0].numel()));
        break;
      }
      case Op::concat: {
        const Tensor &a = n.saved[0], &b = n.saved[1];
        const int split = n.len;
        if (a.rank() == 1) {
          if (wants(n.in[0])) {
            Tensor da = Tensor::empty(a.shape);
            std::copy(dy.data(), dy.data() + split, da.data());
            accumulate(g, n.in[0], da);
          }
          if (wants(n.in[1])) {
            Tensor db = Tensor::empty(b.shape);
            std::copy(dy.data() + split, dy.data() + dy.numel(), db.data());
            accumulate(g, n.in[1], db);
          }
        } else {
          const int rows = a.shape[0], ca = split, cb = b.shape[1];
          if (wants(n.in[0])) {
            Tensor da = Tensor::empty(a.shape);
            for (int r = 0; r < rows; ++r)
              std::copy(dy.data() + static_cast<std::int64_t>(r) * (ca + cb),
                        dy.data() + static_cast<std::int64_t>(r) * (ca + cb) + ca,
                        da.data() + static_cast<std::int64_t>(r) * ca);
            accumulate(g, n.in[0], da);
          }
          if (wants(n.in[1])) {
            Tensor db = Tensor::empty(b.shape);
            for (int r = 0; r < rows; ++r)
              std::copy(dy.data() + static_cast<std::int64_t>(r) * (ca + cb) + ca,
                        dy.data() + static_cast<std::int64_t>(r + 1) * (ca + cb),
                        db.data() + static_cast<std::int64_t>(r) * cb);
            accumulate(g, n.in[1], db);
          }
        }
        break;
      }
      case Op::broadcast: {
        const Tensor& x = n.saved[0];
        Tensor dx = Tensor::zeros(x.shape);
        if (x.numel() == 1) {
          double acc = 0;
          const std::int64_t m = dy.numel();
          for (std::int64_t i = 0; i < m; ++i) acc += dy[i];
          dx[0] = acc;
        } else if (x.rank() == 2 && x.shape[1] == 1) {
          const int rows = dy.rows(), cols = dy.cols();
          for (int r = 0; r < rows; ++r) {
            double acc = 0;
            const double* d = dy.data() + static_cast<std::int64_t>(r) * cols;
            for (int c = 0; c < cols; ++c) acc += d[c];
            dx[r] = acc;
          }
        } else {  // row vector broadcast over rows
          const int rows = dy.rows(), cols = dy.cols();
          for (int r = 0; r < rows; ++r) {
            const double* d = dy.data() + static_cast<std::int64_t>(r) * cols;
            for (int c = 0; c < cols; ++c) dx[c] += d[c];
          }
        }
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::slice: {
        const Tensor& x = n.saved[0];
        Tensor dx = Tensor::zeros(x.shape);
        if (x.rank() == 1) {
          std::copy(dy.data(), dy.data() + n.len, dx.data() + n.start);
        } else if (n.axis == 0) {
          std::copy(dy.data(), dy.data() + dy.numel(),
                    dx.data() + static_cast<std::int64_t>(n.start) * x.shape[1]);
        } else {
          for (int r = 0; r < x.shape[0]; ++r)
            std::copy(dy.data() + static_cast<std::int64_t>(r) * n.len,
                      dy.data() + static_cast<std::int64_t>(r + 1) * n.len,
                      dx.data() + static_cast<std::int64_t>(r) * x.shape[1] + n.start);
        }
        accumulate(g, n.in[0], dx);
        break;
      }
      case Op::layer_norm: {
        const Tensor &x = n.saved[0], &gain = n.saved[1];
        const Tensor& stats = stats_for(id);
        const int rows = x.rows(), d = x.cols();
        Tensor dx, dgain, dbias;
        const bool wx = wants(n.in[0]), wg = wants(n.in[1]), wb = wants(n.in[2]);
        if (wx) dx = Tensor::empty(x.shape);
        if (wg) dgain = Tensor::zeros(gain.shape);
        if (wb) dbias = Tensor::zeros(gain.shape);
        std::vector<double> xhat(static_cast<size_t>(d)), dxh(static_cast<size_t>(d));
        for (int r = 0; r < rows; ++r) {
          const double m = stats[2 * r], rstd = stats[2 * r + 1];
          const double* xr = x.data() + static_cast<std::int64_t>(r) * d;
          const double* dyr = dy.data() + static_cast<std::int64_t>(r) * d;
          for (int c = 0; c < d; ++c) {
            xhat[c] = (xr[c] - m) * rstd;
            dxh[c] = dyr[c] * gain[c];
          }
          if (wg)
            for (int c = 0; c < d; ++c) dgain[c] += dyr[c] * xhat[c];
          if (wb)
            for (int c = 0; c < d; ++c) dbias[c] += dyr[c];
          if (wx) {
            double s1 = 0, s2 = 0;
            for (int c = 0; c < d; ++c) {
              s1 += dxh[c];
              s2 += dxh[c] * xhat[c];
            }
            s1 /= d;
            s2 /= d;
            double* dxr = dx.data() + static_cast<std::int64_t>(r) * d;
            for (int c = 0; c < d; ++c) dxr[c] = rstd * (dxh[c] - s1 - xhat[c] * s2);
          }
        }
        if (wx) accumulate(g, n.in[0], dx);
        if (wg) accumulate(g, n.in[1], dgain);
        if (wb) accumulate(g, n.in[2], dbias);
        break;
      }
      case Op::leaf:
        break;
    }
  }

  void accumulate_fill(Gradients& g, int id, const Shape& shape, double v) const {
    if (id < 0 || !nodes_[id].needs_grad) return;
    Tensor& slot = g.by_node[id];
    if (!slot.defined()) {
      slot = Tensor::full(shape, v);
      return;
    }
    const std::int64_t n = slot.numel();
    for (std::int64_t i = 0; i < n; ++i) slot[i] += v;
  }

  const Tensor& stats_for(int node_id) const {
    for (size_t i = 0; i < stats_node_.size(); ++i)
      if (stats_node_[i] == node_id) return stats_[i];
    throw std::logic_error("layer_norm stats missing");
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> stats_;     // layer_norm per-row (mean, rstd)
  std::vector<int> stats_node_;
};

// ---------------------------------------------------------------------------
// Composite helpers built from primitives.
// ---------------------------------------------------------------------------

/// Elementwise clamp composed from relu: lo + relu(x-lo) - relu(x-hi) shifted,
/// i.e. hi - relu((hi-lo) - relu(x-lo)). Gradient is 1 inside, 0 outside.
inline Tensor clamp(Tape& t, const Tensor& x, double lo, double hi) {
  Tensor xl = t.sub(x, t.constant(Tensor::full(x.shape, lo)));
  Tensor a = t.relu(xl);
  Tensor b = t.sub(t.constant(Tensor::full(x.shape, hi - lo)), a);
  Tensor c = t.relu(b);
  return t.sub(t.constant(Tensor::full(x.shape, hi)), c);
}

/// Elementwise min composed from relu: min(a,b) = a - relu(a-b).
inline Tensor minimum(Tape& t, const Tensor& a, const Tensor& b) {
  return t.sub(a, t.relu(t.sub(a, b)));
}

/// Row-wise sum of a (B,n) matrix via matmul with a ones column: returns (B,1).
inline Tensor row_sum(Tape& t, const Tensor& x) {
  return t.matmul(x, t.constant(Tensor::full({x.cols(), 1}, 1.0)));
}

/// Value-level horizontal concatenation of (B,n_i) blocks; no tape involved.
inline Tensor hstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("hstack: no parts");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) detail::shape_error("hstack", parts[0].shape, p.shape);
    cols += p.cols();
  }
  Tensor out = Tensor::empty({rows, cols});
  for (int r = 0; r < rows; ++r) {
    double* dst = out.data() + static_cast<std::int64_t>(r) * cols;
    for (const Tensor& p : parts) {
      const int c = p.cols();
      std::copy(p.data() + static_cast<std::int64_t>(r) * c,
                p.data() + static_cast<std::int64_t>(r + 1) * c, dst);
      dst += c;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification.
// ---------------------------------------------------------------------------

/// Scalar-valued function of one tensor, built on a caller-provided tape.
using TensorFn = std::function<Tensor(Tape&, const Tensor&)>;

/// Compares the analytic gradient against central finite differences.
/// Returns max over coordinates of |analytic - fd| / max(1, |fd|).
/// The function must be evaluated away from ReLU kinks for the bound to hold.
inline double grad_check(const TensorFn& f, const Tensor& point, double step = 1e-5) {
  Tensor analytic;
  {
    Tape tape;
    Tensor x = tape.watch(point);
    Tensor loss = f(tape, x);
    analytic = tape.backward(loss).of(x);
  }
  double worst = 0;
  const std::int64_t n = point.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor hi = point.clone(), lo = point.clone();
    hi[i] += step;
    lo[i] -= step;
    double fp, fm;
    {
      Tape t1;
      fp = f(t1, t1.watch(hi)).scalar();
    }
    {
      Tape t2;
      fm = f(t2, t2.watch(lo)).scalar();
    }
    const double fd = (fp - fm) / (2 * step);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace simba
