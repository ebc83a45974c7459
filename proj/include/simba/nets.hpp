#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "simba/autodiff.hpp"
#include "simba/rng.hpp"

namespace simba {

/// Stabilizer used by every layer-normalization in the network family.
inline constexpr double kLayerNormEps = 1e-5;

/// Scale of the final linear in each residual branch and of every output head.
inline constexpr double kSmallInitScale = 1e-2;

enum class Variant {
  mlp,              // stack of linear+ReLU layers
  mlp_res,          // projection, then additive skip around every two layers
  mlp_ln,           // mlp with layer norm before each linear after the first
  simba,            // embed -> pre-LN residual blocks -> post-LN
  simba_no_residual,  // blocks keep MLP(LN(x)) but drop the +x term
  simba_no_preln,     // blocks are x + MLP(x)
  simba_no_postln,    // final layer norm omitted
};

enum class Head { raw, gaussian_policy, deterministic_policy, q_value };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::mlp: return "mlp";
    case Variant::mlp_res: return "mlp+res";
    case Variant::mlp_ln: return "mlp+ln";
    case Variant::simba: return "simba";
    case Variant::simba_no_residual: return "simba-residual";
    case Variant::simba_no_preln: return "simba-preln";
    case Variant::simba_no_postln: return "simba-postln";
  }
  return "?";
}

inline Variant variant_from(const std::string& s) {
  if (s == "mlp") return Variant::mlp;
  if (s == "mlp+res" || s == "mlp-res") return Variant::mlp_res;
  if (s == "mlp+ln" || s == "mlp-ln") return Variant::mlp_ln;
  if (s == "simba") return Variant::simba;
  if (s == "simba-residual" || s == "simba-no-residual") return Variant::simba_no_residual;
  if (s == "simba-preln" || s == "simba-no-preln") return Variant::simba_no_preln;
  if (s == "simba-postln" || s == "simba-no-postln") return Variant::simba_no_postln;
  throw std::invalid_argument("unknown architecture variant: " + s);
}

inline bool is_simba_family(Variant v) {
  return v == Variant::simba || v == Variant::simba_no_residual ||
         v == Variant::simba_no_preln || v == Variant::simba_no_postln;
}

/// Architecture description. `num_blocks` counts residual blocks for the simba
/// family, hidden layers for mlp / mlp+ln, and skip pairs (after the input
/// projection) for mlp+res.
struct NetworkSpec {
  Variant variant = Variant::simba;
  int input_dim = 0;
  int hidden_dim = 0;
  int num_blocks = 0;
  int output_dim = 0;
  Head head = Head::raw;
};

/// Ordered set of named weight tensors plus the seed they were drawn from.
struct Params {
  struct Entry {
    std::string name;
    Tensor value;
  };
  std::vector<Entry> entries;
  std::uint64_t seed = 0;

  const Tensor& get(std::string_view name) const {
    for (const Entry& e : entries)
      if (e.name == name) return e.value;
    throw std::out_of_range("no parameter named " + std::string(name));
  }
  size_t size() const { return entries.size(); }
};

namespace detail {

enum class Init { orthogonal, orthogonal_relu, orthogonal_small, zeros, ones };

struct EntrySpec {
  std::string name;
  Shape shape;
  Init init;
};

inline void push_linear(std::vector<EntrySpec>& out, const std::string& prefix, int in, int o,
                        Init weight_init) {
  out.push_back({prefix + ".w", {in, o}, weight_init});
  out.push_back({prefix + ".b", {o}, Init::zeros});
}

inline void push_ln(std::vector<EntrySpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", {d}, Init::ones});
  out.push_back({prefix + ".b", {d}, Init::zeros});
}

inline void push_head(std::vector<EntrySpec>& out, const NetworkSpec& s, int feat_dim) {
  if (s.head == Head::gaussian_policy) {
    push_linear(out, "head.mean", feat_dim, s.output_dim, Init::orthogonal_small);
    push_linear(out, "head.log_std", feat_dim, s.output_dim, Init::orthogonal_small);
  } else {
    push_linear(out, "head", feat_dim, s.output_dim, Init::orthogonal_small);
  }
}

/// Single source of truth for parameter names, shapes and init rules.
inline std::vector<EntrySpec> param_layout(const NetworkSpec& s) {
  if (s.input_dim < 1 || s.hidden_dim < 1 || s.output_dim < 1 || s.num_blocks < 0)
    throw std::invalid_argument("NetworkSpec: dimensions must be positive");
  std::vector<EntrySpec> out;
  const int dh = s.hidden_dim;
  switch (s.variant) {
    case Variant::simba:
    case Variant::simba_no_residual:
    case Variant::simba_no_preln:
    case Variant::simba_no_postln: {
      push_linear(out, "embed", s.input_dim, dh, Init::orthogonal);
      for (int l = 0; l < s.num_blocks; ++l) {
        const std::string p = "block" + std::to_string(l);
        if (s.variant != Variant::simba_no_preln) push_ln(out, p + ".ln", dh);
        push_linear(out, p + ".fc1", dh, 4 * dh, Init::orthogonal_relu);
        push_linear(out, p + ".fc2", 4 * dh, dh, Init::orthogonal_small);
      }
      if (s.variant != Variant::simba_no_postln) push_ln(out, "post_ln", dh);
      push_head(out, s, dh);
      break;
    }
    case Variant::mlp:
    case Variant::mlp_ln: {
      int in = s.input_dim;
      for (int l = 0; l < s.num_blocks; ++l) {
        const std::string p = "layer" + std::to_string(l);
        push_linear(out, p, in, dh, Init::orthogonal_relu);
        // mlp+ln normalizes preactivations: linear -> LN -> relu
        if (s.variant == Variant::mlp_ln) push_ln(out, "ln" + std::to_string(l), dh);
        in = dh;
      }
      push_head(out, s, in);
      break;
    }
    case Variant::mlp_res: {
      push_linear(out, "proj", s.input_dim, dh, Init::orthogonal_relu);
      for (int l = 0; l < s.num_blocks; ++l) {
        const std::string p = "pair" + std::to_string(l);
        push_linear(out, p + ".fc1", dh, dh, Init::orthogonal_relu);
        push_linear(out, p + ".fc2", dh, dh, Init::orthogonal_small);
      }
      push_head(out, s, dh);
      break;
    }
  }
  return out;
}

/// Orthogonal matrix for an in->out linear map, stored (in, out). Follows the
/// usual QR-of-Gaussian construction with sign correction from diag(R).
inline Tensor orthogonal(int in, int out, double gain, std::mt19937_64& rng) {
  const int rows = out, cols = in;  // logical operator is (out, in)
  const int r = std::max(rows, cols), c = std::min(rows, cols);
  Eigen::MatrixXd gauss(r, c);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) gauss(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  Eigen::MatrixXd rm = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rm(j, j) < 0) q.col(j) = -q.col(j);
  Tensor w = Tensor::empty({in, out});
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < out; ++j) {
      const double v = (rows < cols) ? q(i, j) : q(j, i);  // logical (out,in) transposed
      w.data()[static_cast<std::int64_t>(i) * out + j] = gain * v;
    }
  return w;
}

}  // namespace detail

inline std::int64_t count_params(const NetworkSpec& s) {
  std::int64_t n = 0;
  for (const auto& e : detail::param_layout(s)) n += shape_numel(e.shape);
  return n;
}

inline Params init_params(const NetworkSpec& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Params p;
  p.seed = seed;
  for (const auto& e : detail::param_layout(s)) {
    Tensor t;
    switch (e.init) {
      case detail::Init::zeros: t = Tensor::zeros(e.shape); break;
      case detail::Init::ones: t = Tensor::full(e.shape, 1.0); break;
      case detail::Init::orthogonal:
        t = detail::orthogonal(e.shape[0], e.shape[1], 1.0, rng);
        break;
      case detail::Init::orthogonal_relu:
        t = detail::orthogonal(e.shape[0], e.shape[1], std::numbers::sqrt2, rng);
        break;
      case detail::Init::orthogonal_small:
        t = detail::orthogonal(e.shape[0], e.shape[1], kSmallInitScale, rng);
        break;
    }
    p.entries.push_back({e.name, std::move(t)});
  }
  return p;
}

/// Redraws every tensor from the new seed; the old values play no role.
inline Params reset_params(const NetworkSpec& s, const Params&, std::uint64_t new_seed) {
  return init_params(s, new_seed);
}

/// Grows or shrinks hidden_dim of `candidate` until its parameter count is
/// within `tol` (relative) of `target`; count is strictly increasing in d_h.
inline NetworkSpec match_param_count(NetworkSpec candidate, std::int64_t target, double tol = 0.01) {
  int lo = 1, hi = 2;
  auto count_at = [&](int dh) {
    NetworkSpec s = candidate;
    s.hidden_dim = dh;
    return count_params(s);
  };
  while (count_at(hi) < target && hi < (1 << 22)) hi *= 2;
  while (lo + 1 < hi) {
    const int mid = lo + (hi - lo) / 2;
    (count_at(mid) < target ? lo : hi) = mid;
  }
  const int best = (std::llabs(count_at(lo) - target) <= std::llabs(count_at(hi) - target)) ? lo : hi;
  candidate.hidden_dim = best;
  const double rel = std::abs(static_cast<double>(count_at(best) - target)) / static_cast<double>(target);
  if (rel > tol)
    throw std::runtime_error("match_param_count: best " + std::to_string(count_at(best)) +
                             " vs target " + std::to_string(target) + " misses tolerance");
  return candidate;
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

/// Layer normalization over the feature axis with the family-wide stabilizer.
inline Tensor layer_norm_op(Tape& t, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return t.layer_norm(x, gain, bias, kLayerNormEps);
}

/// Embedding linear of the normalized observation (x1 = W ob + b).
inline Tensor embed_op(Tape& t, const Tensor& obs, const Tensor& w, const Tensor& b) {
  return t.linear(obs, w, b);
}

/// Pre-LN residual feedforward block: x + fc2(relu(fc1(LN(x)))) with the
/// inverted 4x bottleneck. `pre_ln`/`residual` toggle the ablation variants.
/// Returns the block output; `relu_out` receives the post-ReLU activations.
inline Tensor residual_block_op(Tape& t, const Tensor& x, const Tensor* ln_g, const Tensor* ln_b,
                                const Tensor& w1, const Tensor& b1, const Tensor& w2,
                                const Tensor& b2, bool pre_ln, bool residual, Tensor* relu_out) {
  Tensor h = pre_ln ? layer_norm_op(t, x, *ln_g, *ln_b) : x;
  Tensor a = t.relu(t.linear(h, w1, b1));
  if (relu_out) *relu_out = a;
  Tensor m = t.linear(a, w2, b2);
  return residual ? t.add(x, m) : m;
}

struct Forward {
  Tensor features;               // pre-head representation z
  Tensor out;                    // raw / q-value / deterministic head output
  Tensor mean, log_std;          // gaussian-policy head (log_std already clamped)
  std::vector<Tensor> relu_acts; // post-ReLU activations along the trunk
};

/// Clamp range applied to the gaussian policy's log standard deviation.
inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

/// Registers every parameter on the tape as a differentiable leaf; the
/// returned handles parallel `params.entries`.
inline std::vector<Tensor> watch_params(Tape& t, const Params& p) {
  std::vector<Tensor> hs;
  hs.reserve(p.size());
  for (const auto& e : p.entries) hs.push_back(t.watch(e.value));
  return hs;
}

inline std::vector<Tensor> const_params(Tape& t, const Params& p) {
  std::vector<Tensor> hs;
  hs.reserve(p.size());
  for (const auto& e : p.entries) hs.push_back(t.constant(e.value));
  return hs;
}

namespace detail {

class ParamCursor {
 public:
  ParamCursor(std::span<const Tensor> handles) : handles_(handles) {}
  const Tensor& next() {
    if (i_ >= handles_.size()) throw std::logic_error("parameter handle list too short");
    return handles_[i_++];
  }
  void finish() const {
    if (i_ != handles_.size()) throw std::logic_error("parameter handle list too long");
  }

 private:
  std::span<const Tensor> handles_;
  size_t i_ = 0;
};

inline void apply_head(const NetworkSpec& s, Tape& t, ParamCursor& cur, const Tensor& z,
                       Forward& f) {
  f.features = z;
  if (s.head == Head::gaussian_policy) {
    const Tensor &mw = cur.next(), &mb = cur.next();
    const Tensor &sw = cur.next(), &sb = cur.next();
    f.mean = t.linear(z, mw, mb);
    f.log_std = clamp(t, t.linear(z, sw, sb), kLogStdMin, kLogStdMax);
  } else {
    const Tensor &w = cur.next(), &b = cur.next();
    Tensor o = t.linear(z, w, b);
    f.out = (s.head == Head::deterministic_policy) ? t.tanh(o) : o;
  }
}

}  // namespace detail

/// Runs the network on a (B, input_dim) batch. `handles` must come from
/// watch_params/const_params on the same tape, in canonical order.
inline Forward forward(const NetworkSpec& s, std::span<const Tensor> handles, Tape& t,
                       const Tensor& input) {
  if (input.rank() != 2 || input.shape[1] != s.input_dim)
    throw std::invalid_argument("forward: input " + shape_str(input.shape) + " does not match d_o=" +
                                std::to_string(s.input_dim));
  detail::ParamCursor cur(handles);
  Forward f;
  switch (s.variant) {
    case Variant::simba:
    case Variant::simba_no_residual:
    case Variant::simba_no_preln:
    case Variant::simba_no_postln: {
      const bool pre_ln = s.variant != Variant::simba_no_preln;
      const bool residual = s.variant != Variant::simba_no_residual;
      const Tensor &ew = cur.next(), &eb = cur.next();
      Tensor x = embed_op(t, input, ew, eb);
      for (int l = 0; l < s.num_blocks; ++l) {
        const Tensor *lg = nullptr, *lb = nullptr;
        if (pre_ln) {
          lg = &cur.next();
          lb = &cur.next();
        }
        const Tensor &w1 = cur.next(), &b1 = cur.next();
        const Tensor &w2 = cur.next(), &b2 = cur.next();
        Tensor acts;
        x = residual_block_op(t, x, lg, lb, w1, b1, w2, b2, pre_ln, residual, &acts);
        f.relu_acts.push_back(acts);
      }
      Tensor z = x;
      if (s.variant != Variant::simba_no_postln) {
        const Tensor &pg = cur.next(), &pb = cur.next();
        z = layer_norm_op(t, x, pg, pb);
      }
      detail::apply_head(s, t, cur, z, f);
      break;
    }
    case Variant::mlp:
    case Variant::mlp_ln: {
      Tensor x = input;
      for (int l = 0; l < s.num_blocks; ++l) {
        const Tensor &w = cur.next(), &b = cur.next();
        x = t.linear(x, w, b);
        if (s.variant == Variant::mlp_ln) {
          const Tensor &lg = cur.next(), &lb = cur.next();
          x = layer_norm_op(t, x, lg, lb);
        }
        x = t.relu(x);
        f.relu_acts.push_back(x);
      }
      detail::apply_head(s, t, cur, x, f);
      break;
    }
    case Variant::mlp_res: {
      const Tensor &pw = cur.next(), &pb = cur.next();
      Tensor x = t.relu(t.linear(input, pw, pb));
      f.relu_acts.push_back(x);
      for (int l = 0; l < s.num_blocks; ++l) {
        const Tensor &w1 = cur.next(), &b1 = cur.next();
        const Tensor &w2 = cur.next(), &b2 = cur.next();
        Tensor h = t.relu(t.linear(x, w1, b1));
        f.relu_acts.push_back(h);
        Tensor u = t.relu(t.linear(h, w2, b2));
        f.relu_acts.push_back(u);
        x = t.add(x, u);
      }
      detail::apply_head(s, t, cur, x, f);
      break;
    }
  }
  cur.finish();
  return f;
}

/// Convenience forward with constant (non-trainable) parameters.
inline Forward forward(const NetworkSpec& s, const Params& p, Tape& t, const Tensor& input) {
  return forward(s, const_params(t, p), t, input);
}

// ---------------------------------------------------------------------------
// Tanh-Gaussian policy utilities.
// ---------------------------------------------------------------------------

struct GaussianSample {
  Tensor action;    // (B,A), scaled to env units: scale * tanh(pre)
  Tensor log_prob;  // (B,1), includes the tanh and scale log-det corrections
};

/// Reparameterized sample a = scale*tanh(mean + exp(log_std)*noise) with
///   log pi(a) = sum_i [ -noise_i^2/2 - log_std_i - log(2 pi)/2
///                       - log(scale_i (1 - tanh^2) + 1e-6) ].
/// `noise` is treated as a constant; gradients flow through mean and log_std.
inline GaussianSample sample_tanh_gaussian(Tape& t, const Tensor& mean, const Tensor& log_std,
                                           const Tensor& noise, double action_scale) {
  const int b = mean.rows(), a = mean.cols();
  Tensor nconst = t.constant(noise);
  Tensor std = t.exp(log_std);
  Tensor pre = t.add(mean, t.mul(std, nconst));
  Tensor tanh_pre = t.tanh(pre);
  GaussianSample out;
  out.action = t.scalar_mul(tanh_pre, action_scale);

  // Gaussian density of the pre-squash sample, constant part precomputed.
  Tensor base = Tensor::empty({b, a});
  constexpr double half_log_2pi = 0.9189385332046727;  // log(2*pi)/2
  for (std::int64_t i = 0; i < base.numel(); ++i)
    base[i] = -0.5 * noise[i] * noise[i] - half_log_2pi;
  Tensor terms = t.sub(t.constant(base), log_std);

  // log|da/dpre| = log(scale * (1 - tanh^2) + eps)
  Tensor one_minus = t.sub(t.constant(Tensor::full({b, a}, 1.0)), t.square(tanh_pre));
  Tensor jac = t.add(t.scalar_mul(one_minus, action_scale),
                     t.constant(Tensor::full({b, a}, 1e-6)));
  terms = t.sub(terms, t.log(jac));
  out.log_prob = row_sum(t, terms);
  return out;
}

}  // namespace simba
