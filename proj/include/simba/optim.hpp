#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "simba/autodiff.hpp"
#include "simba/nets.hpp"

namespace simba {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + lambda * p )
/// Parameters are replaced by fresh tensors (whole-snapshot swap), so handles
/// recorded on earlier tapes stay valid.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const Params& params, AdamWConfig cfg) : cfg_(cfg) { reset(params); }

  void reset(const Params& params) {
    step_ = 0;
    m_.clear();
    v_.clear();
    for (const auto& e : params.entries) {
      m_.push_back(Tensor::zeros(e.value.shape));
      v_.push_back(Tensor::zeros(e.value.shape));
    }
  }

  void step(Params& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size() || m_.size() != params.size())
      throw std::invalid_argument("AdamW::step: gradient list does not match parameters");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t k = 0; k < params.entries.size(); ++k) {
      const Tensor& p = params.entries[k].value;
      const Tensor& g = grads[k];
      if (g.shape != p.shape)
        throw std::invalid_argument("AdamW::step: gradient shape " + shape_str(g.shape) +
                                    " for parameter " + params.entries[k].name);
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      Tensor out = Tensor::empty(p.shape);
      const std::int64_t n = p.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        out[i] = p[i] - cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p[i]);
      }
      params.entries[k].value = std::move(out);
    }
  }

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Tensor>& moments1() const { return m_; }
  const std::vector<Tensor>& moments2() const { return v_; }
  void restore(std::int64_t step, std::vector<Tensor> m, std::vector<Tensor> v) {
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

/// AdamW on a single scalar (the SAC temperature's log alpha).
class ScalarAdamW {
 public:
  ScalarAdamW() = default;
  explicit ScalarAdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(double& p, double g) {
    ++step_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g * g;
    const double mh = m_ / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
    const double vh = v_ / (1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
    p -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p);
  }

  void reset() { step_ = 0; m_ = v_ = 0.0; }
  std::int64_t step_count() const { return step_; }
  double m() const { return m_; }
  double v() const { return v_; }
  void restore(std::int64_t step, double m, double v) { step_ = step; m_ = m; v_ = v; }

 private:
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  double m_ = 0.0, v_ = 0.0;
};

/// target <- (1 - tau) * target + tau * online, elementwise over all entries.
inline void polyak_update(Params& target, const Params& online, double tau) {
  if (target.size() != online.size())
    throw std::invalid_argument("polyak_update: parameter sets differ in size");
  for (size_t k = 0; k < target.entries.size(); ++k) {
    const Tensor& o = online.entries[k].value;
    const Tensor& t = target.entries[k].value;
    Tensor out = Tensor::empty(t.shape);
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = (1.0 - tau) * t[i] + tau * o[i];
    target.entries[k].value = std::move(out);
  }
}

}  // namespace simba
