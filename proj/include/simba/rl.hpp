#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "simba/analysis.hpp"
#include "simba/autodiff.hpp"
#include "simba/nets.hpp"
#include "simba/obs_norm.hpp"
#include "simba/optim.hpp"
#include "simba/replay.hpp"
#include "simba/rng.hpp"

namespace simba {

enum class Algo { sac, ddpg };

inline const char* to_string(Algo a) { return a == Algo::sac ? "sac" : "ddpg"; }
inline Algo algo_from(const std::string& s) {
  if (s == "sac") return Algo::sac;
  if (s == "ddpg") return Algo::ddpg;
  throw std::invalid_argument("unknown algorithm: " + s);
}

struct NetHyper {
  Variant variant = Variant::simba;
  int num_blocks = 0;
  int hidden_dim = 0;
  double lr = 1e-4;
};

struct TrainConfig {
  NetHyper critic{Variant::simba, 2, 512, 1e-4};
  NetHyper actor{Variant::simba, 1, 128, 1e-4};
  double tau = 5e-3;
  double init_alpha = 1e-2;
  double alpha_lr = 1e-4;
  // Target entropy defaults to -|A|/2 when NaN.
  double target_entropy = std::numeric_limits<double>::quiet_NaN();
  int batch_size = 256;
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 1e-2;
  double adam_eps = 1e-8;
  double gamma = 0.99;
  int replay_ratio = 2;
  bool clipped_double_q = false;
  std::int64_t reset_interval = 0;  // gradient steps between reinits; 0 = never
  std::int64_t buffer_capacity = 100000;
  int warmup_steps = 1000;
  double exploration_noise = 0.1;  // DDPG collection noise, raw action units
  std::int64_t total_env_steps = 0;
  NormalizerKind normalizer = NormalizerKind::rsnorm;
  int fixed_initial_n = 5000;
  std::string oracle_stats_path;
  double tau_rank = 0.01;     // plasticity: stable-rank threshold
  double eps_dormant = 1e-3;  // plasticity: dormant activation threshold
  std::int64_t checkpoint_every = 0;  // env steps; 0 = final checkpoint only
  bool zero_wall_time = false;        // write 0 in the wall_time_s column

  double resolved_target_entropy(int action_dim) const {
    return std::isnan(target_entropy) ? -0.5 * action_dim : target_entropy;
  }
};

/// Returns "" when valid, otherwise "field: problem".
inline std::string validate(const TrainConfig& c) {
  if (c.critic.lr <= 0) return "critic.lr: must be > 0";
  if (c.actor.lr <= 0) return "actor.lr: must be > 0";
  if (c.alpha_lr <= 0) return "alpha_lr: must be > 0";
  if (c.critic.hidden_dim < 1) return "critic.hidden_dim: must be >= 1";
  if (c.actor.hidden_dim < 1) return "actor.hidden_dim: must be >= 1";
  if (c.critic.num_blocks < 0) return "critic.num_blocks: must be >= 0";
  if (c.actor.num_blocks < 0) return "actor.num_blocks: must be >= 0";
  if (!(c.tau > 0 && c.tau <= 1)) return "tau: must be in (0, 1]";
  if (!(c.gamma >= 0 && c.gamma < 1)) return "gamma: must be in [0, 1)";
  if (c.init_alpha <= 0) return "init_alpha: must be > 0";
  if (c.batch_size < 1) return "batch_size: must be >= 1";
  if (c.replay_ratio < 1) return "replay_ratio: must be >= 1";
  if (c.buffer_capacity < 1) return "buffer_capacity: must be >= 1";
  if (c.warmup_steps < 0) return "warmup_steps: must be >= 0";
  if (c.total_env_steps < 0) return "total_env_steps: must be >= 0";
  if (c.reset_interval < 0) return "reset_interval: must be >= 0";
  if (c.normalizer == NormalizerKind::oracle && c.oracle_stats_path.empty())
    return "oracle_stats_path: required for the oracle normalizer";
  return "";
}

struct UpdateStats {
  double critic_loss = 0, actor_loss = 0, alpha = 0;
  Tensor features;   // critic pre-head features for the update batch
  Tensor relu_acts;  // concatenated post-ReLU critic activations
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::vector<double> act(std::span<const double> obs_norm, std::mt19937_64& rng,
                                  bool stochastic) = 0;
  virtual UpdateStats update(const Batch& normalized, std::mt19937_64& rng, bool want_features) = 0;
  virtual void periodic_reset(std::uint64_t seed) = 0;
  virtual void collect_state(std::vector<std::pair<std::string, Tensor>>& out) const = 0;
  virtual void restore_state(const std::vector<std::pair<std::string, Tensor>>& in) = 0;
  virtual const Params& actor_params() const = 0;
  virtual const Params& critic_params() const = 0;
  virtual double alpha() const { return 0; }
};

namespace detail {

inline Tensor find_state(const std::vector<std::pair<std::string, Tensor>>& kv,
                         const std::string& name) {
  for (const auto& [k, v] : kv)
    if (k == name) return v;
  throw std::runtime_error("checkpoint: missing entry " + name);
}

inline void collect_params(std::vector<std::pair<std::string, Tensor>>& out,
                           const std::string& prefix, const Params& p) {
  out.emplace_back(prefix + ".seed", Tensor::scalar_of(static_cast<double>(p.seed)));
  for (const auto& e : p.entries) out.emplace_back(prefix + "." + e.name, e.value);
}

inline void restore_params(const std::vector<std::pair<std::string, Tensor>>& kv,
                           const std::string& prefix, Params& p) {
  p.seed = static_cast<std::uint64_t>(find_state(kv, prefix + ".seed").scalar());
  for (auto& e : p.entries) e.value = find_state(kv, prefix + "." + e.name);
}

inline void collect_opt(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                        const AdamW& opt) {
  out.emplace_back(prefix + ".t", Tensor::scalar_of(static_cast<double>(opt.step_count())));
  for (size_t i = 0; i < opt.moments1().size(); ++i) {
    out.emplace_back(prefix + ".m" + std::to_string(i), opt.moments1()[i]);
    out.emplace_back(prefix + ".v" + std::to_string(i), opt.moments2()[i]);
  }
}

inline void restore_opt(const std::vector<std::pair<std::string, Tensor>>& kv,
                        const std::string& prefix, AdamW& opt) {
  const auto t = static_cast<std::int64_t>(find_state(kv, prefix + ".t").scalar());
  std::vector<Tensor> m, v;
  for (size_t i = 0; i < opt.moments1().size(); ++i) {
    m.push_back(find_state(kv, prefix + ".m" + std::to_string(i)));
    v.push_back(find_state(kv, prefix + ".v" + std::to_string(i)));
  }
  opt.restore(t, std::move(m), std::move(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loss builders. The agents below train through these exact functions, and
// the gradient-verification suite differentiates them directly.
// ---------------------------------------------------------------------------

/// Mean squared TD error against fixed targets y.
inline Tensor critic_td_loss(Tape& t, const NetworkSpec& spec, std::span<const Tensor> handles,
                             const Tensor& input, const Tensor& y, Forward* fwd_out = nullptr) {
  Forward f = forward(spec, handles, t, input);
  if (fwd_out) *fwd_out = f;
  return t.mean(t.square(t.sub(f.out, t.constant(y))));
}

struct SacActorLoss {
  Tensor loss;
  Tensor log_prob;  // (B,1)
};

/// loss = mean( alpha * log pi(a|o) - Q(o, a) ) with a reparameterized through
/// `noise`; critic parameters enter as constants so gradients reach the actor
/// only through the sampled action.
inline SacActorLoss sac_actor_loss(Tape& t, const NetworkSpec& actor_spec,
                                   std::span<const Tensor> actor_handles, const Tensor& obs,
                                   const Tensor& noise, double alpha, double action_scale,
                                   const NetworkSpec& critic_spec, const Params& critic1,
                                   const Params* critic2 = nullptr) {
  Forward fa = forward(actor_spec, actor_handles, t, obs);
  GaussianSample s = sample_tanh_gaussian(t, fa.mean, fa.log_std, noise, action_scale);
  Tensor qin = t.concat(t.constant(obs), s.action);
  Tensor q = forward(critic_spec, critic1, t, qin).out;
  if (critic2) q = minimum(t, q, forward(critic_spec, *critic2, t, qin).out);
  Tensor loss = t.mean(t.sub(t.scalar_mul(s.log_prob, alpha), q));
  return {loss, s.log_prob};
}

/// loss = -mean Q(o, pi(o)) for the deterministic policy.
inline Tensor ddpg_actor_loss(Tape& t, const NetworkSpec& actor_spec,
                              std::span<const Tensor> actor_handles, const Tensor& obs,
                              double action_scale, const NetworkSpec& critic_spec,
                              const Params& critic) {
  Forward fa = forward(actor_spec, actor_handles, t, obs);
  Tensor a = t.scalar_mul(fa.out, action_scale);
  Tensor q = forward(critic_spec, critic, t, t.concat(t.constant(obs), a)).out;
  return t.scalar_mul(t.mean(q), -1.0);
}

/// Temperature loss is -log_alpha * (mean log pi + H*); its gradient in
/// log_alpha is computed in closed form.
inline double temperature_grad(double mean_logp, double target_entropy) {
  return -(mean_logp + target_entropy);
}

// ---------------------------------------------------------------------------
// Soft actor-critic.
// ---------------------------------------------------------------------------

class SacAgent final : public Agent {
 public:
  SacAgent(int obs_dim, int action_dim, double action_scale, const TrainConfig& cfg,
           std::uint64_t root_seed)
      : cfg_(cfg),
        action_dim_(action_dim),
        action_scale_(action_scale),
        target_entropy_(cfg.resolved_target_entropy(action_dim)) {
    actor_spec_ = {cfg.actor.variant, obs_dim, cfg.actor.hidden_dim, cfg.actor.num_blocks,
                   action_dim, Head::gaussian_policy};
    critic_spec_ = {cfg.critic.variant, obs_dim + action_dim, cfg.critic.hidden_dim,
                    cfg.critic.num_blocks, 1, Head::q_value};
    init_nets(derive_seed(root_seed, Stream::actor_init), derive_seed(root_seed, Stream::critic_init));
  }

  std::vector<double> act(std::span<const double> obs_norm, std::mt19937_64& rng,
                          bool stochastic) override {
    Tape t;
    Tensor in = Tensor::from_vec({1, static_cast<int>(obs_norm.size())},
                                 std::vector<double>(obs_norm.begin(), obs_norm.end()));
    Forward f = forward(actor_spec_, actor_, t, in);
    if (!stochastic) {
      Tensor a = t.scalar_mul(t.tanh(f.mean), action_scale_);
      return a.to_vec();
    }
    Tensor noise = Tensor::empty({1, action_dim_});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < action_dim_; ++i) noise[i] = normal(rng);
    return sample_tanh_gaussian(t, f.mean, f.log_std, noise, action_scale_).action.to_vec();
  }

  UpdateStats update(const Batch& b, std::mt19937_64& rng, bool want_features) override {
    const int n = b.o.rows();
    const double alpha_now = alpha();

    // TD target y = r + gamma (1-done) (Q_target(o', a') - alpha log pi(a'|o'))
    // with one fresh action sample; no gradients flow here.
    Tensor y = Tensor::empty({n, 1});
    {
      Tape t;
      Forward fa = forward(actor_spec_, actor_, t, b.o_next);
      Tensor noise = draw_noise(n, rng);
      GaussianSample s = sample_tanh_gaussian(t, fa.mean, fa.log_std, noise, action_scale_);
      Tensor qin = t.concat(t.constant(b.o_next), s.action);
      Tensor q1 = forward(critic_spec_, target_critic_, t, qin).out;
      Tensor qt = cfg_.clipped_double_q
                      ? minimum(t, q1, forward(critic_spec_, target_critic2_, t, qin).out)
                      : q1;
      for (int i = 0; i < n; ++i)
        y[i] = b.r[i] + cfg_.gamma * (1.0 - b.done[i]) * (qt[i] - alpha_now * s.log_prob[i]);
    }

    UpdateStats stats;
    Tensor critic_in = hstack({b.o, b.a});
    stats.critic_loss = critic_step(critic_, critic_opt_, critic_in, y, want_features,
                                    want_features ? &stats : nullptr);
    if (cfg_.clipped_double_q) {
      const double l2 = critic_step(critic2_, critic2_opt_, critic_in, y, false, nullptr);
      stats.critic_loss = 0.5 * (stats.critic_loss + l2);
    }

    // Actor: minimize alpha log pi(a|o) - Q(o, a), critic held constant.
    double mean_logp = 0;
    {
      Tape t;
      auto ha = watch_params(t, actor_);
      SacActorLoss al = sac_actor_loss(t, actor_spec_, ha, b.o, draw_noise(n, rng), alpha_now,
                                       action_scale_, critic_spec_, critic_,
                                       cfg_.clipped_double_q ? &critic2_ : nullptr);
      Gradients g = t.backward(al.loss);
      std::vector<Tensor> grads;
      grads.reserve(ha.size());
      for (const Tensor& h : ha) grads.push_back(g.of(h));
      actor_opt_.step(actor_, grads);
      stats.actor_loss = al.loss.scalar();
      for (int i = 0; i < n; ++i) mean_logp += al.log_prob[i];
      mean_logp /= n;
    }

    alpha_opt_.step(log_alpha_, temperature_grad(mean_logp, target_entropy_));

    polyak_update(target_critic_, critic_, cfg_.tau);
    if (cfg_.clipped_double_q) polyak_update(target_critic2_, critic2_, cfg_.tau);

    stats.alpha = alpha();
    return stats;
  }

  void periodic_reset(std::uint64_t seed) override {
    init_nets(derive_seed(seed, Stream::actor_init), derive_seed(seed, Stream::critic_init));
  }

  void collect_state(std::vector<std::pair<std::string, Tensor>>& out) const override {
    detail::collect_params(out, "actor", actor_);
    detail::collect_params(out, "critic", critic_);
    detail::collect_params(out, "target_critic", target_critic_);
    detail::collect_opt(out, "opt.actor", actor_opt_);
    detail::collect_opt(out, "opt.critic", critic_opt_);
    if (cfg_.clipped_double_q) {
      detail::collect_params(out, "critic2", critic2_);
      detail::collect_params(out, "target_critic2", target_critic2_);
      detail::collect_opt(out, "opt.critic2", critic2_opt_);
    }
    out.emplace_back("log_alpha", Tensor::scalar_of(log_alpha_));
    out.emplace_back("opt.alpha.t", Tensor::scalar_of(static_cast<double>(alpha_opt_.step_count())));
    out.emplace_back("opt.alpha.m", Tensor::scalar_of(alpha_opt_.m()));
    out.emplace_back("opt.alpha.v", Tensor::scalar_of(alpha_opt_.v()));
  }

  void restore_state(const std::vector<std::pair<std::string, Tensor>>& in) override {
    detail::restore_params(in, "actor", actor_);
    detail::restore_params(in, "critic", critic_);
    detail::restore_params(in, "target_critic", target_critic_);
    detail::restore_opt(in, "opt.actor", actor_opt_);
    detail::restore_opt(in, "opt.critic", critic_opt_);
    if (cfg_.clipped_double_q) {
      detail::restore_params(in, "critic2", critic2_);
      detail::restore_params(in, "target_critic2", target_critic2_);
      detail::restore_opt(in, "opt.critic2", critic2_opt_);
    }
    log_alpha_ = detail::find_state(in, "log_alpha").scalar();
    alpha_opt_.restore(static_cast<std::int64_t>(detail::find_state(in, "opt.alpha.t").scalar()),
                       detail::find_state(in, "opt.alpha.m").scalar(),
                       detail::find_state(in, "opt.alpha.v").scalar());
  }

  const Params& actor_params() const override { return actor_; }
  const Params& critic_params() const override { return critic_; }
  const Params& target_critic_params() const { return target_critic_; }
  void set_target_critic(Params p) { target_critic_ = std::move(p); }
  const NetworkSpec& actor_spec() const { return actor_spec_; }
  const NetworkSpec& critic_spec() const { return critic_spec_; }
  double alpha() const override { return std::exp(log_alpha_); }
  double log_alpha() const { return log_alpha_; }
  double target_entropy() const { return target_entropy_; }

 private:
  void init_nets(std::uint64_t actor_seed, std::uint64_t critic_seed) {
    actor_ = init_params(actor_spec_, actor_seed);
    critic_ = init_params(critic_spec_, critic_seed);
    target_critic_ = critic_;
    AdamWConfig ac{cfg_.actor.lr, cfg_.beta1, cfg_.beta2, cfg_.weight_decay, cfg_.adam_eps};
    AdamWConfig cc{cfg_.critic.lr, cfg_.beta1, cfg_.beta2, cfg_.weight_decay, cfg_.adam_eps};
    actor_opt_ = AdamW(actor_, ac);
    critic_opt_ = AdamW(critic_, cc);
    if (cfg_.clipped_double_q) {
      critic2_ = init_params(critic_spec_, splitmix64(critic_seed ^ 0x517cc1b727220a95ULL));
      target_critic2_ = critic2_;
      critic2_opt_ = AdamW(critic2_, cc);
    }
    log_alpha_ = std::log(cfg_.init_alpha);
    // No weight decay on log alpha: a policy sitting exactly at the target
    // entropy must leave the temperature fixed.
    alpha_opt_ = ScalarAdamW(AdamWConfig{cfg_.alpha_lr, cfg_.beta1, cfg_.beta2, 0.0, cfg_.adam_eps});
  }

  double critic_step(Params& critic, AdamW& opt, const Tensor& input, const Tensor& y,
                     bool want_features, UpdateStats* stats) {
    Tape t;
    auto hc = watch_params(t, critic);
    Forward f;
    Tensor loss = critic_td_loss(t, critic_spec_, hc, input, y, &f);
    Gradients g = t.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(hc.size());
    for (const Tensor& h : hc) grads.push_back(g.of(h));
    opt.step(critic, grads);
    if (want_features && stats) {
      stats->features = f.features.detached();
      stats->relu_acts = f.relu_acts.empty() ? Tensor::zeros({input.rows(), 1})
                                             : hstack(f.relu_acts);
    }
    return loss.scalar();
  }

  Tensor draw_noise(int rows, std::mt19937_64& rng) const {
    Tensor noise = Tensor::empty({rows, action_dim_});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = normal(rng);
    return noise;
  }

  TrainConfig cfg_;
  int action_dim_;
  double action_scale_;
  double target_entropy_;
  NetworkSpec actor_spec_, critic_spec_;
  Params actor_, critic_, critic2_, target_critic_, target_critic2_;
  AdamW actor_opt_, critic_opt_, critic2_opt_;
  ScalarAdamW alpha_opt_;
  double log_alpha_ = 0;
};

// ---------------------------------------------------------------------------
// Deterministic policy gradient.
// ---------------------------------------------------------------------------

class DdpgAgent final : public Agent {
 public:
  DdpgAgent(int obs_dim, int action_dim, double action_scale, const TrainConfig& cfg,
            std::uint64_t root_seed)
      : cfg_(cfg), action_dim_(action_dim), action_scale_(action_scale) {
    actor_spec_ = {cfg.actor.variant, obs_dim, cfg.actor.hidden_dim, cfg.actor.num_blocks,
                   action_dim, Head::deterministic_policy};
    critic_spec_ = {cfg.critic.variant, obs_dim + action_dim, cfg.critic.hidden_dim,
                    cfg.critic.num_blocks, 1, Head::q_value};
    init_nets(derive_seed(root_seed, Stream::actor_init), derive_seed(root_seed, Stream::critic_init));
  }

  std::vector<double> act(std::span<const double> obs_norm, std::mt19937_64& rng,
                          bool stochastic) override {
    Tape t;
    Tensor in = Tensor::from_vec({1, static_cast<int>(obs_norm.size())},
                                 std::vector<double>(obs_norm.begin(), obs_norm.end()));
    Forward f = forward(actor_spec_, actor_, t, in);
    std::vector<double> a = t.scalar_mul(f.out, action_scale_).to_vec();
    if (stochastic) {
      std::normal_distribution<double> normal(0.0, cfg_.exploration_noise);
      for (double& v : a) v = std::clamp(v + normal(rng), -action_scale_, action_scale_);
    }
    return a;
  }

  UpdateStats update(const Batch& b, std::mt19937_64& rng, bool want_features) override {
    (void)rng;  // deterministic policy: updates draw no noise
    const int n = b.o.rows();

    Tensor y = Tensor::empty({n, 1});
    {
      Tape t;
      Forward fa = forward(actor_spec_, target_actor_, t, b.o_next);
      Tensor a2 = t.scalar_mul(fa.out, action_scale_);
      Tensor qin = t.concat(t.constant(b.o_next), a2);
      Tensor qt = forward(critic_spec_, target_critic_, t, qin).out;
      for (int i = 0; i < n; ++i) y[i] = b.r[i] + cfg_.gamma * (1.0 - b.done[i]) * qt[i];
    }

    UpdateStats stats;
    {
      Tape t;
      auto hc = watch_params(t, critic_);
      Forward f;
      Tensor loss = critic_td_loss(t, critic_spec_, hc, hstack({b.o, b.a}), y, &f);
      Gradients g = t.backward(loss);
      std::vector<Tensor> grads;
      for (const Tensor& h : hc) grads.push_back(g.of(h));
      critic_opt_.step(critic_, grads);
      stats.critic_loss = loss.scalar();
      if (want_features) {
        stats.features = f.features.detached();
        stats.relu_acts = f.relu_acts.empty() ? Tensor::zeros({n, 1}) : hstack(f.relu_acts);
      }
    }
    {
      Tape t;
      auto ha = watch_params(t, actor_);
      Tensor loss = ddpg_actor_loss(t, actor_spec_, ha, b.o, action_scale_, critic_spec_, critic_);
      Gradients g = t.backward(loss);
      std::vector<Tensor> grads;
      for (const Tensor& h : ha) grads.push_back(g.of(h));
      actor_opt_.step(actor_, grads);
      stats.actor_loss = loss.scalar();
    }

    polyak_update(target_critic_, critic_, cfg_.tau);
    polyak_update(target_actor_, actor_, cfg_.tau);
    stats.alpha = 0.0;
    return stats;
  }

  void periodic_reset(std::uint64_t seed) override {
    init_nets(derive_seed(seed, Stream::actor_init), derive_seed(seed, Stream::critic_init));
  }

  void collect_state(std::vector<std::pair<std::string, Tensor>>& out) const override {
    detail::collect_params(out, "actor", actor_);
    detail::collect_params(out, "critic", critic_);
    detail::collect_params(out, "target_actor", target_actor_);
    detail::collect_params(out, "target_critic", target_critic_);
    detail::collect_opt(out, "opt.actor", actor_opt_);
    detail::collect_opt(out, "opt.critic", critic_opt_);
  }

  void restore_state(const std::vector<std::pair<std::string, Tensor>>& in) override {
    detail::restore_params(in, "actor", actor_);
    detail::restore_params(in, "critic", critic_);
    detail::restore_params(in, "target_actor", target_actor_);
    detail::restore_params(in, "target_critic", target_critic_);
    detail::restore_opt(in, "opt.actor", actor_opt_);
    detail::restore_opt(in, "opt.critic", critic_opt_);
  }

  const Params& actor_params() const override { return actor_; }
  const Params& critic_params() const override { return critic_; }
  const Params& target_critic_params() const { return target_critic_; }
  void set_target_critic(Params p) { target_critic_ = std::move(p); }
  void set_target_actor(Params p) { target_actor_ = std::move(p); }
  const NetworkSpec& actor_spec() const { return actor_spec_; }
  const NetworkSpec& critic_spec() const { return critic_spec_; }

 private:
  void init_nets(std::uint64_t actor_seed, std::uint64_t critic_seed) {
    actor_ = init_params(actor_spec_, actor_seed);
    critic_ = init_params(critic_spec_, critic_seed);
    target_actor_ = actor_;
    target_critic_ = critic_;
    actor_opt_ = AdamW(actor_, {cfg_.actor.lr, cfg_.beta1, cfg_.beta2, cfg_.weight_decay, cfg_.adam_eps});
    critic_opt_ = AdamW(critic_, {cfg_.critic.lr, cfg_.beta1, cfg_.beta2, cfg_.weight_decay, cfg_.adam_eps});
  }

  TrainConfig cfg_;
  int action_dim_;
  double action_scale_;
  NetworkSpec actor_spec_, critic_spec_;
  Params actor_, critic_, target_actor_, target_critic_;
  AdamW actor_opt_, critic_opt_;
};

inline std::unique_ptr<Agent> make_agent(Algo algo, int obs_dim, int action_dim,
                                         double action_scale, const TrainConfig& cfg,
                                         std::uint64_t root_seed) {
  if (algo == Algo::sac)
    return std::make_unique<SacAgent>(obs_dim, action_dim, action_scale, cfg, root_seed);
  return std::make_unique<DdpgAgent>(obs_dim, action_dim, action_scale, cfg, root_seed);
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::int64_t env_step = 0;
  std::int64_t grad_step = 0;
  double episode_return = std::numeric_limits<double>::quiet_NaN();
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double dormant_ratio = std::numeric_limits<double>::quiet_NaN();
  double stable_rank = std::numeric_limits<double>::quiet_NaN();
  double feature_norm = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  std::int64_t env_steps = 0;
  std::int64_t grad_updates = 0;
  std::int64_t episodes = 0;
  std::int64_t resets = 0;
};

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_row;
  std::function<void(std::int64_t env_step)> on_checkpoint;
  /// Called once per metrics row when feature matrices are available.
  std::function<void(const MetricsRow&, const Tensor& features, const Tensor& relu_acts)> on_features;
  std::function<void()> after_reset;
};

/// Off-policy training: one collected transition per env step, then
/// `replay_ratio` gradient updates; deterministic given the root seed.
template <class Env>
class TrainRun {
 public:
  TrainRun(Env env, Algo algo, const TrainConfig& cfg, std::uint64_t seed)
      : env_(std::move(env)), algo_(algo), cfg_(cfg), seed_(seed) {
    const std::string err = validate(cfg_);
    if (!err.empty()) throw std::invalid_argument("TrainConfig invalid, " + err);
    normalizer_ = make_normalizer();
    agent_ = make_agent(algo, env_.obs_dim(), env_.action_dim(), env_.action_limit(), cfg_, seed);
    buffer_ = std::make_unique<ReplayBuffer>(static_cast<size_t>(cfg_.buffer_capacity));
  }

  MetricsLog run(const TrainHooks& hooks = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto sample_rng = make_rng(seed_, Stream::sampling);
    auto explore_rng = make_rng(seed_, Stream::exploration);
    auto update_rng = make_rng(seed_, Stream::policy_noise);
    auto act_rng = make_rng(seed_, Stream::policy_noise, 1);

    MetricsLog log;
    if (cfg_.total_env_steps == 0) return log;

    std::vector<double> obs = env_.reset(derive_seed(seed_, Stream::env, 0));
    normalizer_->observe(obs);
    double episode_return = 0.0;
    int episode_steps = 0;
    UpdateStats last{};
    bool have_update = false;

    for (std::int64_t step = 1; step <= cfg_.total_env_steps; ++step) {
      std::vector<double> action;
      if (step <= cfg_.warmup_steps) {
        std::uniform_real_distribution<double> u(-env_.action_limit(), env_.action_limit());
        action.resize(env_.action_dim());
        for (double& a : action) a = u(explore_rng);
      } else {
        auto ob = normalizer_->at_action(obs);
        auto& rng = (algo_ == Algo::ddpg) ? explore_rng : act_rng;
        action = agent_->act(ob, rng, /*stochastic=*/true);
      }

      auto res = env_.step(action);
      normalizer_->observe(res.obs);
      buffer_->push({normalizer_->for_buffer(obs), action, res.reward,
                     normalizer_->for_buffer(res.obs), res.done});
      episode_return += res.reward;
      ++episode_steps;
      obs = std::move(res.obs);
      log.env_steps = step;

      const bool episode_end = res.done || episode_steps >= env_.episode_limit();

      if (step > cfg_.warmup_steps) {
        for (int k = 0; k < cfg_.replay_ratio; ++k) {
          const bool want = episode_end && k == cfg_.replay_ratio - 1;
          Batch raw = assemble_batch(*buffer_, buffer_->sample_indices(cfg_.batch_size, sample_rng));
          Batch nb{normalizer_->train_batch(raw.o), raw.a, raw.r,
                   normalizer_->train_batch(raw.o_next), raw.done};
          last = agent_->update(nb, update_rng, want);
          have_update = true;
          ++log.grad_updates;
          if (cfg_.reset_interval > 0 && log.grad_updates % cfg_.reset_interval == 0) {
            agent_->periodic_reset(derive_seed(seed_, Stream::reset, static_cast<std::uint64_t>(log.resets)));
            ++log.resets;
            if (hooks.after_reset) hooks.after_reset();
          }
        }
      }

      if (episode_end) {
        ++log.episodes;
        MetricsRow row;
        row.env_step = step;
        row.grad_step = log.grad_updates;
        row.episode_return = episode_return;
        if (have_update) {
          row.critic_loss = last.critic_loss;
          row.actor_loss = last.actor_loss;
          row.alpha = last.alpha;
          if (last.features.defined()) {
            row.stable_rank = static_cast<double>(stable_rank(last.features, cfg_.tau_rank));
            row.feature_norm = feature_norm(last.features);
            row.dormant_ratio = dormant_ratio(last.relu_acts, cfg_.eps_dormant);
          }
        }
        row.wall_time_s = cfg_.zero_wall_time
                              ? 0.0
                              : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.rows.push_back(row);
        if (hooks.on_row) hooks.on_row(row);
        if (hooks.on_features && last.features.defined())
          hooks.on_features(row, last.features, last.relu_acts);
        obs = env_.reset(derive_seed(seed_, Stream::env, static_cast<std::uint64_t>(log.episodes)));
        normalizer_->observe(obs);
        episode_return = 0.0;
        episode_steps = 0;
      }

      if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0 && hooks.on_checkpoint)
        hooks.on_checkpoint(step);
    }
    return log;
  }

  Agent& agent() { return *agent_; }
  const Agent& agent() const { return *agent_; }
  ReplayBuffer& buffer() { return *buffer_; }
  Normalizer& normalizer() { return *normalizer_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::unique_ptr<Normalizer> make_normalizer() {
    if (cfg_.normalizer == NormalizerKind::oracle)
      return std::make_unique<Normalizer>(
          Normalizer::with_oracle(cfg_.oracle_stats_path, env_.obs_dim()));
    return std::make_unique<Normalizer>(cfg_.normalizer, env_.obs_dim(), cfg_.fixed_initial_n);
  }

  Env env_;
  Algo algo_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Normalizer> normalizer_;
  std::unique_ptr<Agent> agent_;
  std::unique_ptr<ReplayBuffer> buffer_;
};

}  // namespace simba
