#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "simba/rng.hpp"

namespace simba {

/// Torque-limited pendulum swing-up with the classic-control constants
/// (g=10, m=1, l=1, dt=0.05, semi-implicit Euler). The cost is evaluated on
/// the pre-step state: r = -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2); the
/// upright resting state under zero torque is therefore the reward maximum 0.
/// Episodes never terminate; the training loop truncates at a step limit.
class Pendulum {
 public:
  static constexpr int kObsDim = 3;
  static constexpr int kActionDim = 1;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;

  struct StepResult {
    std::array<double, 3> obs;
    double reward;
    bool done;
  };

  std::array<double, 3> reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> utheta(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> uvel(-1.0, 1.0);
    theta_ = wrap(utheta(rng));
    theta_dot_ = uvel(rng);
    return obs();
  }

  StepResult step(double torque) {
    const double u = std::clamp(torque, -kMaxTorque, kMaxTorque);
    const double cost = theta_ * theta_ + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;
    const double accel = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                         3.0 / (kMass * kLength * kLength) * u;
    theta_dot_ = std::clamp(theta_dot_ + accel * kDt, -kMaxSpeed, kMaxSpeed);
    theta_ = wrap(theta_ + theta_dot_ * kDt);
    return {obs(), -cost, false};
  }

  std::array<double, 3> obs() const { return {std::cos(theta_), std::sin(theta_), theta_dot_}; }
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  void set_state(double theta, double theta_dot) {
    theta_ = wrap(theta);
    theta_dot_ = std::clamp(theta_dot, -kMaxSpeed, kMaxSpeed);
  }

  /// Wraps an angle to (-pi, pi].
  static double wrap(double x) {
    x = std::fmod(x + std::numbers::pi, 2.0 * std::numbers::pi);
    if (x <= 0) x += 2.0 * std::numbers::pi;
    return x - std::numbers::pi;
  }

 private:
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

/// Appends noise dimensions with per-dimension scales drawn log-uniform in
/// [1e-2, 1e2] at construction, so the observation mixes scales the way the
/// high-dimensional benchmark tasks do. The true observation passes through
/// in the leading coordinates (optionally rescaled).
struct WrapperSpec {
  int distractor_dims = 0;
  std::vector<double> distractor_scales;  // filled at construction
  std::vector<double> true_dim_scales;    // empty = all ones

  WrapperSpec() = default;
  WrapperSpec(int dims, std::uint64_t seed, std::vector<double> true_scales = {})
      : distractor_dims(dims), true_dim_scales(std::move(true_scales)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2.0, 2.0);  // log10 scale range
    distractor_scales.resize(dims);
    for (int i = 0; i < dims; ++i) distractor_scales[i] = std::pow(10.0, u(rng));
  }
};

inline std::vector<double> wrap_observation(const WrapperSpec& spec, std::span<const double> obs,
                                            std::mt19937_64& rng) {
  std::vector<double> out;
  out.reserve(obs.size() + spec.distractor_dims);
  for (size_t i = 0; i < obs.size(); ++i) {
    const double s = (i < spec.true_dim_scales.size()) ? spec.true_dim_scales[i] : 1.0;
    out.push_back(s * obs[i]);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < spec.distractor_dims; ++i)
    out.push_back(spec.distractor_scales[i] * normal(rng));
  return out;
}

/// Pendulum plus distractor wrapper behind the uniform env interface the
/// training loop expects: reset(seed) / step(action) / dims and bounds.
class PendulumEnv {
 public:
  explicit PendulumEnv(WrapperSpec wrapper = {}, std::uint64_t wrapper_noise_seed = 0)
      : wrapper_(std::move(wrapper)), wrapper_rng_(wrapper_noise_seed) {}

  int obs_dim() const { return Pendulum::kObsDim + wrapper_.distractor_dims; }
  int action_dim() const { return Pendulum::kActionDim; }
  double action_limit() const { return Pendulum::kMaxTorque; }
  int episode_limit() const { return 200; }

  std::vector<double> reset(std::uint64_t seed) {
    auto o = inner_.reset(seed);
    return wrap_observation(wrapper_, o, wrapper_rng_);
  }

  struct StepResult {
    std::vector<double> obs;
    double reward;
    bool done;
  };

  StepResult step(std::span<const double> action) {
    auto r = inner_.step(action.empty() ? 0.0 : action[0]);
    return {wrap_observation(wrapper_, r.obs, wrapper_rng_), r.reward, r.done};
  }

  const Pendulum& inner() const { return inner_; }

 private:
  Pendulum inner_;
  WrapperSpec wrapper_;
  std::mt19937_64 wrapper_rng_;
};

}  // namespace simba
