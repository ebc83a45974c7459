#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "simba/optim.hpp"
#include "simba/replay.hpp"

using namespace simba;

namespace {

Params one_param(Shape shape, double value) {
  Params p;
  p.entries.push_back({"w", Tensor::full(std::move(shape), value)});
  return p;
}

}  // namespace

TEST_CASE("adamw update rule", "[optim]") {
  SECTION("bias-corrected first step approximates -lr*sign(g)") {
    Params p = one_param({3}, 0.0);
    AdamW opt(p, {1e-3, 0.9, 0.999, 0.0, 1e-8});
    std::vector<Tensor> g{Tensor::from({3}, {0.5, -2.0, 7.0})};
    opt.step(p, g);
    const Tensor& w = p.entries[0].value;
    CHECK(std::abs(w[0] + 1e-3) < 1e-6);
    CHECK(std::abs(w[1] - 1e-3) < 1e-6);
    CHECK(std::abs(w[2] + 1e-3) < 1e-6);
  }
  SECTION("zero gradient and zero decay leave parameters unchanged") {
    Params p = one_param({2}, 1.5);
    AdamW opt(p, {1e-3, 0.9, 0.999, 0.0, 1e-8});
    std::vector<Tensor> g{Tensor::zeros({2})};
    opt.step(p, g);
    CHECK(p.entries[0].value[0] == 1.5);
    CHECK(p.entries[0].value[1] == 1.5);
  }
  SECTION("pure decay term") {
    Params p = one_param({1}, 1.0);
    AdamW opt(p, {1e-4, 0.9, 0.999, 0.01, 1e-8});
    std::vector<Tensor> g{Tensor::zeros({1})};
    opt.step(p, g);
    CHECK(std::abs(p.entries[0].value[0] - (1.0 - 1e-6)) < 1e-15);
  }
  SECTION("moments track the gradient stream") {
    Params p = one_param({1}, 0.0);
    AdamW opt(p, {1e-2, 0.9, 0.999, 0.0, 1e-8});
    double m = 0, v = 0, w = 0;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 1; t <= 25; ++t) {
      const double grad = u(rng);
      std::vector<Tensor> g{Tensor::from({1}, {grad})};
      opt.step(p, g);
      m = 0.9 * m + 0.1 * grad;
      v = 0.999 * v + 0.001 * grad * grad;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      w -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
      REQUIRE(std::abs(p.entries[0].value[0] - w) < 1e-12);
    }
  }
  SECTION("scalar variant agrees with the tensor variant") {
    Params p = one_param({1}, 0.7);
    AdamWConfig cfg{1e-3, 0.9, 0.999, 0.01, 1e-8};
    AdamW opt(p, cfg);
    ScalarAdamW sopt(cfg);
    double scalar = 0.7;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 10; ++t) {
      const double grad = u(rng);
      std::vector<Tensor> g{Tensor::from({1}, {grad})};
      opt.step(p, g);
      sopt.step(scalar, grad);
      REQUIRE(std::abs(p.entries[0].value[0] - scalar) < 1e-15);
    }
  }
}

TEST_CASE("polyak averaging", "[optim]") {
  Params target = one_param({2}, 0.0), online = one_param({2}, 2.0);
  SECTION("tau = 1 copies the online parameters") {
    Params t = target;
    polyak_update(t, online, 1.0);
    CHECK(t.entries[0].value[0] == 2.0);
  }
  SECTION("tau = 0 leaves the target unchanged") {
    Params t = target;
    polyak_update(t, online, 0.0);
    CHECK(t.entries[0].value[0] == 0.0);
  }
  SECTION("tau = 0.5 interpolates") {
    Params t = target;
    polyak_update(t, online, 0.5);
    CHECK(t.entries[0].value[0] == 1.0);
  }
  SECTION("repeated updates with frozen online parameters converge to them") {
    Params t = target;
    for (int i = 0; i < 5000; ++i) polyak_update(t, online, 5e-3);
    CHECK(std::abs(t.entries[0].value[0] - 2.0) < 1e-9);
  }
}

TEST_CASE("replay buffer", "[optim]") {
  auto make = [](double v) {
    return Transition{{v}, {v}, v, {v + 1}, false};
  };
  SECTION("push one, sample one") {
    ReplayBuffer buf(4);
    buf.push(make(3.0));
    std::mt19937_64 rng(1);
    auto idx = buf.sample_indices(1, rng);
    CHECK(buf.at(idx[0]).r == 3.0);
  }
  SECTION("ring overwrite drops the oldest") {
    ReplayBuffer buf(3);
    for (int i = 0; i < 4; ++i) buf.push(make(i));
    CHECK(buf.size() == 3);
    bool saw_zero = false;
    for (size_t i = 0; i < buf.size(); ++i) saw_zero |= buf.at(i).r == 0.0;
    CHECK_FALSE(saw_zero);
  }
  SECTION("empty buffer rejects sampling") {
    ReplayBuffer buf(3);
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(buf.sample_indices(1, rng), std::runtime_error);
  }
  SECTION("zero capacity rejected") { CHECK_THROWS_AS(ReplayBuffer(0), std::invalid_argument); }
  SECTION("sampling is uniform within 3 sigma over 1e5 draws") {
    ReplayBuffer buf(10);
    for (int i = 0; i < 10; ++i) buf.push(make(i));
    std::mt19937_64 rng(2024);
    std::vector<int> counts(10, 0);
    const int n = 100000;
    auto idx = buf.sample_indices(n, rng);
    for (size_t k : idx) ++counts[static_cast<int>(buf.at(k).r)];
    const double expect = n / 10.0;
    const double sigma = std::sqrt(n * 0.1 * 0.9);
    for (int c : counts) REQUIRE(std::abs(c - expect) <= 3.0 * sigma);
  }
  SECTION("batch assembly preserves values") {
    ReplayBuffer buf(4);
    buf.push({{1, 2}, {0.5}, -1.0, {3, 4}, true});
    Batch b = assemble_batch(buf, {0});
    CHECK(b.o.at(0, 1) == 2.0);
    CHECK(b.a[0] == 0.5);
    CHECK(b.r[0] == -1.0);
    CHECK(b.o_next.at(0, 0) == 3.0);
    CHECK(b.done[0] == 1.0);
  }
}
