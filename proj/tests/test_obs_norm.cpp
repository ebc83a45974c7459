#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "simba/obs_norm.hpp"

using namespace simba;

namespace {

struct TwoPass {
  std::vector<double> mean, var;
};

TwoPass two_pass(const std::vector<std::vector<double>>& xs) {
  const size_t d = xs[0].size();
  TwoPass out{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& x : xs)
    for (size_t i = 0; i < d; ++i) out.mean[i] += x[i];
  for (size_t i = 0; i < d; ++i) out.mean[i] /= xs.size();
  for (const auto& x : xs)
    for (size_t i = 0; i < d; ++i) out.var[i] += (x[i] - out.mean[i]) * (x[i] - out.mean[i]);
  for (size_t i = 0; i < d; ++i) out.var[i] /= xs.size();  // population variance
  return out;
}

}  // namespace

TEST_CASE("running stats recursion", "[obsnorm]") {
  SECTION("single sample") {
    RunningStats s(1);
    s.update(std::vector<double>{1.0});
    CHECK(s.mu[0] == 1.0);
    CHECK(s.sigma2[0] == 0.0);
    CHECK(s.count == 1);
  }
  SECTION("two samples") {
    RunningStats s(1);
    s.update(std::vector<double>{1.0});
    s.update(std::vector<double>{2.0});
    CHECK(std::abs(s.mu[0] - 1.5) < 1e-12);
    CHECK(std::abs(s.sigma2[0] - 0.25) < 1e-12);
  }
  SECTION("three samples match the batch oracle exactly") {
    RunningStats s(1);
    for (double v : {1.0, 2.0, 3.0}) s.update(std::vector<double>{v});
    CHECK(std::abs(s.mu[0] - 2.0) < 1e-12);
    CHECK(std::abs(s.sigma2[0] - 2.0 / 3.0) < 1e-12);
  }
  SECTION("dimension mismatch rejected") {
    RunningStats s(2);
    CHECK_THROWS_AS(s.update(std::vector<double>{1.0}), std::invalid_argument);
  }
}

TEST_CASE("rs_apply", "[obsnorm]") {
  RunningStats s(1);
  SECTION("first observation normalizes to zero") {
    s.update(std::vector<double>{3.7});
    auto o = s.apply(std::vector<double>{3.7});
    CHECK(o[0] == 0.0);
  }
  SECTION("o equal to the mean maps to zero") {
    for (double v : {1.0, 2.0, 3.0}) s.update(std::vector<double>{v});
    CHECK(s.apply(std::vector<double>{2.0})[0] == 0.0);
  }
  SECTION("plug-in oracle for the [1,2,3] stream") {
    for (double v : {1.0, 2.0, 3.0}) s.update(std::vector<double>{v});
    const double expect = (3.0 - 2.0) / std::sqrt(2.0 / 3.0 + 1e-8);
    auto o = s.apply(std::vector<double>{3.0});
    CHECK(std::abs(o[0] - expect) < 1e-12);
    CHECK(std::abs(o[0] - 1.2247) < 1e-3);
  }
  SECTION("apply is pure") {
    for (double v : {1.0, 2.0}) s.update(std::vector<double>{v});
    const RunningStats before = s;
    (void)s.apply(std::vector<double>{9.0});
    CHECK(before.mu == s.mu);
    CHECK(before.sigma2 == s.sigma2);
    CHECK(before.count == s.count);
  }
}

TEST_CASE("welford-oracle equivalence and order insensitivity", "[obsnorm]") {
  std::mt19937_64 rng(1234);
  const int d = 6, n = 20000;
  std::vector<double> scales(d);
  for (int i = 0; i < d; ++i) scales[i] = std::pow(10.0, -2.0 + 4.0 * i / (d - 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> xs(n, std::vector<double>(d));
  for (auto& x : xs)
    for (int i = 0; i < d; ++i) x[i] = scales[i] * (normal(rng) + 0.5);

  RunningStats s(d);
  for (const auto& x : xs) s.update(x);
  TwoPass oracle = two_pass(xs);
  for (int i = 0; i < d; ++i) {
    CHECK(std::abs(s.mu[i] - oracle.mean[i]) / std::max(1e-300, std::abs(oracle.mean[i])) < 1e-6);
    CHECK(std::abs(s.sigma2[i] - oracle.var[i]) / std::max(1e-300, std::abs(oracle.var[i])) < 1e-6);
  }

  std::shuffle(xs.begin(), xs.end(), rng);
  RunningStats s2(d);
  for (const auto& x : xs) s2.update(x);
  for (int i = 0; i < d; ++i) {
    CHECK(std::abs(s.mu[i] - s2.mu[i]) / std::max(1e-12, std::abs(s.mu[i])) < 1e-9);
    CHECK(std::abs(s.sigma2[i] - s2.sigma2[i]) / std::max(1e-12, std::abs(s.sigma2[i])) < 1e-9);
  }
}

TEST_CASE("normalizer kinds", "[obsnorm]") {
  SECTION("none is the identity") {
    Normalizer n(NormalizerKind::none, 2);
    n.observe(std::vector<double>{5.0, -1.0});
    auto o = n.at_action(std::vector<double>{5.0, -1.0});
    CHECK(o[0] == 5.0);
    CHECK(o[1] == -1.0);
  }
  SECTION("oracle with unit stats divides by sqrt(1+eps)") {
    Normalizer n(NormalizerKind::oracle, 1);
    RunningStats s(1);
    s.mu[0] = 0.0;
    s.sigma2[0] = 1.0;
    s.count = 1;
    n.set_stats(s);
    auto o = n.at_action(std::vector<double>{2.0});
    CHECK(std::abs(o[0] - 2.0 / std::sqrt(1.0 + 1e-8)) < 1e-15);
  }
  SECTION("env-wrapper stores stale statistics, rsnorm does not") {
    Normalizer wrapper(NormalizerKind::env_wrapper_rsnorm, 1);
    Normalizer rs(NormalizerKind::rsnorm, 1);
    // phase one: observations near 0
    std::vector<double> stored_wrapper, stored_rs;
    std::vector<double> early{0.1};
    for (int i = 0; i < 10; ++i) {
      std::vector<double> o{0.1 * ((i % 3) - 1)};
      wrapper.observe(o);
      rs.observe(o);
    }
    stored_wrapper = wrapper.for_buffer(early);
    stored_rs = rs.for_buffer(early);
    CHECK(stored_rs[0] == early[0]);  // raw
    // phase two: the distribution shifts
    for (int i = 0; i < 200; ++i) {
      std::vector<double> o{50.0 + (i % 5)};
      wrapper.observe(o);
      rs.observe(o);
    }
    // replaying the early transition now
    Tensor wrapped = wrapper.train_batch(Tensor::from_vec({1, 1}, stored_wrapper));
    Tensor fresh = rs.train_batch(Tensor::from_vec({1, 1}, stored_rs));
    CHECK(std::abs(wrapped[0] - fresh[0]) > 0.1);  // stats drifted; values diverge
  }
  SECTION("fixed-initial-n freezes after n observations") {
    Normalizer n(NormalizerKind::fixed_initial_n, 1, /*fixed_n=*/3);
    for (int i = 0; i < 10; ++i) n.observe(std::vector<double>{static_cast<double>(i)});
    CHECK(n.stats().count == 3);
    CHECK(std::abs(n.stats().mu[0] - 1.0) < 1e-12);  // mean of 0,1,2
  }
  SECTION("layernorm-obs normalizes each observation by itself") {
    Normalizer n(NormalizerKind::layernorm_obs, 3);
    auto o = n.at_action(std::vector<double>{1.0, 2.0, 3.0});
    double m = (o[0] + o[1] + o[2]) / 3.0;
    CHECK(std::abs(m) < 1e-9);
    CHECK(o[2] > o[1]);
  }
  SECTION("batchnorm-obs uses minibatch statistics in train_batch") {
    Normalizer n(NormalizerKind::batchnorm_obs, 2);
    Tensor batch = Tensor::from({3, 2}, {1, 10, 2, 20, 3, 30});
    Tensor out = n.train_batch(batch);
    for (int c = 0; c < 2; ++c) {
      double m = 0;
      for (int r = 0; r < 3; ++r) m += out.at(r, c);
      CHECK(std::abs(m) < 1e-9);
    }
  }
}

TEST_CASE("freeze for evaluation", "[obsnorm]") {
  Normalizer n(NormalizerKind::rsnorm, 1);
  for (double v : {1.0, 2.0, 3.0}) n.observe(std::vector<double>{v});
  FrozenStats frozen = n.freeze();
  const auto count_before = n.stats().count;
  for (int i = 0; i < 100; ++i) (void)frozen.apply(std::vector<double>{4.0});
  CHECK(n.stats().count == count_before);  // eval never mutates
  // frozen apply equals unfrozen apply at the same stats
  auto a = frozen.apply(std::vector<double>{2.5});
  auto b = n.at_action(std::vector<double>{2.5});
  CHECK(a[0] == b[0]);
  // training continues the count contiguously
  n.observe(std::vector<double>{4.0});
  CHECK(n.stats().count == count_before + 1);
}

TEST_CASE("oracle statistics file", "[obsnorm]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "simba_obsnorm_test";
  fs::create_directories(dir);
  const std::string good = (dir / "stats.csv").string();
  {
    std::ofstream f(good);
    f << "dim,mean,var\n0,1.5,4.0\n1,-2.0,0.25\n";
  }
  SECTION("round trip") {
    RunningStats s = load_oracle_stats(good, 2);
    CHECK(s.mu[0] == 1.5);
    CHECK(s.sigma2[1] == 0.25);
    auto o = s.apply(std::vector<double>{3.5, -2.0});
    CHECK(std::abs(o[0] - 2.0 / std::sqrt(4.0 + 1e-8)) < 1e-12);
    CHECK(o[1] == 0.0);
  }
  SECTION("missing file") {
    CHECK_THROWS_WITH(load_oracle_stats((dir / "nope.csv").string(), 2),
                      Catch::Matchers::ContainsSubstring("missing"));
  }
  SECTION("wrong dimension count") {
    CHECK_THROWS_AS(load_oracle_stats(good, 3), std::runtime_error);
  }
  fs::remove_all(dir);
}
