#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <random>

#include "simba/analysis.hpp"

using namespace simba;

namespace {

Tensor sinusoid_image(int n, double fx, double fy, double amplitude = 1.0, double bias = 0.0) {
  Tensor img = Tensor::empty({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      img.data()[static_cast<std::int64_t>(i) * n + j] =
          bias + amplitude * std::cos(2.0 * M_PI * (fx * i + fy * j) / n);
  return img;
}

Tensor random_image(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor img = Tensor::empty({n, n});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = u(rng);
  return img;
}

NetFactory constant_factory(double value) {
  NetworkSpec spec{Variant::simba, 2, 4, 1, 1, Head::raw};
  return [spec, value](std::uint64_t seed) {
    Params p = init_params(spec, seed);
    for (auto& e : p.entries) std::fill(e.value.data(), e.value.data() + e.value.numel(), 0.0);
    for (auto& e : p.entries)
      if (e.name == "post_ln.g") std::fill(e.value.data(), e.value.data() + e.value.numel(), 1.0);
    for (auto& e : p.entries)
      if (e.name == "head.b") e.value[0] = value;
    return std::make_pair(spec, p);
  };
}

// controlled-spectrum feature matrix: 4 rows, zero column means, covariance
// eigenvalues exactly `lams` (up to roundoff in sqrt)
Tensor spectrum_matrix(const std::vector<double>& lams) {
  const int m = static_cast<int>(lams.size());
  REQUIRE(m <= 3);
  const double h[4][3] = {
      {1, 1, 1},
      {-1, 1, -1},
      {1, -1, -1},
      {-1, -1, 1},
  };  // columns orthogonal to ones and to each other, each with norm 2
  Tensor f = Tensor::zeros({4, m});
  for (int j = 0; j < m; ++j) {
    const double s = std::sqrt(lams[j]);
    for (int i = 0; i < 4; ++i) f.data()[static_cast<std::int64_t>(i) * m + j] = h[i][j] * s;
  }
  return f;
}

}  // namespace

TEST_CASE("grid evaluation", "[analysis]") {
  GridSpec grid{100.0, 24};
  SECTION("constant network gives a constant image") {
    Tensor img = evaluate_on_grid(constant_factory(3.25), 1, grid);
    for (std::int64_t i = 0; i < img.numel(); ++i) REQUIRE(img[i] == 3.25);
  }
  SECTION("identity wiring reproduces the x-coordinate grid") {
    NetworkSpec spec{Variant::mlp, 2, 4, 0, 1, Head::raw};
    NetFactory f = [spec](std::uint64_t) {
      Params p = init_params(spec, 0);
      for (auto& e : p.entries) std::fill(e.value.data(), e.value.data() + e.value.numel(), 0.0);
      for (auto& e : p.entries)
        if (e.name == "head.w") e.value[0] = 1.0;  // out = x
      return std::make_pair(spec, p);
    };
    Tensor img = evaluate_on_grid(f, 1, grid);
    for (int i = 0; i < grid.divisions; ++i) {
      const double x = -100.0 + 200.0 * i / (grid.divisions - 1);
      for (int j = 0; j < grid.divisions; ++j) REQUIRE(img.at(i, j) == x);
    }
  }
  SECTION("random simba matches the single-point forward oracle") {
    NetworkSpec spec{Variant::simba, 2, 16, 2, 1, Head::raw};
    NetFactory f = make_factory(spec);
    Tensor img = evaluate_on_grid(f, 99, grid);
    Params p = init_params(spec, 99);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pick(0, grid.divisions - 1);
    for (int k = 0; k < 20; ++k) {
      const int i = pick(rng), j = pick(rng);
      const double x = -100.0 + 200.0 * i / (grid.divisions - 1);
      const double y = -100.0 + 200.0 * j / (grid.divisions - 1);
      Tape t;
      Tensor out = forward(spec, p, t, Tensor::from({1, 2}, {x, y})).out;
      REQUIRE(std::abs(img.at(i, j) - out[0]) < 1e-9);
    }
  }
  SECTION("non-scalar outputs rejected") {
    NetworkSpec spec{Variant::simba, 2, 4, 0, 3, Head::raw};
    CHECK_THROWS_AS(evaluate_on_grid(make_factory(spec), 1, grid), std::invalid_argument);
  }
}

TEST_CASE("dft2 against a brute-force oracle", "[analysis]") {
  const int n = 8;
  Tensor img = random_image(n, 3);
  Eigen::MatrixXcd f = dft2(img);
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) {
      std::complex<double> acc = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          acc += img.at(i, j) *
                 std::polar(1.0, -2.0 * M_PI * (static_cast<double>(p) * i + static_cast<double>(q) * j) / n);
      REQUIRE(std::abs(f(p, q) - acc) < 1e-9);
    }
}

TEST_CASE("complexity measure", "[analysis]") {
  SECTION("constant image scores zero") {
    CHECK(complexity(Tensor::full({300, 300}, 4.2)) == 0.0);
    CHECK(complexity(Tensor::zeros({64, 64})) == 0.0);  // all-zero spectrum defined as 0
  }
  SECTION("pure sinusoids score their frequency") {
    for (double f : {1.0, 5.0, 20.0}) {
      Tensor img = sinusoid_image(300, f, 0.0);
      CHECK(std::abs(complexity(img) - f) < 0.1);
    }
  }
  SECTION("transpose symmetry") {
    Tensor img = random_image(32, 7);
    Tensor tr = Tensor::empty({32, 32});
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) tr.data()[static_cast<std::int64_t>(j) * 32 + i] = img.at(i, j);
    CHECK(complexity(img) == Catch::Approx(complexity(tr)).epsilon(1e-12));
  }
  SECTION("monotone in frequency") {
    double prev = -1;
    for (double f : {2.0, 7.0, 19.0, 44.0, 90.0}) {
      const double c = complexity(sinusoid_image(300, f, 3.0));
      REQUIRE(c > prev);
      prev = c;
    }
  }
  SECTION("bounded by the Nyquist limit") {
    for (int s = 0; s < 5; ++s) {
      const double c = complexity(random_image(64, 100 + s));
      REQUIRE(c >= 0.0);
      REQUIRE(c <= 32.0);
    }
  }
  SECTION("parseval identity") {
    for (int s = 0; s < 3; ++s) {
      Tensor img = random_image(50, 200 + s);
      Eigen::MatrixXcd f = dft2(img);
      double spatial = 0;
      for (std::int64_t i = 0; i < img.numel(); ++i) spatial += img[i] * img[i];
      const double spectral = f.squaredNorm() / (50.0 * 50.0);
      REQUIRE(std::abs(spectral - spatial) / spatial < 1e-6);
    }
  }
}

TEST_CASE("simplicity score", "[analysis]") {
  SECTION("constant networks score 1/floor with zero-width interval") {
    GridSpec grid{100.0, 16};
    SimplicityReport rep = simplicity_score(constant_factory(2.0), 4, grid, 5);
    CHECK(rep.score == Catch::Approx(1.0 / kComplexityFloor));
    CHECK(rep.ci_high - rep.ci_low == 0.0);
    CHECK(rep.mean_c == 0.0);
    CHECK(rep.rsnorm_bypassed);
    CHECK_FALSE(rep.image_standardized);
  }
  SECTION("aggregation arithmetic for c = {1, 3}") {
    SimplicityReport rep = aggregate_simplicity({1.0, 3.0});
    CHECK(rep.score == Catch::Approx(2.0 / 3.0).epsilon(1e-5));
    CHECK(rep.mean_c == 2.0);
  }
  SECTION("parallel evaluation equals the sequential order") {
    GridSpec grid{100.0, 16};
    NetworkSpec spec{Variant::simba, 2, 8, 1, 1, Head::raw};
    SimplicityReport a = simplicity_score(make_factory(spec), 6, grid, 31, 1);
    SimplicityReport b = simplicity_score(make_factory(spec), 6, grid, 31, 2);
    REQUIRE(a.complexities.size() == b.complexities.size());
    for (size_t i = 0; i < a.complexities.size(); ++i)
      REQUIRE(a.complexities[i] == b.complexities[i]);
  }
  SECTION("score is invariant to initialization order") {
    std::vector<double> c{0.5, 2.0, 1.7, 9.0};
    SimplicityReport a = aggregate_simplicity(c);
    std::reverse(c.begin(), c.end());
    SimplicityReport b = aggregate_simplicity(c);
    CHECK(a.score == b.score);
    CHECK(a.ci_low == b.ci_low);
  }
}

TEST_CASE("stable rank", "[analysis]") {
  SECTION("constructed spectrum {1, 0.5, 0.005} with tau 0.01") {
    Tensor f = spectrum_matrix({1.0, 0.5, 0.005});
    CHECK(stable_rank(f, 0.01) == 2);
  }
  SECTION("zero matrix has rank 0") { CHECK(stable_rank(Tensor::zeros({6, 4}), 0.01) == 0); }
  SECTION("matches an independent SVD oracle exactly on controlled spectra") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> above(0.1, 10.0), below(1e-6, 1e-3);
    for (int trial = 0; trial < 25; ++trial) {
      std::uniform_int_distribution<int> nlam(1, 3);
      const int m = nlam(rng);
      std::vector<double> lams(m);
      int expect = 0;
      for (double& l : lams) {
        if (rng() % 2) {
          l = above(rng);
          ++expect;
        } else {
          l = below(rng);
        }
      }
      Tensor f = spectrum_matrix(lams);
      // oracle: singular values of centered F / sqrt(d), squared
      Eigen::MatrixXd x(4, m);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < m; ++j) x(i, j) = f.at(i, j);
      x.rowwise() -= x.colwise().mean().eval();
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(x / 2.0);  // sqrt(d) = 2
      int oracle = 0;
      for (int j = 0; j < svd.singularValues().size(); ++j)
        if (svd.singularValues()[j] * svd.singularValues()[j] > 0.01) ++oracle;
      REQUIRE(stable_rank(f, 0.01) == oracle);
      REQUIRE(stable_rank(f, 0.01) == expect);
    }
  }
  SECTION("invariant under row permutation") {
    Tensor f = spectrum_matrix({2.0, 0.3});
    Tensor g = Tensor::empty({4, 2});
    const int perm[4] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) g.data()[static_cast<std::int64_t>(i) * 2 + j] = f.at(perm[i], j);
    CHECK(stable_rank(f, 0.01) == stable_rank(g, 0.01));
  }
}

TEST_CASE("dormant ratio and feature norm", "[analysis]") {
  SECTION("all zero activations are fully dormant") {
    CHECK(dormant_ratio(Tensor::zeros({5, 8}), 1e-3) == 1.0);
  }
  SECTION("half dormant") {
    Tensor acts = Tensor::zeros({3, 4});
    for (int i = 0; i < 3; ++i) {
      acts.data()[static_cast<std::int64_t>(i) * 4 + 0] = 5.0;
      acts.data()[static_cast<std::int64_t>(i) * 4 + 2] = -7.0;
    }
    CHECK(dormant_ratio(acts, 1e-3) == 0.5);
  }
  SECTION("strict inequality at eps = 0") {
    Tensor acts = random_image(6, 31);
    CHECK(dormant_ratio(acts, 0.0) == 0.0);
  }
  SECTION("invariant under neuron permutation") {
    Tensor acts = random_image(6, 32);
    for (std::int64_t i = 0; i < 6; ++i) acts.data()[i * 6 + 2] = 1e-9;  // one dormant column
    Tensor perm = Tensor::empty({6, 6});
    const int p[6] = {5, 2, 0, 4, 1, 3};
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) perm.data()[static_cast<std::int64_t>(i) * 6 + j] = acts.at(i, p[j]);
    CHECK(dormant_ratio(acts, 1e-3) == dormant_ratio(perm, 1e-3));
  }
  SECTION("feature norm closed forms") {
    Tensor unit = Tensor::zeros({4, 3});
    for (int i = 0; i < 4; ++i) unit.data()[static_cast<std::int64_t>(i) * 3 + i % 3] = 1.0;
    CHECK(feature_norm(unit) == 1.0);
    CHECK(feature_norm(Tensor::zeros({4, 3})) == 0.0);
    Tensor f = Tensor::empty({5, 2});
    for (int i = 0; i < 5; ++i) {
      f.data()[static_cast<std::int64_t>(i) * 2] = 3.0;
      f.data()[static_cast<std::int64_t>(i) * 2 + 1] = 4.0;
    }
    CHECK(feature_norm(f) == 5.0);
  }
  SECTION("brute-force recomputation matches exactly") {
    for (int trial = 0; trial < 25; ++trial) {
      Tensor f = random_image(8, 900 + trial);
      double acc = 0;
      for (int i = 0; i < 8; ++i) {
        double sq = 0;
        for (int j = 0; j < 8; ++j) sq += f.at(i, j) * f.at(i, j);
        acc += std::sqrt(sq);
      }
      REQUIRE(feature_norm(f) == acc / 8.0);
      int dormant = 0;
      for (int j = 0; j < 8; ++j) {
        double m = 0;
        for (int i = 0; i < 8; ++i) m += std::abs(f.at(i, j));
        if (m / 8.0 < 0.3) ++dormant;
      }
      REQUIRE(dormant_ratio(f, 0.3) == static_cast<double>(dormant) / 8.0);
    }
  }
}

TEST_CASE("probe factory", "[analysis]") {
  NetworkSpec spec{Variant::simba, 2, 8, 1, 1, Head::raw};
  NetFactory f = probe_factory(spec, 100.0);
  SECTION("deterministic per seed") {
    auto [s1, p1] = f(42);
    auto [s2, p2] = f(42);
    for (size_t k = 0; k < p1.entries.size(); ++k)
      for (std::int64_t i = 0; i < p1.entries[k].value.numel(); ++i)
        REQUIRE(p1.entries[k].value[i] == p2.entries[k].value[i]);
  }
  SECTION("input-layer kinks land inside the domain") {
    auto [s1, p] = f(7);
    const Tensor& w = p.get("embed.w");
    const Tensor& b = p.get("embed.b");
    for (int j = 0; j < 8; ++j) {
      // offset along the unit normal is |b| / |w_col|; the kink point was
      // drawn inside [-100,100]^2, so the offset is at most the diagonal
      const double wn = std::hypot(w.at(0, j), w.at(1, j));
      REQUIRE(std::abs(b[j]) / wn <= 100.0 * std::sqrt(2.0) + 1e-9);
    }
  }
  SECTION("branch output weights are redrawn at standard scale") {
    auto [s1, p] = f(7);
    const Tensor& w2 = p.get("block0.fc2.w");
    double norm2 = 0;
    for (std::int64_t i = 0; i < w2.numel(); ++i) norm2 += w2[i] * w2[i];
    // orthogonal gain 1 of a (4dh, dh) map has squared Frobenius norm dh
    REQUIRE(std::abs(norm2 - 8.0) < 1e-6);
    // while the training init keeps the 1e-2 scale
    Params train = init_params(spec, 7);
    const Tensor& tw2 = train.get("block0.fc2.w");
    double tnorm2 = 0;
    for (std::int64_t i = 0; i < tw2.numel(); ++i) tnorm2 += tw2[i] * tw2[i];
    REQUIRE(tnorm2 < 1e-2);
  }
}

TEST_CASE("image dump round trip", "[analysis]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "simba_analysis_test";
  fs::create_directories(dir);
  Tensor img = random_image(16, 55);
  const std::string path = (dir / "img.f64").string();
  write_image_dump(path, img, 100.0, 55);
  std::ifstream in(path, std::ios::binary);
  std::vector<double> back(16 * 16);
  in.read(reinterpret_cast<char*>(back.data()), 16 * 16 * sizeof(double));
  REQUIRE(in.good());
  for (int i = 0; i < 256; ++i) REQUIRE(back[i] == img[i]);
  std::ifstream hdr(path + ".hdr");
  std::string word;
  hdr >> word;
  CHECK(word == "rows");
  fs::remove_all(dir);
}
