#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "simba/autodiff.hpp"
#include "simba/nets.hpp"
#include "simba/rng.hpp"

namespace simba {

/// Uniform evaluation grid over [-half_extent, half_extent]^2, endpoints
/// included, `divisions` samples per axis.
struct GridSpec {
  double half_extent = 100.0;
  int divisions = 300;
};

/// Instantiates a fresh network for a given seed. Observation normalization is
/// deliberately not part of the probe: the grid feeds the raw architecture.
using NetFactory = std::function<std::pair<NetworkSpec, Params>(std::uint64_t seed)>;

inline NetFactory make_factory(NetworkSpec spec) {
  return [spec](std::uint64_t seed) { return std::make_pair(spec, init_params(spec, seed)); };
}

/// Measurement initialization for the simplicity protocol.
///
/// The training init (orthogonal weights, zero biases, 1e-2-scaled branch and
/// head outputs) makes every variant positively homogeneous on the 2-d probe
/// domain: all ReLU boundaries pass through the origin and residual branches
/// are invisible next to the skip path, so the grid images of all variants
/// collapse to near-identical cones. The probe therefore samples the
/// architecture at standard scale and with scattered nonlinearities:
///   - weights follow the training init, except 1e-2-scaled linears are
///     redrawn at orthogonal gain 1;
///   - the input-facing linear's biases place each unit's affine zero set
///     through a point drawn uniformly from the probe domain;
///   - biases of the remaining ReLU-feeding linears are drawn U(+-0.7);
///   - heads, branch-output biases, and layer-norm parameters keep the
///     training init.
inline NetFactory probe_factory(NetworkSpec spec, double half_extent) {
  return [spec, half_extent](std::uint64_t seed) {
    Params p = init_params(spec, seed);
    std::mt19937_64 brng(splitmix64(seed ^ 0x5eedb1a5ULL));
    std::mt19937_64 wrng(splitmix64(seed ^ 0x0a11ce5caULL));
    std::uniform_real_distribution<double> udom(-half_extent, half_extent);
    std::uniform_real_distribution<double> ub(-0.7, 0.7);
    std::string first;
    switch (spec.variant) {
      case Variant::mlp:
      case Variant::mlp_ln: first = "layer0"; break;
      case Variant::mlp_res: first = "proj"; break;
      default: first = "embed"; break;
    }
    for (auto& e : p.entries) {
      const bool small_weight = (e.name.find(".fc2.w") != std::string::npos) ||
                                (e.name.rfind("head", 0) == 0 && e.name.back() == 'w');
      if (small_weight) e.value = detail::orthogonal(e.value.shape[0], e.value.shape[1], 1.0, wrng);
    }
    for (auto& e : p.entries) {
      if (e.name.size() < 2 || e.name.compare(e.name.size() - 2, 2, ".b") != 0) continue;
      const std::string base = e.name.substr(0, e.name.size() - 2);
      if (base == first) {
        const Tensor& w = p.get(base + ".w");
        const int in = w.shape[0], out = w.shape[1];
        Tensor nb = e.value.clone();
        for (int j = 0; j < out; ++j) {
          double dot = 0;
          for (int i = 0; i < in; ++i) dot += w.data()[static_cast<std::int64_t>(i) * out + j] * udom(brng);
          nb[j] = -dot;
        }
        e.value = nb;
      } else if (base.find(".fc1") != std::string::npos || base.rfind("layer", 0) == 0) {
        Tensor nb = e.value.clone();
        for (std::int64_t i = 0; i < nb.numel(); ++i) nb[i] = ub(brng);
        e.value = nb;
      }
    }
    return std::make_pair(spec, p);
  };
}

/// image[i][j] = f_theta(x_i, y_j) as a (divisions, divisions) tensor.
inline Tensor evaluate_on_grid(const NetFactory& factory, std::uint64_t seed, const GridSpec& grid) {
  auto [spec, params] = factory(seed);
  if (spec.input_dim != 2)
    throw std::invalid_argument("evaluate_on_grid: network must take 2-dim inputs");
  if (spec.output_dim != 1 || spec.head == Head::gaussian_policy)
    throw std::invalid_argument("evaluate_on_grid: network must produce a scalar output");
  const int n = grid.divisions;
  std::vector<double> axis(n);
  for (int i = 0; i < n; ++i)
    axis[i] = -grid.half_extent + 2.0 * grid.half_extent * i / (n - 1);
  Tensor image = Tensor::empty({n, n});
  const int chunk_rows = std::max(1, 3000 / n);  // keep per-tape footprint modest
  for (int i0 = 0; i0 < n; i0 += chunk_rows) {
    const int rows = std::min(chunk_rows, n - i0);
    Tensor in = Tensor::empty({rows * n, 2});
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < n; ++j) {
        in.data()[2 * (static_cast<std::int64_t>(i) * n + j)] = axis[i0 + i];
        in.data()[2 * (static_cast<std::int64_t>(i) * n + j) + 1] = axis[j];
      }
    Tape t;
    Tensor out = forward(spec, params, t, in).out;
    std::copy(out.data(), out.data() + out.numel(),
              image.data() + static_cast<std::int64_t>(i0) * n);
  }
  return image;
}

/// Unnormalized 2-D DFT of a square image: F = W X W with W[p][m]=exp(-2i pi pm/N).
/// The DFT matrix is symmetric, and splitting it into real and imaginary parts
/// turns the transform into six real matrix products.
inline Eigen::MatrixXcd dft2(const Tensor& image) {
  const int n = image.rows();
  if (image.rank() != 2 || image.cols() != n)
    throw std::invalid_argument("dft2: image must be square, got " + shape_str(image.shape));
  Eigen::MatrixXd wr(n, n), wi(n, n), x(n, n);
  const double step = -2.0 * M_PI / n;
  for (int p = 0; p < n; ++p)
    for (int m = 0; m < n; ++m) {
      const double phi = step * static_cast<double>(p) * m;
      wr(p, m) = std::cos(phi);
      wi(p, m) = std::sin(phi);
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) x(i, j) = image.at(i, j);
  const Eigen::MatrixXd a = wr * x;  // real part of W X
  const Eigen::MatrixXd b = wi * x;  // imag part of W X
  Eigen::MatrixXcd f(n, n);
  f.real() = a * wr - b * wi;
  f.imag() = a * wi + b * wr;
  return f;
}

/// Frequency-weighted average of DFT coefficient magnitudes. Magnitudes are
/// binned by radial integer frequency k = round(sqrt(kx^2 + ky^2)) over the
/// symmetric index range [-N/2, N/2), and only k in {0..K}, K = N/2 (the
/// Nyquist limit) contributes. The DC bin is included, so a constant image
/// scores 0; an all-zero spectrum is defined as 0. Coefficients below 1e-12
/// of the largest magnitude are treated as the double-precision noise floor
/// of the transform and ignored.
inline double complexity(const Tensor& image) {
  const int n = image.rows();
  const int kmax = n / 2;
  Eigen::MatrixXcd f = dft2(image);
  double peak = 0.0;
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) peak = std::max(peak, std::abs(f(p, q)));
  const double floor = 1e-12 * peak;
  double num = 0.0, den = 0.0;
  for (int p = 0; p < n; ++p) {
    const int fp = (p < (n + 1) / 2) ? p : p - n;
    for (int q = 0; q < n; ++q) {
      const int fq = (q < (n + 1) / 2) ? q : q - n;
      const long k = std::lround(std::sqrt(static_cast<double>(fp) * fp + static_cast<double>(fq) * fq));
      if (k > kmax) continue;
      const double mag = std::abs(f(p, q));
      if (mag <= floor) continue;
      num += mag * static_cast<double>(k);
      den += mag;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Guard added to the complexity before inversion so constant networks map to
/// a finite (maximal) score.
inline constexpr double kComplexityFloor = 1e-6;

struct SimplicityReport {
  std::string arch;
  int n_inits = 0;
  std::vector<double> complexities;  // per-initialization c(f_theta)
  double mean_c = 0.0;
  double score = 0.0;   // mean of 1/(c + floor)
  double ci_low = 0.0;  // 95% normal-approximation interval over the inits
  double ci_high = 0.0;
  std::int64_t params = 0;
  bool rsnorm_bypassed = true;   // the probe never applies observation normalization
  bool image_standardized = false;  // raw outputs feed the DFT
};

/// Aggregation step: s = mean(1/(c_i + floor)), mean complexity, and the 95%
/// normal-approximation interval of the score over the initializations.
inline SimplicityReport aggregate_simplicity(std::vector<double> cvals) {
  if (cvals.size() < 2) throw std::invalid_argument("aggregate_simplicity: need at least 2 inits");
  SimplicityReport rep;
  rep.n_inits = static_cast<int>(cvals.size());
  rep.complexities = std::move(cvals);
  // reduce over a sorted copy so the result does not depend on iteration order
  std::vector<double> sorted = rep.complexities;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> inv(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i) {
    rep.mean_c += sorted[i];
    inv[i] = 1.0 / (sorted[i] + kComplexityFloor);
    rep.score += inv[i];
  }
  rep.mean_c /= rep.n_inits;
  rep.score /= rep.n_inits;
  double var = 0.0;
  for (double v : inv) var += (v - rep.score) * (v - rep.score);
  var /= (rep.n_inits - 1);
  const double half = 1.959963984540054 * std::sqrt(var / rep.n_inits);
  rep.ci_low = rep.score - half;
  rep.ci_high = rep.score + half;
  return rep;
}

/// Appendix-style protocol: n_inits random initializations, one grid image
/// each, score s = mean(1 / (c + floor)). Per-init evaluations are independent
/// and fan out across `workers` threads; aggregation is ordered by init index.
inline SimplicityReport simplicity_score(const NetFactory& factory, int n_inits,
                                         const GridSpec& grid, std::uint64_t root_seed,
                                         int workers = 1) {
  if (n_inits < 2) throw std::invalid_argument("simplicity_score: need at least 2 inits");
  std::vector<double> cvals(n_inits);
  auto eval_range = [&](int begin, int stride) {
    for (int i = begin; i < n_inits; i += stride) {
      const std::uint64_t seed = derive_seed(root_seed, Stream::analysis, static_cast<std::uint64_t>(i));
      cvals[i] = complexity(evaluate_on_grid(factory, seed, grid));
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    eval_range(0, 1);
  } else {
    const int prev = Eigen::nbThreads();
    Eigen::setNbThreads(1);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(eval_range, w, workers);
    for (auto& th : pool) th.join();
    Eigen::setNbThreads(prev);
  }
  SimplicityReport rep = aggregate_simplicity(std::move(cvals));
  auto [spec, params] = factory(derive_seed(root_seed, Stream::analysis, 0));
  rep.params = count_params(spec);
  rep.arch = to_string(spec.variant);
  return rep;
}

// ---------------------------------------------------------------------------
// Plasticity metrics.
// ---------------------------------------------------------------------------

/// Number of singular values of the (centered, population) feature covariance
/// exceeding tau. F is (samples, features).
inline int stable_rank(const Tensor& f, double tau = 0.01) {
  const int d = f.rows(), m = f.cols();
  if (d < 1 || m < 1) throw std::invalid_argument("stable_rank: empty feature matrix");
  Eigen::MatrixXd x(d, m);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < m; ++j) x(i, j) = f.at(i, j);
  Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  int count = 0;
  for (int j = 0; j < m; ++j)
    if (es.eigenvalues()[j] > tau) ++count;
  return count;
}

/// Fraction of neurons whose mean absolute activation over the batch falls
/// strictly below eps. Activations are (batch, neurons).
inline double dormant_ratio(const Tensor& acts, double eps = 1e-3) {
  const int b = acts.rows(), d = acts.cols();
  if (b < 1 || d < 1) throw std::invalid_argument("dormant_ratio: empty activation matrix");
  int dormant = 0;
  for (int j = 0; j < d; ++j) {
    double mean_abs = 0.0;
    for (int i = 0; i < b; ++i) mean_abs += std::abs(acts.at(i, j));
    mean_abs /= b;
    if (mean_abs < eps) ++dormant;
  }
  return static_cast<double>(dormant) / static_cast<double>(d);
}

/// Mean L2 norm of the per-sample feature vectors of an (N, m) matrix.
inline double feature_norm(const Tensor& f) {
  const int n = f.rows(), m = f.cols();
  if (n < 1) throw std::invalid_argument("feature_norm: empty feature matrix");
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int j = 0; j < m; ++j) sq += f.at(i, j) * f.at(i, j);
    acc += std::sqrt(sq);
  }
  return acc / n;
}

struct PlasticityReport {
  int stable_rank = 0;
  double dormant_ratio = 0.0;
  double feature_norm = 0.0;
  double tau_rank = 0.01;
  double eps_dormant = 1e-3;
};

inline PlasticityReport plasticity_report(const Tensor& features, const Tensor& relu_acts,
                                          double tau = 0.01, double eps = 1e-3) {
  PlasticityReport r;
  r.tau_rank = tau;
  r.eps_dormant = eps;
  r.stable_rank = stable_rank(features, tau);
  r.dormant_ratio = dormant_ratio(relu_acts, eps);
  r.feature_norm = feature_norm(features);
  return r;
}

/// Raw grid-image dump: flat binary of 64-bit reals, row-major, with a plain
/// text sidecar header `<path>.hdr` recording dims, domain and seed.
inline void write_image_dump(const std::string& path, const Tensor& image, double half_extent,
                             std::uint64_t seed) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write image dump: " + path);
  bin.write(reinterpret_cast<const char*>(image.data()),
            static_cast<std::streamsize>(image.numel() * sizeof(double)));
  std::ofstream hdr(path + ".hdr");
  hdr << "rows " << image.rows() << "\ncols " << image.cols() << "\ndomain " << half_extent
      << "\nseed " << seed << "\n";
}

}  // namespace simba
