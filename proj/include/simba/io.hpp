#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "simba/autodiff.hpp"
#include "simba/rl.hpp"

namespace simba {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts need byte swaps");

struct CorruptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// CRC-32 (IEEE), table-driven.
inline std::uint32_t crc32(const unsigned char* data, size_t n, std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Checkpoint container: magic, version, then length-prefixed named tensors
/// (u32 name length, name, u32 rank, u32 dims, f64 data little-endian),
/// closed by a CRC-32 trailer over everything before it.
inline void save_tensors(const std::string& path, const NamedTensors& tensors) {
  std::string body;
  auto put = [&body](const void* p, size_t n) {
    body.append(reinterpret_cast<const char*>(p), n);
  };
  body.append("SIMBALAB", 8);
  const std::uint32_t version = 1;
  put(&version, 4);
  const std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
  put(&count, 4);
  for (const auto& [name, t] : tensors) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    put(&len, 4);
    body.append(name);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.shape.size());
    put(&rank, 4);
    for (int d : t.shape) {
      const std::uint32_t dim = static_cast<std::uint32_t>(d);
      put(&dim, 4);
    }
    put(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
  }
  const std::uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(body.data()), body.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

inline NamedTensors load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || bytes.compare(0, 8, "SIMBALAB") != 0)
    throw CorruptionError("checkpoint " + path + ": bad magic or truncated file");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const std::uint32_t actual =
      crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4);
  if (stored != actual)
    throw CorruptionError("checkpoint " + path + ": CRC mismatch (stored " +
                          std::to_string(stored) + ", computed " + std::to_string(actual) + ")");
  size_t pos = 8;
  auto take = [&](void* p, size_t n) {
    if (pos + n > bytes.size() - 4) throw CorruptionError("checkpoint " + path + ": truncated body");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  };
  std::uint32_t version, count;
  take(&version, 4);
  if (version != 1)
    throw CorruptionError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  take(&count, 4);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len;
    take(&len, 4);
    std::string name(len, '\0');
    take(name.data(), len);
    std::uint32_t rank;
    take(&rank, 4);
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint32_t dim;
      take(&dim, 4);
      shape[d] = static_cast<int>(dim);
    }
    Tensor t = Tensor::empty(shape);
    take(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output. Headers are fixed strings; numbers use a stable %.10g format.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "env_step,grad_step,episode_return,critic_loss,actor_loss,alpha,dormant_ratio,stable_rank,"
    "feature_norm,wall_time_s";
inline constexpr const char* kSimplicityHeader =
    "arch,n_inits,mean_c,mean_s,s_ci_low,s_ci_high,params";
inline constexpr const char* kPlasticityHeader =
    "env_step,grad_step,stable_rank,dormant_ratio,feature_norm,tau_rank,eps_dormant";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string metrics_row_csv(const MetricsRow& r) {
  std::string s;
  s += std::to_string(r.env_step);
  s += ',';
  s += std::to_string(r.grad_step);
  for (double v : {r.episode_return, r.critic_loss, r.actor_loss, r.alpha, r.dormant_ratio,
                   r.stable_rank, r.feature_norm, r.wall_time_s}) {
    s += ',';
    s += format_double(v);
  }
  return s;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open CSV for writing: " + path);
    out_ << header << "\n";
  }
  void line(const std::string& s) { out_ << s << "\n"; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace simba
