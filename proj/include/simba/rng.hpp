#pragma once

#include <cstdint>
#include <random>

namespace simba {

/// SplitMix64 mixing step. Used to derive independent stream seeds from a
/// single root seed so that every random decision in a run is reproducible.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named random streams. Every consumer of randomness gets its own stream id;
/// per-stream sub-indices (episode number, init index, reset counter) produce
/// further independent seeds.
enum class Stream : std::uint64_t {
  env = 1,
  actor_init = 2,
  critic_init = 3,
  sampling = 4,      // replay-buffer minibatch draws
  exploration = 5,   // warmup actions and DDPG noise
  policy_noise = 6,  // reparameterized Gaussian noise in updates and acting
  wrapper = 7,       // distractor scales and per-step distractor noise
  reset = 8,         // periodic network reinitializations
  analysis = 9,      // per-initialization seeds of the simplicity protocol
};

/// seed(root, stream, k) = splitmix64(splitmix64(splitmix64(root) ^ stream) ^ k)
inline std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t k = 0) {
  std::uint64_t h = splitmix64(root);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return splitmix64(h ^ k);
}

inline std::mt19937_64 make_rng(std::uint64_t root, Stream stream, std::uint64_t k = 0) {
  return std::mt19937_64(derive_seed(root, stream, k));
}

}  // namespace simba
