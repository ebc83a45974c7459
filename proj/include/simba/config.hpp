#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "simba/io.hpp"
#include "simba/rl.hpp"

namespace simba {

using ordered_json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Resolved configuration of a `train` run; serialized verbatim (stable key
/// order) into the output directory before any work starts.
struct TrainRunConfig {
  std::string algo = "sac";
  std::string env = "pendulum";
  int distractors = 0;
  std::string arch = "simba";
  std::string normalizer = "rsnorm";
  std::string oracle_stats;
  int actor_blocks = 1;
  int actor_hidden_dim = 128;
  double actor_lr = 1e-4;
  int critic_blocks = 2;
  int critic_hidden_dim = 512;
  double critic_lr = 1e-4;
  double tau = 5e-3;
  double init_alpha = 1e-2;
  double alpha_lr = 1e-4;
  double target_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN = -|A|/2
  int batch_size = 256;
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 1e-2;
  double adam_eps = 1e-8;
  double gamma = 0.99;
  int replay_ratio = 2;
  std::int64_t reset_every = 0;
  std::int64_t buffer_capacity = 100000;
  int warmup_steps = 1000;
  double exploration_noise = 0.1;
  int fixed_initial_n = 5000;
  double tau_rank = 0.01;
  double eps_dormant = 1e-3;
  std::uint64_t seed = 0;
  std::int64_t steps = 10000;
  std::int64_t checkpoint_every = 5000;  // env steps; 0 disables periodic checkpoints
  bool zero_wall_time = false;
  bool dump_features = false;
  std::string out;
  bool force = false;

  ordered_json to_json() const {
    ordered_json j;
    j["algo"] = algo;
    j["env"] = env;
    j["distractors"] = distractors;
    j["arch"] = arch;
    j["normalizer"] = normalizer;
    j["oracle_stats"] = oracle_stats;
    j["actor_blocks"] = actor_blocks;
    j["actor_hidden_dim"] = actor_hidden_dim;
    j["actor_lr"] = actor_lr;
    j["critic_blocks"] = critic_blocks;
    j["critic_hidden_dim"] = critic_hidden_dim;
    j["critic_lr"] = critic_lr;
    j["tau"] = tau;
    j["init_alpha"] = init_alpha;
    j["alpha_lr"] = alpha_lr;
    // the resolved value is filled in by cmd_train once |A| is known
    j["target_entropy"] = std::isnan(target_entropy) ? ordered_json() : ordered_json(target_entropy);
    j["batch_size"] = batch_size;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["weight_decay"] = weight_decay;
    j["adam_eps"] = adam_eps;
    j["gamma"] = gamma;
    j["replay_ratio"] = replay_ratio;
    j["reset_every"] = reset_every;
    j["buffer_capacity"] = buffer_capacity;
    j["warmup_steps"] = warmup_steps;
    j["exploration_noise"] = exploration_noise;
    j["fixed_initial_n"] = fixed_initial_n;
    j["tau_rank"] = tau_rank;
    j["eps_dormant"] = eps_dormant;
    j["seed"] = seed;
    j["steps"] = steps;
    j["checkpoint_every"] = checkpoint_every;
    j["zero_wall_time"] = zero_wall_time;
    j["dump_features"] = dump_features;
    j["out"] = out;
    return j;
  }

  void apply_json(const ordered_json& j) {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("algo", algo);
    get("env", env);
    get("distractors", distractors);
    get("arch", arch);
    get("normalizer", normalizer);
    get("oracle_stats", oracle_stats);
    get("actor_blocks", actor_blocks);
    get("actor_hidden_dim", actor_hidden_dim);
    get("actor_lr", actor_lr);
    get("critic_blocks", critic_blocks);
    get("critic_hidden_dim", critic_hidden_dim);
    get("critic_lr", critic_lr);
    get("tau", tau);
    get("init_alpha", init_alpha);
    get("alpha_lr", alpha_lr);
    get("target_entropy", target_entropy);
    get("batch_size", batch_size);
    get("beta1", beta1);
    get("beta2", beta2);
    get("weight_decay", weight_decay);
    get("adam_eps", adam_eps);
    get("gamma", gamma);
    get("replay_ratio", replay_ratio);
    get("reset_every", reset_every);
    get("buffer_capacity", buffer_capacity);
    get("warmup_steps", warmup_steps);
    get("exploration_noise", exploration_noise);
    get("fixed_initial_n", fixed_initial_n);
    get("tau_rank", tau_rank);
    get("eps_dormant", eps_dormant);
    get("seed", seed);
    get("steps", steps);
    get("checkpoint_every", checkpoint_every);
    get("zero_wall_time", zero_wall_time);
    get("dump_features", dump_features);
    get("out", out);
  }

  TrainConfig to_train_config() const {
    TrainConfig c;
    c.critic = {variant_from(arch), critic_blocks, critic_hidden_dim, critic_lr};
    c.actor = {variant_from(arch), actor_blocks, actor_hidden_dim, actor_lr};
    c.tau = tau;
    c.init_alpha = init_alpha;
    c.alpha_lr = alpha_lr;
    c.target_entropy = target_entropy;
    c.batch_size = batch_size;
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.weight_decay = weight_decay;
    c.adam_eps = adam_eps;
    c.gamma = gamma;
    c.replay_ratio = replay_ratio;
    c.reset_interval = reset_every;
    c.buffer_capacity = buffer_capacity;
    c.warmup_steps = warmup_steps;
    c.exploration_noise = exploration_noise;
    c.total_env_steps = steps;
    c.normalizer = normalizer_kind_from(normalizer);
    c.fixed_initial_n = fixed_initial_n;
    c.oracle_stats_path = oracle_stats;
    c.tau_rank = tau_rank;
    c.eps_dormant = eps_dormant;
    c.checkpoint_every = checkpoint_every;
    c.zero_wall_time = zero_wall_time;
    return c;
  }
};

struct SimplicityRunConfig {
  std::vector<std::string> archs{"simba", "mlp"};
  int inits = 100;
  int grid = 300;
  double domain = 100.0;
  std::string match_params_to = "simba";
  int hidden_dim = 128;
  int blocks = 2;  // simba-family blocks; mlp depth doubles this, mlp+res pairs equal it
  std::uint64_t seed = 0;
  int workers = 2;
  bool dump_images = false;
  std::string out;
  bool force = false;

  ordered_json to_json() const {
    ordered_json j;
    j["archs"] = archs;
    j["inits"] = inits;
    j["grid"] = grid;
    j["domain"] = domain;
    j["match_params_to"] = match_params_to;
    j["hidden_dim"] = hidden_dim;
    j["blocks"] = blocks;
    j["seed"] = seed;
    j["workers"] = workers;
    j["dump_images"] = dump_images;
    j["out"] = out;
    return j;
  }
};

struct PlasticityRunConfig {
  std::vector<std::string> features;  // dumped feature files
  double tau_rank = 0.01;
  double eps_dormant = 1e-3;
  std::string out;
  bool force = false;

  ordered_json to_json() const {
    ordered_json j;
    j["features"] = features;
    j["tau_rank"] = tau_rank;
    j["eps_dormant"] = eps_dormant;
    j["out"] = out;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Output-directory protocol: resolved config + outputs + DONE marker. A
// directory holding a DONE file refuses to run again without --force.
// ---------------------------------------------------------------------------

inline void prepare_out_dir(const std::string& out, bool force) {
  if (out.empty()) throw ConfigError("out: output directory is required");
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(fs::path(out) / "DONE", ec) && !force)
    throw ConfigError("out: " + out + " holds a completed run (DONE present); use --force to rerun");
  fs::create_directories(out, ec);
  if (ec) throw IoError("out: cannot create directory " + out + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << content;
  if (!f.good()) throw IoError("short write on " + path);
}

inline void write_done(const std::string& out) {
  write_text_file((std::filesystem::path(out) / "DONE").string(), "done\n");
}

inline ordered_json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  try {
    return ordered_json::parse(f);
  } catch (const std::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Full training-state checkpoints (agent + normalizer).
// ---------------------------------------------------------------------------

inline NamedTensors collect_checkpoint(const Agent& agent, const Normalizer& norm) {
  NamedTensors out;
  agent.collect_state(out);
  const RunningStats& s = norm.stats();
  out.emplace_back("norm.mu", Tensor::from_vec({static_cast<int>(s.mu.size())}, s.mu));
  out.emplace_back("norm.sigma2", Tensor::from_vec({static_cast<int>(s.sigma2.size())}, s.sigma2));
  out.emplace_back("norm.count", Tensor::scalar_of(static_cast<double>(s.count)));
  out.emplace_back("norm.eps", Tensor::scalar_of(s.eps));
  return out;
}

inline void restore_checkpoint(Agent& agent, Normalizer& norm, const NamedTensors& kv) {
  agent.restore_state(kv);
  RunningStats s(static_cast<int>(detail::find_state(kv, "norm.mu").numel()),
                 detail::find_state(kv, "norm.eps").scalar());
  s.mu = detail::find_state(kv, "norm.mu").to_vec();
  s.sigma2 = detail::find_state(kv, "norm.sigma2").to_vec();
  s.count = static_cast<std::int64_t>(detail::find_state(kv, "norm.count").scalar());
  norm.set_stats(std::move(s));
}

}  // namespace simba
