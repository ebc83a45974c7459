#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "simba/analysis.hpp"
#include "simba/config.hpp"
#include "simba/envs.hpp"
#include "simba/io.hpp"
#include "simba/presets.hpp"
#include "simba/rl.hpp"

namespace fs = std::filesystem;
using namespace simba;

namespace {

int cmd_train(const TrainRunConfig& rc) {
  TrainConfig tc = rc.to_train_config();  // throws on unknown arch/normalizer names
  const std::string err = validate(tc);
  if (!err.empty()) throw ConfigError("train config invalid, " + err);
  if (rc.env != "pendulum") throw ConfigError("env: unknown environment " + rc.env);
  if (rc.distractors < 0) throw ConfigError("distractors: must be >= 0");

  PendulumEnv env(WrapperSpec(rc.distractors, derive_seed(rc.seed, Stream::wrapper)),
                  derive_seed(rc.seed, Stream::wrapper, 1));
  const Algo algo = algo_from(rc.algo);

  prepare_out_dir(rc.out, rc.force);
  ordered_json cfg_json = rc.to_json();
  cfg_json["target_entropy"] = tc.resolved_target_entropy(env.action_dim());
  write_text_file((fs::path(rc.out) / "config.json").string(), cfg_json.dump(2) + "\n");

  TrainRun<PendulumEnv> run(env, algo, tc, rc.seed);

  std::vector<MetricsRow> rows;
  TrainHooks hooks;
  hooks.on_row = [&rows](const MetricsRow& r) { rows.push_back(r); };
  hooks.on_checkpoint = [&](std::int64_t env_step) {
    save_tensors((fs::path(rc.out) / ("checkpoint_" + std::to_string(env_step) + ".bin")).string(),
                 collect_checkpoint(run.agent(), run.normalizer()));
  };
  if (rc.dump_features) {
    hooks.on_features = [&](const MetricsRow& r, const Tensor& feats, const Tensor& acts) {
      NamedTensors kv;
      kv.emplace_back("features", feats);
      kv.emplace_back("relu_acts", acts);
      kv.emplace_back("meta", Tensor::from({2}, {static_cast<double>(r.env_step),
                                                 static_cast<double>(r.grad_step)}));
      save_tensors(
          (fs::path(rc.out) / ("features_" + std::to_string(r.grad_step) + ".bin")).string(), kv);
    };
  }

  MetricsLog log = run.run(hooks);

  CsvWriter metrics((fs::path(rc.out) / "metrics.csv").string(), kMetricsHeader);
  for (const MetricsRow& r : rows) metrics.line(metrics_row_csv(r));
  metrics.flush();

  save_tensors((fs::path(rc.out) / "checkpoint_final.bin").string(),
               collect_checkpoint(run.agent(), run.normalizer()));
  write_done(rc.out);
  std::fprintf(stderr, "train: %lld env steps, %lld updates, %lld episodes -> %s\n",
               static_cast<long long>(log.env_steps), static_cast<long long>(log.grad_updates),
               static_cast<long long>(log.episodes), rc.out.c_str());
  return 0;
}

int cmd_analyze_simplicity(const SimplicityRunConfig& rc) {
  if (rc.inits < 2) throw ConfigError("inits: need at least 2 initializations");
  if (rc.grid < 4) throw ConfigError("grid: need at least 4 divisions");
  if (rc.domain <= 0) throw ConfigError("domain: must be positive");
  if (rc.archs.empty()) throw ConfigError("archs: need at least one architecture");

  prepare_out_dir(rc.out, rc.force);
  write_text_file((fs::path(rc.out) / "config.json").string(), rc.to_json().dump(2) + "\n");

  GridSpec grid{rc.domain, rc.grid};
  NetworkSpec reference = analysis_spec(rc.match_params_to.empty() ? rc.archs.front()
                                                                   : rc.match_params_to,
                                        rc.hidden_dim, rc.blocks);

  CsvWriter csv((fs::path(rc.out) / "simplicity.csv").string(), kSimplicityHeader);
  for (size_t a = 0; a < rc.archs.size(); ++a) {
    NetworkSpec spec = rc.match_params_to.empty()
                           ? analysis_spec(rc.archs[a], rc.hidden_dim, rc.blocks)
                           : matched_analysis_spec(rc.archs[a], reference, rc.blocks);
    const std::uint64_t arch_root = derive_seed(rc.seed, Stream::analysis, 7000 + a);
    SimplicityReport rep =
        simplicity_score(probe_factory(spec, grid.half_extent), rc.inits, grid, arch_root, rc.workers);
    rep.arch = rc.archs[a];
    std::string line = rep.arch + "," + std::to_string(rep.n_inits) + "," +
                       format_double(rep.mean_c) + "," + format_double(rep.score) + "," +
                       format_double(rep.ci_low) + "," + format_double(rep.ci_high) + "," +
                       std::to_string(rep.params);
    csv.line(line);
    if (rc.dump_images) {
      const std::uint64_t seed0 = derive_seed(arch_root, Stream::analysis, 0);
      write_image_dump((fs::path(rc.out) / ("image_" + rc.archs[a] + "_0.f64")).string(),
                       evaluate_on_grid(probe_factory(spec, grid.half_extent), seed0, grid), grid.half_extent, seed0);
    }
    std::fprintf(stderr, "simplicity: %-16s params=%lld mean_c=%.4f s=%.6f\n", rep.arch.c_str(),
                 static_cast<long long>(rep.params), rep.mean_c, rep.score);
  }
  csv.flush();
  write_done(rc.out);
  return 0;
}

int cmd_analyze_plasticity(const PlasticityRunConfig& rc) {
  if (rc.features.empty()) throw ConfigError("features: need at least one dumped feature file");
  prepare_out_dir(rc.out, rc.force);
  write_text_file((fs::path(rc.out) / "config.json").string(), rc.to_json().dump(2) + "\n");
  CsvWriter csv((fs::path(rc.out) / "plasticity.csv").string(), kPlasticityHeader);
  for (const std::string& file : rc.features) {
    NamedTensors kv = load_tensors(file);
    const Tensor feats = detail::find_state(kv, "features");
    const Tensor acts = detail::find_state(kv, "relu_acts");
    const Tensor meta = detail::find_state(kv, "meta");
    PlasticityReport rep = plasticity_report(feats, acts, rc.tau_rank, rc.eps_dormant);
    std::string line = format_double(meta[0]) + "," + format_double(meta[1]) + "," +
                       std::to_string(rep.stable_rank) + "," + format_double(rep.dormant_ratio) +
                       "," + format_double(rep.feature_norm) + "," + format_double(rep.tau_rank) +
                       "," + format_double(rep.eps_dormant);
    csv.line(line);
  }
  csv.flush();
  write_done(rc.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SimBa deep-RL laboratory: training, simplicity analysis, plasticity metrics"};
  app.require_subcommand(1);

  TrainRunConfig tc;
  std::string train_config_file;
  CLI::App* train = app.add_subcommand("train", "Run off-policy training on the pendulum");
  train->add_option("--config", train_config_file, "JSON config file (flags override it)");
  train->add_option("--algo", tc.algo, "sac | ddpg");
  train->add_option("--env", tc.env, "environment name (pendulum)");
  train->add_option("--distractors", tc.distractors, "number of multi-scale distractor dims");
  train->add_option("--arch", tc.arch, "architecture variant for actor and critic");
  train->add_option("--normalizer", tc.normalizer, "observation normalization scheme");
  train->add_option("--oracle-stats", tc.oracle_stats, "CSV file for the oracle normalizer");
  train->add_option("--actor-blocks", tc.actor_blocks);
  train->add_option("--actor-dh", tc.actor_hidden_dim);
  train->add_option("--actor-lr", tc.actor_lr);
  train->add_option("--critic-blocks", tc.critic_blocks);
  train->add_option("--critic-dh", tc.critic_hidden_dim);
  train->add_option("--critic-lr", tc.critic_lr);
  train->add_option("--tau", tc.tau);
  train->add_option("--init-alpha", tc.init_alpha);
  train->add_option("--alpha-lr", tc.alpha_lr);
  train->add_option("--target-entropy", tc.target_entropy, "defaults to -|A|/2");
  train->add_option("--batch", tc.batch_size);
  train->add_option("--weight-decay", tc.weight_decay);
  train->add_option("--gamma", tc.gamma);
  train->add_option("--replay-ratio", tc.replay_ratio);
  train->add_option("--reset-every", tc.reset_every, "gradient steps between full resets (0 = off)");
  train->add_option("--buffer", tc.buffer_capacity);
  train->add_option("--warmup", tc.warmup_steps);
  train->add_option("--exploration-noise", tc.exploration_noise);
  train->add_option("--fixed-initial-n", tc.fixed_initial_n);
  train->add_option("--tau-rank", tc.tau_rank);
  train->add_option("--eps-dormant", tc.eps_dormant);
  train->add_option("--seed", tc.seed);
  train->add_option("--steps", tc.steps);
  train->add_option("--checkpoint-every", tc.checkpoint_every);
  train->add_flag("--zero-wall-time", tc.zero_wall_time, "write 0 in the wall_time_s column");
  train->add_flag("--dump-features", tc.dump_features, "dump per-row critic feature matrices");
  train->add_option("--out", tc.out, "output directory");
  train->add_flag("--force", tc.force, "rerun into a completed output directory");

  CLI::App* analyze = app.add_subcommand("analyze", "Measurement protocols");
  analyze->require_subcommand(1);

  SimplicityRunConfig sc;
  std::string arch_list = "simba,mlp";
  CLI::App* simp = analyze->add_subcommand("simplicity", "Fourier simplicity-bias protocol");
  simp->add_option("--archs", arch_list, "comma-separated architecture list");
  simp->add_option("--inits", sc.inits);
  simp->add_option("--grid", sc.grid);
  simp->add_option("--domain", sc.domain);
  simp->add_option("--match-params-to", sc.match_params_to,
                   "reference architecture for parameter matching (empty = no matching)");
  simp->add_option("--dh", sc.hidden_dim, "reference hidden width");
  simp->add_option("--blocks", sc.blocks, "reference depth (simba blocks)");
  simp->add_option("--seed", sc.seed);
  simp->add_option("--workers", sc.workers);
  simp->add_flag("--dump-images", sc.dump_images);
  simp->add_option("--out", sc.out, "output directory");
  simp->add_flag("--force", sc.force);

  PlasticityRunConfig pc;
  CLI::App* plast = analyze->add_subcommand("plasticity", "Recompute plasticity metrics offline");
  plast->add_option("--features", pc.features, "dumped feature files")->expected(-1);
  plast->add_option("--tau-rank", pc.tau_rank);
  plast->add_option("--eps-dormant", pc.eps_dormant);
  plast->add_option("--out", pc.out, "output directory");
  plast->add_flag("--force", pc.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      if (!train_config_file.empty()) {
        // precedence: defaults < config file < flags the user actually passed
        TrainRunConfig final_cfg;
        final_cfg.apply_json(read_json_file(train_config_file));
        ordered_json flag_json = tc.to_json();
        static const std::pair<const char*, const char*> kFlagOf[] = {
            {"algo", "--algo"}, {"env", "--env"}, {"distractors", "--distractors"},
            {"arch", "--arch"}, {"normalizer", "--normalizer"}, {"oracle_stats", "--oracle-stats"},
            {"actor_blocks", "--actor-blocks"}, {"actor_hidden_dim", "--actor-dh"},
            {"actor_lr", "--actor-lr"}, {"critic_blocks", "--critic-blocks"},
            {"critic_hidden_dim", "--critic-dh"}, {"critic_lr", "--critic-lr"}, {"tau", "--tau"},
            {"init_alpha", "--init-alpha"}, {"alpha_lr", "--alpha-lr"},
            {"target_entropy", "--target-entropy"}, {"batch_size", "--batch"},
            {"weight_decay", "--weight-decay"}, {"gamma", "--gamma"},
            {"replay_ratio", "--replay-ratio"}, {"reset_every", "--reset-every"},
            {"buffer_capacity", "--buffer"}, {"warmup_steps", "--warmup"},
            {"exploration_noise", "--exploration-noise"}, {"fixed_initial_n", "--fixed-initial-n"},
            {"tau_rank", "--tau-rank"}, {"eps_dormant", "--eps-dormant"}, {"seed", "--seed"},
            {"steps", "--steps"}, {"checkpoint_every", "--checkpoint-every"},
            {"zero_wall_time", "--zero-wall-time"}, {"dump_features", "--dump-features"},
            {"out", "--out"}};
        ordered_json overrides;
        for (const auto& [key, flag] : kFlagOf)
          if (train->count(flag) > 0) overrides[key] = flag_json.at(key);
        final_cfg.apply_json(overrides);
        final_cfg.force = tc.force;
        return cmd_train(final_cfg);
      }
      return cmd_train(tc);
    }
    if (simp->parsed()) {
      sc.archs.clear();
      std::string token;
      std::istringstream ss(arch_list);
      while (std::getline(ss, token, ','))
        if (!token.empty()) sc.archs.push_back(token);
      return cmd_analyze_simplicity(sc);
    }
    if (plast->parsed()) return cmd_analyze_plasticity(pc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CorruptionError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
