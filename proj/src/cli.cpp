#include "dsvla/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsvla/cotrain.hpp"
#include "dsvla/error.hpp"
#include "dsvla/scheduler.hpp"

namespace dsvla::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void write_manifest(const std::string& path, const std::string& command,
                    const RunConfig& cfg,
                    const std::map<std::string, std::string>& artifacts) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = cfg.dump();
  json files = json::object();
  for (const auto& [name, file] : artifacts) {
    json entry;
    entry["path"] = file;
    entry["fnv1a64"] = fs::exists(file) ? cat(std::hex, content_hash_file(file))
                                        : std::string("missing");
    files[name] = entry;
  }
  manifest["artifacts"] = files;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(cat("manifest: cannot open ", path));
  out << manifest.dump(2) << '\n';
}

void write_resolved_config(const RunConfig& cfg, const std::string& dir) {
  std::ofstream out(dir + "/config.resolved.cfg", std::ios::trunc);
  if (!out) throw IoError(cat("cannot write resolved config in ", dir));
  out << cfg.dump();
}

struct LoadedData {
  std::vector<std::vector<TrajectoryRecord>> datasets;
  std::vector<double> weights;
  Normalizer norm;
};

LoadedData load_data(const RunConfig& cfg) {
  if (cfg.data_paths.empty())
    throw ConfigError("config: [train] data must name at least one dataset");
  LoadedData data;
  for (const auto& path : cfg.data_paths)
    data.datasets.push_back(read_dataset(path));
  data.weights = cfg.data_weights;
  if (data.weights.empty()) data.weights.assign(data.datasets.size(), 1.0);
  if (data.datasets.size() == 1 && fs::exists(stats_path_for(cfg.data_paths[0]))) {
    data.norm.stats = read_stats(stats_path_for(cfg.data_paths[0]));
  } else {
    std::vector<TrajectoryRecord> merged;
    for (const auto& ds : data.datasets)
      merged.insert(merged.end(), ds.begin(), ds.end());
    data.norm.stats = compute_action_stats(merged);
  }
  return data;
}

void write_normalizer(const Normalizer& norm, const std::string& path) {
  write_stats(norm.stats, path);
}

Normalizer normalizer_near_checkpoint(const std::string& checkpoint,
                                      const std::string& override_path) {
  const std::string path =
      override_path.empty()
          ? (fs::path(checkpoint).parent_path() / "normalizer.json").string()
          : override_path;
  Normalizer norm;
  norm.stats = read_stats(path);
  return norm;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions opts;
  opts.rollouts = cfg.eval_rollouts;
  opts.repeats = cfg.eval_repeats;
  opts.seed = cfg.eval_seed;
  opts.ratio_n = cfg.ratio_n;
  opts.horizon = cfg.horizon;
  opts.sampler_steps = cfg.sampler_steps;
  opts.max_steps = cfg.max_episode_steps;
  opts.env = cfg.env_config();
  return opts;
}

int cmd_gen_data(const std::string& config_path, int episodes,
                 std::uint64_t seed, const std::string& out_path) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
  if (episodes < 1) throw ConfigError("gen-data: episodes must be >= 1");
  ToyEnv env(cfg.env_config());
  std::vector<TrajectoryRecord> records;
  records.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i)
    records.push_back(roll_expert_episode(env, seed + static_cast<std::uint64_t>(i), i));
  write_dataset(records, out_path);
  int successes = 0;
  for (const auto& r : records) successes += r.success ? 1 : 0;
  write_manifest(out_path + ".manifest.json",
                 cat("gen-data --episodes ", episodes, " --seed ", seed), cfg,
                 {{"dataset", out_path}, {"stats", stats_path_for(out_path)}});
  std::cout << "wrote " << episodes << " expert episodes (" << successes
            << " successful) to " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::string& resume) {
  RunConfig cfg = RunConfig::from_file(config_path);
  const std::string out = out_override.empty() ? cfg.out_dir : out_override;
  fs::create_directories(out);

  LoadedData data = load_data(cfg);
  std::vector<const std::vector<TrajectoryRecord>*> dataset_ptrs;
  for (const auto& ds : data.datasets) dataset_ptrs.push_back(&ds);
  MixtureSampler mixture(dataset_ptrs, data.weights);

  Policy policy(cfg.policy_config(), cfg.model_seed);
  DiffusionSchedule sched =
      build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
  TrainConfig train_cfg = cfg.train_config();
  train_cfg.resume_from = resume;

  std::cout << "training " << policy.params().total_scalars() << " parameters for "
            << train_cfg.steps << " steps (batch " << train_cfg.batch_size
            << ", 1:" << train_cfg.ratio_n << ", H=" << cfg.horizon << ")\n";
  auto result = train(policy, mixture, data.norm, sched, train_cfg, out,
                      [](const TrainMetrics& m) {
                        if (m.step % 200 == 0)
                          std::cout << "step " << m.step << "  L=" << m.total
                                    << "  L_fast=" << m.fast
                                    << "  L_slow=" << m.slow << "\n";
                      });

  write_normalizer(data.norm, out + "/normalizer.json");
  write_resolved_config(cfg, out);
  write_manifest(out + "/manifest.json", cat("train --config ", config_path),
                 cfg,
                 {{"checkpoint", result.final_checkpoint},
                  {"train_state", result.final_train_state},
                  {"metrics", out + "/metrics.jsonl"},
                  {"normalizer", out + "/normalizer.json"}});
  if (!result.metrics.empty())
    std::cout << "final: L=" << result.metrics.back().total
              << "  L_fast=" << result.metrics.back().fast
              << "  L_slow=" << result.metrics.back().slow << "\n";
  std::cout << "checkpoint: " << result.final_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             int rollouts, int repeats, std::uint64_t seed, bool random_policy,
             const std::string& normalizer_path, const std::string& out_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  EvalOptions opts = eval_options(cfg);
  if (rollouts > 0) opts.rollouts = rollouts;
  if (repeats > 0) opts.repeats = repeats;
  if (seed != 0) opts.seed = seed;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    opts.trace_dir = out_dir;
  }

  EvalResult result;
  if (random_policy) {
    result = evaluate_random_policy(opts);
  } else {
    if (checkpoint.empty()) throw ConfigError("eval: --checkpoint required");
    Policy policy(cfg.policy_config(), cfg.model_seed);
    policy.load(checkpoint);
    Normalizer norm = normalizer_near_checkpoint(checkpoint, normalizer_path);
    DiffusionSchedule sched =
        build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
    result = evaluate_policy(policy, norm, sched, opts);
  }

  json report;
  report["mean_success"] = result.mean_success;
  report["variance"] = result.variance;
  report["repeat_means"] = result.repeat_means;
  report["hz_mean"] = result.hz_mean;
  report["rollouts"] = result.rollouts_run;
  std::cout << report.dump(2) << "\n";
  if (!out_dir.empty()) {
    std::ofstream out(out_dir + "/eval.json", std::ios::trunc);
    out << report.dump(2) << '\n';
    write_resolved_config(cfg, out_dir);
    std::map<std::string, std::string> artifacts{{"eval", out_dir + "/eval.json"}};
    if (!checkpoint.empty()) artifacts["checkpoint"] = checkpoint;
    write_manifest(out_dir + "/manifest.json",
                   cat("eval --config ", config_path), cfg, artifacts);
  }
  return 0;
}

int cmd_bench(const std::string& config_path, const std::string& checkpoint,
              const std::string& normalizer_path, const std::string& out_csv) {
  RunConfig cfg = RunConfig::from_file(config_path);
  Policy policy(cfg.policy_config(), cfg.model_seed);
  policy.load(checkpoint);
  Normalizer norm = normalizer_near_checkpoint(checkpoint, normalizer_path);
  DiffusionSchedule sched =
      build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
  PolicyController controller(policy, norm, sched, cfg.sampler_steps);

  // Warm-up pass so first-touch costs stay out of the measurements.
  {
    ToyEnv env(cfg.env_config());
    Rng rng(1);
    ControlLoopOptions loop;
    loop.ratio_n = 1;
    loop.horizon = 1;
    loop.max_steps = 2;
    control_loop(env, 1, controller.callbacks(1), loop, rng);
  }

  BenchConfig bench_cfg;
  bench_cfg.ratios = cfg.bench_ratios;
  bench_cfg.chunks = cfg.bench_chunks;
  bench_cfg.trials = cfg.bench_trials;
  bench_cfg.seed = cfg.eval_seed;
  auto runner = [&](int n, int h, std::uint64_t seed) {
    ToyEnv env(cfg.env_config());
    Rng rng(seed, 0xBE);
    ControlLoopOptions loop;
    loop.ratio_n = n;
    loop.horizon = h;
    loop.max_steps = std::max<long>(2L * n * h, 16);
    RolloutStats stats = control_loop(env, seed, controller.callbacks(h), loop, rng);
    check_rollout_invariants(stats, n, h);
    return stats;
  };
  auto cells = bench_frequency(runner, bench_cfg);
  write_bench_csv(cells, out_csv);
  write_manifest(out_csv + ".manifest.json", cat("bench --config ", config_path),
                 cfg, {{"table", out_csv}, {"checkpoint", checkpoint}});
  std::cout << "n,H,hz_mean,hz_std,t1_ms,t2_ms\n";
  for (const auto& c : cells)
    std::cout << c.ratio_n << ',' << c.horizon << ',' << c.hz_mean << ','
              << c.hz_std << ',' << c.t1_ms << ',' << c.t2_ms << "\n";
  return 0;
}

}  // namespace

namespace {

int parse_cell_int(const std::string& cell, char prefix) {
  if (cell.size() < 2 || cell[0] != prefix)
    throw ConfigError(cat("ablate: malformed cell '", cell, "'"));
  return std::stoi(cell.substr(1));
}

}  // namespace

std::vector<std::string> ablation_cells(const std::string& axis) {
  if (axis == "blocks") return {"k1", "k2", "k4", "k8"};
  if (axis == "modality")
    return {"latent-only", "state", "state-image", "all"};
  if (axis == "ratio") return {"n1", "n2", "n4", "n8"};
  if (axis == "chunk") return {"H1", "H2", "H4", "H8"};
  if (axis == "variant") return {"default", "variant1", "variant2", "variant3"};
  throw ConfigError(cat("ablate: unknown axis '", axis,
                        "' (blocks|modality|ratio|chunk|variant)"));
}

RunConfig apply_ablation_cell(const RunConfig& base, const std::string& axis,
                              const std::string& cell) {
  RunConfig cfg = base;
  if (axis == "blocks") {
    // The grid includes k = 8; every cell runs at the same raised depth so
    // only the shared-block count varies within the axis.
    cfg.n_blocks = 9;
    cfg.k_shared = parse_cell_int(cell, 'k');
  } else if (axis == "modality") {
    if (cell == "latent-only") {
      cfg.s1_inputs = {false, false, false};
    } else if (cell == "state") {
      cfg.s1_inputs = {false, false, true};
    } else if (cell == "state-image") {
      cfg.s1_inputs = {true, false, true};
    } else if (cell == "all") {
      cfg.s1_inputs = {true, true, true};
    } else {
      throw ConfigError(cat("ablate: unknown modality cell '", cell, "'"));
    }
  } else if (axis == "ratio") {
    cfg.ratio_n = parse_cell_int(cell, 'n');
  } else if (axis == "chunk") {
    cfg.horizon = parse_cell_int(cell, 'H');
  } else if (axis == "variant") {
    if (cell == "default") {
      cfg.s2_inputs = {true, false, false};
      cfg.s1_inputs = {true, true, true};
    } else if (cell == "variant1") {
      cfg.s2_inputs = {true, true, false};
      cfg.s1_inputs = {true, false, true};
    } else if (cell == "variant2") {
      cfg.s2_inputs = {true, true, true};
      cfg.s1_inputs = {true, false, false};
    } else if (cell == "variant3") {
      cfg.s2_inputs = {true, true, false};
      cfg.s1_inputs = {true, true, true};
    } else {
      throw ConfigError(cat("ablate: unknown variant cell '", cell, "'"));
    }
  } else {
    throw ConfigError(cat("ablate: unknown axis '", axis, "'"));
  }
  cfg.validate();
  return cfg;
}

std::vector<AblationCell> run_ablation_axis(const RunConfig& base,
                                            const std::string& axis, int seeds,
                                            const std::string& out_dir) {
  if (seeds < 1) throw ConfigError("ablate: seeds must be >= 1");
  fs::create_directories(out_dir);
  LoadedData data = load_data(base);
  std::vector<const std::vector<TrajectoryRecord>*> dataset_ptrs;
  for (const auto& ds : data.datasets) dataset_ptrs.push_back(&ds);

  std::vector<AblationCell> rows;
  for (const auto& cell_name : ablation_cells(axis)) {
    RunConfig cfg = apply_ablation_cell(base, axis, cell_name);
    AblationCell row;
    row.cell = cell_name;
    double success_sum = 0.0, success_sq = 0.0, hz_sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
      Policy policy(cfg.policy_config(), cfg.model_seed + static_cast<std::uint64_t>(s));
      MixtureSampler mixture(dataset_ptrs, data.weights.empty()
                                               ? std::vector<double>(dataset_ptrs.size(), 1.0)
                                               : data.weights);
      DiffusionSchedule sched =
          build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
      TrainConfig train_cfg = cfg.train_config();
      train_cfg.seed = cfg.train_seed + static_cast<std::uint64_t>(s);
      const std::string cell_dir = cat(out_dir, "/", axis, "_", cell_name, "_s", s);
      train(policy, mixture, data.norm, sched, train_cfg, cell_dir);

      EvalOptions opts = eval_options(cfg);
      opts.ratio_n = cfg.ratio_n;
      opts.horizon = cfg.horizon;
      // Paired evaluation: every cell sees the same eval seeds per seed
      // index, so cell comparisons are matched.
      opts.seed = cfg.eval_seed + 7919ULL * static_cast<std::uint64_t>(s);
      EvalResult eval = evaluate_policy(policy, data.norm, sched, opts);
      success_sum += eval.mean_success;
      success_sq += eval.mean_success * eval.mean_success;
      hz_sum += eval.hz_mean;
    }
    row.success_mean = success_sum / seeds;
    row.success_var = success_sq / seeds - row.success_mean * row.success_mean;
    row.hz_mean = hz_sum / seeds;
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::string& axis,
                        const std::vector<AblationCell>& cells,
                        const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(cat("ablate: cannot open ", path));
  out << "axis,cell,success_mean,success_var,hz_mean\n";
  for (const auto& c : cells)
    out << axis << ',' << c.cell << ',' << c.success_mean << ','
        << c.success_var << ',' << c.hz_mean << '\n';
}

int run(int argc, const char* const* argv) {
  CLI::App app{"dual-system vision-language-action policy toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint, resume, normalizer_path, axis;
  int episodes = 100, rollouts = 0, repeats = 0, seeds = 1;
  std::uint64_t seed = 0;
  bool random_policy = false;

  auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations");
  gen->add_option("--episodes", episodes, "number of episodes")->default_val(100);
  gen->add_option("--seed", seed, "base seed");
  gen->add_option("--out", out_path, "dataset output path")->required();
  gen->add_option("--config", config_path, "run config (optional)");

  auto* tr = app.add_subcommand("train", "train a policy");
  tr->add_option("--config", config_path, "run config")->required();
  tr->add_option("--out", out_path, "output directory override");
  tr->add_option("--resume", resume, "training-state checkpoint to resume");

  auto* ev = app.add_subcommand("eval", "closed-loop evaluation");
  ev->add_option("--config", config_path, "run config")->required();
  ev->add_option("--checkpoint", checkpoint, "parameter checkpoint");
  ev->add_option("--rollouts", rollouts, "rollouts per repeat");
  ev->add_option("--repeats", repeats, "number of repeats");
  ev->add_option("--seed", seed, "evaluation seed override");
  ev->add_option("--normalizer", normalizer_path, "action stats file");
  ev->add_option("--out", out_path, "directory for eval.json and traces");
  ev->add_flag("--random-policy", random_policy, "uniform-random baseline");

  auto* be = app.add_subcommand("bench", "control-frequency benchmark");
  be->add_option("--config", config_path, "run config")->required();
  be->add_option("--checkpoint", checkpoint, "parameter checkpoint")->required();
  be->add_option("--normalizer", normalizer_path, "action stats file");
  be->add_option("--out", out_path, "output CSV path")->required();

  auto* ab = app.add_subcommand("ablate", "train/eval one ablation axis");
  ab->add_option("--config", config_path, "base run config")->required();
  ab->add_option("--axis", axis, "blocks|modality|ratio|chunk|variant")->required();
  ab->add_option("--seeds", seeds, "paired seeds per cell")->default_val(1);
  ab->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, episodes, seed, out_path);
    if (tr->parsed()) return cmd_train(config_path, out_path, resume);
    if (ev->parsed())
      return cmd_eval(config_path, checkpoint, rollouts, repeats, seed,
                      random_policy, normalizer_path, out_path);
    if (be->parsed()) return cmd_bench(config_path, checkpoint, normalizer_path, out_path);
    if (ab->parsed()) {
      RunConfig base = RunConfig::from_file(config_path);
      auto cells = run_ablation_axis(base, axis, seeds, out_path);
      const std::string csv = cat(out_path, "/ablate_", axis, ".csv");
      write_ablation_csv(axis, cells, csv);
      write_manifest(cat(out_path, "/manifest.json"),
                     cat("ablate --axis ", axis), base, {{"table", csv}});
      std::cout << "axis,cell,success_mean,success_var,hz_mean\n";
      for (const auto& c : cells)
        std::cout << axis << ',' << c.cell << ',' << c.success_mean << ','
                  << c.success_var << ',' << c.hz_mean << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace dsvla::cli
