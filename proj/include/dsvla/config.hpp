#pragma once

// Flat, sectioned key/value run configuration. Every tunable lives here;
// unknown sections or keys abort before any compute. The canonical dump of
// a parsed config reparses to the same configuration and is written next to
// every run artifact for reproduction.

#include <string>
#include <vector>

#include "dsvla/cotrain.hpp"
#include "dsvla/env.hpp"
#include "dsvla/policy.hpp"
#include "dsvla/scheduler.hpp"

namespace dsvla {

struct RunConfig {
  // [backbone]
  int n_blocks = 6;
  int k_shared = 2;
  int d_model = 64;
  int n_heads = 4;
  int max_seq_len = 160;

  // [vocab]
  int bins = 256;
  int vocab_size = 300;

  // [image]
  int image_side = 32;
  int patch_side = 8;
  int branch_dim = 64;

  // [pointcloud]
  int pc_points = 128;
  std::vector<int> pc_chain{64, 32, 16};
  int knn_k = 8;

  // [model]
  int horizon = 4;
  int action_dim = 3;
  ModalitySet s2_inputs{true, false, false};
  ModalitySet s1_inputs{true, true, true};
  std::uint64_t model_seed = 0;

  // [diffusion]
  int diffusion_steps = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int sampler_steps = 100;

  // [env]
  int max_episode_steps = 200;

  // [train]
  int train_steps = 10000;
  int batch_size = 4;
  double lr = 1e-3;
  std::string lr_schedule = "constant";
  double grad_clip = 1.0;
  int fast_draws = 1;
  int ratio_n = 4;
  double w_fast = 1.0;
  double w_slow = 1.0;
  std::uint64_t train_seed = 0;
  int checkpoint_every = 0;
  std::vector<std::string> data_paths;
  std::vector<double> data_weights;  // empty: all 1
  std::string out_dir = "out";

  // [eval]
  int eval_rollouts = 20;
  int eval_repeats = 3;
  std::uint64_t eval_seed = 0;

  // [bench]
  std::vector<int> bench_ratios{1, 2, 4, 8};
  std::vector<int> bench_chunks{1, 2, 4, 8};
  int bench_trials = 3;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);

  // Cross-module constraint validation (throws ConfigError).
  void validate() const;

  PolicyConfig policy_config() const;
  EnvConfig env_config() const;
  TrainConfig train_config() const;

  // Canonical text form; from_string(dump()) round-trips.
  std::string dump() const;
};

}  // namespace dsvla
