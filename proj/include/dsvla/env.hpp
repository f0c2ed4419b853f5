#pragma once

// Deterministic 2D pick-and-place environment, scripted expert, and the
// trajectory dataset pipeline.
//
// Dataset file: newline-delimited JSON, one object per step:
//   {"episode", "t", "image", "pc", "state", "action", "instr", "done",
//    "success"}
// where "image" and "pc" are base64 of the raw little-endian float32 arrays
// (row-major; image is channel-major [3, side, side], pc is [N, 3]). A
// companion stats file "<dataset>.stats.json" holds per-dimension action
// percentiles {"action_p01": [...], "action_p99": [...]}.
//
// Observation arrays are quantized to float32 on emission so the dataset
// round-trip is lossless.

#include <string>
#include <utility>
#include <vector>

#include "dsvla/ar_head.hpp"
#include "dsvla/encoders.hpp"
#include "dsvla/rng.hpp"

namespace dsvla {

struct EnvConfig {
  int image_side = 32;
  int pc_ring_points = 64;  // per ring; total cloud is 2x this
  int max_episode_steps = 200;
  double max_step = 0.1;
  double grasp_radius = 0.08;
  double goal_radius = 0.08;
  double min_separation = 0.5;
  double spawn_extent = 0.8;
  ActionVocab vocab;  // instruction ids live in the word range

  int pc_points() const { return 2 * pc_ring_points; }
};

struct Observation {
  std::vector<double> image;  // [3, side, side] in [0, 1]
  PointCloud pointcloud;      // [2 * ring, 3] in [-1, 1]^3
  std::vector<double> state;  // effector x, y, gripper
  std::vector<int> instruction;
};

struct ToyEnvState {
  double ex = 0.0, ey = 0.0;  // effector
  int gripper = 0;            // 0 open, 1 closed
  double ox = 0.0, oy = 0.0;  // object
  double gx = 0.0, gy = 0.0;  // goal
  bool held = false;
  int step_count = 0;
  std::uint64_t seed = 0;
};

class ToyEnv {
 public:
  explicit ToyEnv(EnvConfig cfg = {});

  Observation reset(std::uint64_t seed);

  struct StepResult {
    Observation obs;
    bool done = false;
    bool success = false;
  };
  // action = (dx, dy, gripper), each clamped to [-1, 1]. Displacement is
  // action.xy * max_step with its norm clipped to max_step; gripper channel
  // > 0.5 closes, < -0.5 opens, the dead zone holds the current state.
  StepResult step(const std::vector<double>& action);

  const ToyEnvState& state() const { return state_; }
  const std::vector<int>& instruction() const { return instruction_; }
  const EnvConfig& config() const { return cfg_; }
  Observation observe() const;

 private:
  EnvConfig cfg_;
  ToyEnvState state_;
  std::vector<int> instruction_;
};

// Proportional pick-carry-release controller; deterministic in the state.
std::vector<double> scripted_expert(const ToyEnvState& state,
                                    const EnvConfig& cfg);

// The fixed template set (word ids offset into the vocab word range).
std::vector<std::vector<int>> instruction_templates(const ActionVocab& vocab);
const std::vector<std::string>& instruction_words();

struct TrajectoryStep {
  Observation obs;
  std::vector<double> action;
  bool done = false;
  bool success = false;
};

struct TrajectoryRecord {
  int episode_id = 0;
  std::vector<TrajectoryStep> steps;
  bool success = false;
};

// Rolls one expert episode from the given seed.
TrajectoryRecord roll_expert_episode(ToyEnv& env, std::uint64_t seed,
                                     int episode_id);

void write_dataset(const std::vector<TrajectoryRecord>& episodes,
                   const std::string& path);
std::vector<TrajectoryRecord> read_dataset(const std::string& path);
std::string stats_path_for(const std::string& dataset_path);

struct ActionStats {
  std::vector<double> p01;
  std::vector<double> p99;
};

// Linear-interpolated percentiles over all actions in the episodes.
ActionStats compute_action_stats(const std::vector<TrajectoryRecord>& episodes);
void write_stats(const ActionStats& stats, const std::string& path);
ActionStats read_stats(const std::string& path);

// Maps [p01, p99] to [-1, 1] per dimension (clamped); degenerate dimensions
// map to 0.
struct Normalizer {
  ActionStats stats;
  std::vector<double> normalize(const std::vector<double>& action) const;
  std::vector<double> denormalize(const std::vector<double>& normalized) const;
  // True if normalize would clamp (used to verify no silent clipping of
  // training targets).
  bool would_clip(const std::vector<double>& action) const;
};

// Weighted dataset choice, then a uniform episode within it.
class MixtureSampler {
 public:
  MixtureSampler(std::vector<const std::vector<TrajectoryRecord>*> datasets,
                 std::vector<double> weights);
  std::pair<int, int> draw_indices(Rng& rng) const;
  const TrajectoryRecord& draw(Rng& rng) const;

 private:
  std::vector<const std::vector<TrajectoryRecord>*> datasets_;
  std::vector<double> cumulative_;
};

}  // namespace dsvla
