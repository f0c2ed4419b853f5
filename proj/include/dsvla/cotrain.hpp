#pragma once

// Dual-aware co-training: asynchronous example construction, the combined
// denoising + autoregressive objective, and the optimization loop.
//
// Metrics log: newline-delimited JSON records
//   {"step", "L", "L_fast", "L_slow", "grad_norm", "wall_ms"}.
// wall_ms is wall-clock telemetry; every other field is deterministic under
// a fixed seed and identical across reruns and checkpoint resume.
//
// Training-state checkpoints use the parameter container format with the
// optimizer moments stored as "adam.m.<param>" / "adam.v.<param>" tensors
// and {step, rng key/counter, adam step} in the meta section.

#include <functional>
#include <string>
#include <vector>

#include "dsvla/diffusion.hpp"
#include "dsvla/env.hpp"
#include "dsvla/policy.hpp"

namespace dsvla {

struct TrainingExample {
  Observation s2_obs;       // observation at t - delta
  Observation s1_obs;       // observation at t
  ActionChunk target_chunk;  // normalized actions t .. t+H-1
  int delta = 0;
  int t = 0;
};

// delta ~ U{0..n-1}; requires t-(n-1) >= 0 and t+H <= trajectory length.
// Targets are normalized with `norm` when given.
TrainingExample async_sample(const TrajectoryRecord& traj, int t, int ratio_n,
                             int horizon, Rng& rng,
                             const Normalizer* norm = nullptr);

struct LossParts {
  Tensor total;   // w_fast * fast + w_slow * slow (on the tape)
  double fast = 0.0;
  double slow = 0.0;
};

// One slow pass (teacher-forced AR loss + latent) and one fast pass
// (denoising loss). A fresh latent (delta = 0) carries gradients into the
// pre-split blocks; a stale one (delta > 0) is detached, mirroring the
// runtime cache. fast_draws > 1 averages the denoising loss over several
// (tau, eta) draws of the same example (Monte-Carlo variance reduction of
// the expectation; the slow pass is shared).
LossParts total_loss(const Policy& policy, const TrainingExample& example,
                     const DiffusionSchedule& sched, Rng& rng, double w_fast,
                     double w_slow, int fast_draws = 1);

class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore& params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step();
  long step_count() const { return step_count_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void export_state(Checkpoint& ckpt) const;
  void import_state(const Checkpoint& ckpt);

 private:
  ParamStore& params_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<std::pair<std::string, std::vector<double>>> m_, v_;
};

struct TrainConfig {
  int steps = 1000;
  int batch_size = 4;
  double lr = 1e-3;
  // "constant" or "cosine" (half-cosine decay from lr to zero over the run;
  // the memorization-grade criteria need the late-phase noise floor it buys).
  std::string lr_schedule = "constant";
  // Global gradient-norm clip. The denoising loss carries a 1/(1-betabar)
  // factor at small tau, so early batches can produce enormous gradients;
  // clipping keeps the optimizer stable. 0 disables.
  double grad_clip = 1.0;
  int ratio_n = 4;
  double w_fast = 1.0;
  double w_slow = 1.0;
  int fast_draws = 1;  // (tau, eta) draws per example in the fast loss
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::string resume_from;   // training-state checkpoint, empty for fresh
};

struct TrainMetrics {
  long step = 0;
  double total = 0.0, fast = 0.0, slow = 0.0, grad_norm = 0.0, wall_ms = 0.0;
};

struct TrainResult {
  std::vector<TrainMetrics> metrics;
  std::string final_checkpoint;   // parameters only
  std::string final_train_state;  // parameters + optimizer + rng
};

// Trains in place. When out_dir is non-empty, writes metrics.jsonl,
// periodic ckpt_step_<n>.state.bin files and the final checkpoint pair.
TrainResult train(Policy& policy, const MixtureSampler& data,
                  const Normalizer& norm, const DiffusionSchedule& sched,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::function<void(const TrainMetrics&)>& on_metrics = {});

}  // namespace dsvla
