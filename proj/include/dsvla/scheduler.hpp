#pragma once

// Asynchronous closed-loop execution: latent caching with a 1:n refresh
// ratio, chunked action emission, rollout event traces, and the control
// frequency benchmark.
//
// Trace file: newline-delimited JSON events {"kind": "s1"|"s2"|"env",
// "step", "wall_ms", "latent_age"}. Frequency table: CSV with header
// n,H,hz_mean,hz_std,t1_ms,t2_ms.
//
// Amortized control frequency counts inference wall time only; environment
// stepping is excluded.
//
// Default execution is serialized (refresh before use, every n-th fast
// inference). The optional pipelined mode overlaps the slow refresh with
// chunk execution through a single-slot latest-value cell with version
// tags; the consumer blocks only at bootstrap and at the age cap n. Its
// env-step conditioning age bound is (n+1)*H - 1 instead of the serialized
// n*H - 1.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dsvla/diffusion.hpp"
#include "dsvla/env.hpp"
#include "dsvla/policy.hpp"

namespace dsvla {

struct RolloutEvent {
  std::string kind;  // "s1", "s2", "env"
  long step = 0;     // environment step counter at the event
  double wall_ms = 0.0;
  int latent_age = 0;  // fast inferences since the active latent's refresh
};

struct RolloutStats {
  long steps_executed = 0;
  long s1_inferences = 0;
  long s2_inferences = 0;
  std::vector<double> s1_latency_ms;
  std::vector<double> s2_latency_ms;
  int max_latent_age = 0;
  bool success = false;
  std::vector<RolloutEvent> trace;

  double inference_wall_ms() const;
  // actions emitted per second of inference wall time
  double amortized_hz() const;
};

void write_trace(const RolloutStats& stats, const std::string& path);

struct SchedulerCallbacks {
  // Slow system: full reasoning pass over the observation.
  std::function<std::shared_ptr<const LatentCondition>(const Observation&,
                                                       long env_step)>
      compute_latent;
  // Fast system: one chunk inference under the given latent. The returned
  // chunk is in environment action space.
  std::function<ActionChunk(const LatentCondition&, const Observation&, Rng&)>
      sample_chunk;
};

struct ControlLoopOptions {
  int ratio_n = 4;
  int horizon = 4;
  long max_steps = 200;
  bool pipelined = false;
};

RolloutStats control_loop(ToyEnv& env, std::uint64_t env_seed,
                          const SchedulerCallbacks& callbacks,
                          const ControlLoopOptions& options, Rng& rng);

// Post-hoc verification of the counting invariants from the event trace:
// s2 = ceil(s1 / n); (s1-1)*H < steps <= s1*H; latent age <= n-1; every env
// step conditioned on a slow observation at most n*H-1 steps old. Only
// valid for serialized rollouts. Throws NumericError on violation.
void check_rollout_invariants(const RolloutStats& stats, int ratio_n,
                              int horizon);

// Binds a trained policy to the scheduler: the slow pass caches the split
// latent, the fast pass denoises a chunk and denormalizes it into
// environment actions.
class PolicyController {
 public:
  PolicyController(const Policy& policy, const Normalizer& norm,
                   const DiffusionSchedule& sched, int sampler_steps);
  SchedulerCallbacks callbacks(int horizon) const;

 private:
  const Policy& policy_;
  const Normalizer& norm_;
  const DiffusionSchedule& sched_;
  int sampler_steps_;
};

struct BenchCell {
  int ratio_n = 0;
  int horizon = 0;
  double hz_mean = 0.0;
  double hz_std = 0.0;
  double t1_ms = 0.0;
  double t2_ms = 0.0;
};

struct BenchConfig {
  std::vector<int> ratios{1, 2, 4, 8};
  std::vector<int> chunks{1, 2, 4, 8};
  int trials = 3;
  long steps_per_trial = 0;  // 0: auto (2 * n * H, at least 16)
  std::uint64_t seed = 0;
};

// Runs rollouts per grid cell and reduces to the frequency table. The
// runner receives (n, H, trial seed) and returns that rollout's stats.
std::vector<BenchCell> bench_frequency(
    const std::function<RolloutStats(int n, int horizon, std::uint64_t seed)>& run,
    const BenchConfig& cfg);

void write_bench_csv(const std::vector<BenchCell>& cells,
                     const std::string& path);

// Closed-loop evaluation: `rollouts` episodes per repeat, `repeats` times;
// reports the mean success rate and the variance of the per-repeat means.
struct EvalOptions {
  int rollouts = 20;
  int repeats = 3;
  std::uint64_t seed = 0;
  int ratio_n = 4;
  int horizon = 4;
  int sampler_steps = 100;
  long max_steps = 200;
  EnvConfig env;
  std::string trace_dir;  // empty: traces are not written
  bool check_invariants = true;
};

struct EvalResult {
  double mean_success = 0.0;
  double variance = 0.0;
  std::vector<double> repeat_means;
  double hz_mean = 0.0;
  long rollouts_run = 0;
};

EvalResult evaluate_policy(const Policy& policy, const Normalizer& norm,
                           const DiffusionSchedule& sched,
                           const EvalOptions& options);

// Baseline: uniform random actions, same protocol.
EvalResult evaluate_random_policy(const EvalOptions& options);

}  // namespace dsvla
