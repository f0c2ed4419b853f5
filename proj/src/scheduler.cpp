#include "dsvla/scheduler.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "dsvla/error.hpp"

namespace dsvla {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Single-slot latest-value cell with version tags. The producer overwrites,
// the consumer adopts the newest version without blocking.
class LatentCell {
 public:
  void publish(std::shared_ptr<const LatentCondition> latent, long source_step,
               double latency_ms) {
    std::lock_guard lock(m_);
    latent_ = std::move(latent);
    source_step_ = source_step;
    ++version_;
    log_.push_back({source_step, latency_ms});
    cv_.notify_all();
  }

  struct Snapshot {
    std::shared_ptr<const LatentCondition> latent;
    long source_step = 0;
    std::uint64_t version = 0;
  };

  Snapshot latest() const {
    std::lock_guard lock(m_);
    return {latent_, source_step_, version_};
  }

  Snapshot wait_for_newer(std::uint64_t version) const {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return version_ > version; });
    return {latent_, source_step_, version_};
  }

  // Every executed refresh, adopted or overwritten.
  std::vector<std::pair<long, double>> publish_log() const {
    std::lock_guard lock(m_);
    return log_;
  }

 private:
  mutable std::mutex m_;
  mutable std::condition_variable cv_;
  std::shared_ptr<const LatentCondition> latent_;
  long source_step_ = 0;
  std::uint64_t version_ = 0;
  std::vector<std::pair<long, double>> log_;
};

// One worker computing slow-pass refreshes from the most recent request.
class RefreshWorker {
 public:
  RefreshWorker(const SchedulerCallbacks& callbacks, LatentCell& cell)
      : callbacks_(callbacks), cell_(cell), thread_([this] { run(); }) {}

  ~RefreshWorker() {
    {
      std::lock_guard lock(m_);
      stop_ = true;
      cv_.notify_all();
    }
    thread_.join();
  }

  void request(Observation obs, long env_step) {
    std::lock_guard lock(m_);
    job_obs_ = std::move(obs);
    job_step_ = env_step;
    has_job_ = true;
    cv_.notify_all();
  }

 private:
  void run() {
    while (true) {
      Observation obs;
      long step = 0;
      {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return has_job_ || stop_; });
        if (stop_) return;
        obs = std::move(job_obs_);
        step = job_step_;
        has_job_ = false;
      }
      const auto t0 = Clock::now();
      auto latent = callbacks_.compute_latent(obs, step);
      cell_.publish(std::move(latent), step, ms_since(t0));
    }
  }

  const SchedulerCallbacks& callbacks_;
  LatentCell& cell_;
  std::mutex m_;
  std::condition_variable cv_;
  Observation job_obs_;
  long job_step_ = 0;
  bool has_job_ = false;
  bool stop_ = false;
  std::thread thread_;
};

}  // namespace

double RolloutStats::inference_wall_ms() const {
  double total = 0.0;
  for (double v : s1_latency_ms) total += v;
  for (double v : s2_latency_ms) total += v;
  return total;
}

double RolloutStats::amortized_hz() const {
  const double ms = inference_wall_ms();
  if (ms <= 0.0) return 0.0;
  return static_cast<double>(steps_executed) / (ms / 1000.0);
}

void write_trace(const RolloutStats& stats, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(cat("trace: cannot open ", path, " for writing"));
  for (const auto& event : stats.trace) {
    nlohmann::json record;
    record["kind"] = event.kind;
    record["step"] = event.step;
    record["wall_ms"] = event.wall_ms;
    record["latent_age"] = event.latent_age;
    out << record.dump() << '\n';
  }
}

RolloutStats control_loop(ToyEnv& env, std::uint64_t env_seed,
                          const SchedulerCallbacks& callbacks,
                          const ControlLoopOptions& options, Rng& rng) {
  if (options.ratio_n < 1 || options.horizon < 1)
    throw ConfigError("control_loop: ratio and horizon must be >= 1");
  RolloutStats stats;
  Observation obs = env.reset(env_seed);

  std::shared_ptr<const LatentCondition> latent;
  int age = 0;
  bool done = false;

  LatentCell cell;
  std::unique_ptr<RefreshWorker> worker;
  std::uint64_t adopted_version = 0;
  if (options.pipelined) worker = std::make_unique<RefreshWorker>(callbacks, cell);

  for (long j = 0; !done && stats.steps_executed < options.max_steps; ++j) {
    if (options.pipelined) {
      if (j % options.ratio_n == 0)
        worker->request(obs, stats.steps_executed);
      auto snap = cell.latest();
      // Block only at bootstrap or at the age cap; otherwise adopt the
      // newest available latent or keep aging the current one.
      if (!latent || (snap.version == adopted_version && age >= options.ratio_n))
        snap = cell.wait_for_newer(adopted_version);
      if (snap.version > adopted_version) {
        adopted_version = snap.version;
        latent = snap.latent;
        age = 0;
      } else {
        ++age;
      }
    } else {
      if (j % options.ratio_n == 0) {
        const auto t0 = Clock::now();
        latent = callbacks.compute_latent(obs, stats.steps_executed);
        const double ms = ms_since(t0);
        age = 0;
        ++stats.s2_inferences;
        stats.s2_latency_ms.push_back(ms);
        stats.trace.push_back({"s2", stats.steps_executed, ms, 0});
      } else {
        ++age;
      }
    }
    if (!latent) throw NumericError("control_loop: no latent available");
    stats.max_latent_age = std::max(stats.max_latent_age, age);

    const auto t0 = Clock::now();
    ActionChunk chunk = callbacks.sample_chunk(*latent, obs, rng);
    const double s1_ms = ms_since(t0);
    ++stats.s1_inferences;
    stats.s1_latency_ms.push_back(s1_ms);
    stats.trace.push_back({"s1", stats.steps_executed, s1_ms, age});
    if (chunk.horizon != options.horizon || chunk.action_dim <= 0)
      throw ShapeError("control_loop: sampled chunk has the wrong shape");

    // Open-loop execution of the whole chunk.
    for (int h = 0; h < options.horizon && !done &&
                    stats.steps_executed < options.max_steps;
         ++h) {
      std::vector<double> action(static_cast<std::size_t>(chunk.action_dim));
      for (int d = 0; d < chunk.action_dim; ++d) action[static_cast<std::size_t>(d)] = chunk.at(h, d);
      auto result = env.step(action);
      ++stats.steps_executed;
      stats.trace.push_back({"env", stats.steps_executed, 0.0, age});
      obs = std::move(result.obs);
      if (result.done) {
        done = true;
        stats.success = result.success;
      }
    }
  }

  if (options.pipelined) {
    // Slow-pass accounting comes from the publish log: each executed
    // refresh costs wall time whether or not its result was adopted before
    // being overwritten.
    worker.reset();
    for (const auto& [source_step, latency_ms] : cell.publish_log()) {
      ++stats.s2_inferences;
      stats.s2_latency_ms.push_back(latency_ms);
      stats.trace.push_back({"s2", source_step, latency_ms, 0});
    }
  }
  return stats;
}

void check_rollout_invariants(const RolloutStats& stats, int ratio_n,
                              int horizon) {
  const long s1 = stats.s1_inferences;
  const long s2 = stats.s2_inferences;
  if (s1 <= 0) throw NumericError("rollout invariants: no fast inferences");
  if (s2 != (s1 + ratio_n - 1) / ratio_n)
    throw NumericError(cat("rollout invariants: s2 = ", s2, " but ceil(s1/n) = ",
                           (s1 + ratio_n - 1) / ratio_n));
  if (stats.steps_executed > s1 * static_cast<long>(horizon) ||
      stats.steps_executed <= (s1 - 1) * static_cast<long>(horizon))
    throw NumericError(cat("rollout invariants: ", stats.steps_executed,
                           " steps vs ", s1, " inferences of chunk ", horizon));
  if (stats.max_latent_age > ratio_n - 1)
    throw NumericError(cat("rollout invariants: latent age ",
                           stats.max_latent_age, " exceeds n-1"));
  long last_s2_step = -1;
  for (const auto& event : stats.trace) {
    if (event.kind == "s2") {
      last_s2_step = event.step;
    } else if (event.kind == "s1") {
      if (event.latent_age > ratio_n - 1)
        throw NumericError("rollout invariants: trace shows age > n-1");
    } else if (event.kind == "env") {
      if (last_s2_step < 0)
        throw NumericError("rollout invariants: env step before any refresh");
      // Executed step s2+k is conditioned on the observation taken after
      // s2 steps, i.e. k-1 steps stale; the bound is n*H - 1.
      const long staleness = event.step - last_s2_step - 1;
      if (staleness > static_cast<long>(ratio_n) * horizon - 1)
        throw NumericError(cat("rollout invariants: env step ", event.step,
                               " conditioned on an observation ", staleness,
                               " steps old (bound ",
                               static_cast<long>(ratio_n) * horizon - 1, ")"));
    }
  }
}

PolicyController::PolicyController(const Policy& policy, const Normalizer& norm,
                                   const DiffusionSchedule& sched,
                                   int sampler_steps)
    : policy_(policy), norm_(norm), sched_(sched), sampler_steps_(sampler_steps) {}

SchedulerCallbacks PolicyController::callbacks(int horizon) const {
  SchedulerCallbacks cb;
  cb.compute_latent = [this](const Observation& obs, long env_step) {
    auto s2 = policy_.system2_forward(obs);
    return std::make_shared<const LatentCondition>(
        policy_.make_latent(s2, env_step, /*detached=*/true));
  };
  cb.sample_chunk = [this, horizon](const LatentCondition& latent,
                                    const Observation& obs, Rng& rng) {
    SamplerOptions opts;
    opts.steps = sampler_steps_;
    ActionChunk normalized =
        sample_chunk(policy_.denoiser(latent, obs), horizon,
                     policy_.config().action_dim(), sched_, rng, opts);
    ActionChunk env_chunk = normalized;
    for (int h = 0; h < normalized.horizon; ++h) {
      std::vector<double> row(static_cast<std::size_t>(normalized.action_dim));
      for (int d = 0; d < normalized.action_dim; ++d) row[static_cast<std::size_t>(d)] = normalized.at(h, d);
      const auto denorm = norm_.denormalize(row);
      for (int d = 0; d < normalized.action_dim; ++d) env_chunk.at(h, d) = denorm[static_cast<std::size_t>(d)];
    }
    return env_chunk;
  };
  return cb;
}

std::vector<BenchCell> bench_frequency(
    const std::function<RolloutStats(int n, int horizon, std::uint64_t seed)>& run,
    const BenchConfig& cfg) {
  if (cfg.trials < 1) throw ConfigError("bench: trials must be >= 1");
  std::vector<BenchCell> cells;
  std::uint64_t seed = cfg.seed;
  for (int n : cfg.ratios) {
    for (int h : cfg.chunks) {
      BenchCell cell;
      cell.ratio_n = n;
      cell.horizon = h;
      std::vector<double> hzs;
      double t1_sum = 0.0, t2_sum = 0.0;
      long t1_count = 0, t2_count = 0;
      for (int trial = 0; trial < cfg.trials; ++trial) {
        RolloutStats stats = run(n, h, seed++);
        hzs.push_back(stats.amortized_hz());
        for (double v : stats.s1_latency_ms) {
          t1_sum += v;
          ++t1_count;
        }
        for (double v : stats.s2_latency_ms) {
          t2_sum += v;
          ++t2_count;
        }
      }
      double mean = 0.0;
      for (double v : hzs) mean += v;
      mean /= static_cast<double>(hzs.size());
      double var = 0.0;
      for (double v : hzs) var += (v - mean) * (v - mean);
      var /= static_cast<double>(hzs.size());
      cell.hz_mean = mean;
      cell.hz_std = std::sqrt(var);
      cell.t1_ms = t1_count > 0 ? t1_sum / static_cast<double>(t1_count) : 0.0;
      cell.t2_ms = t2_count > 0 ? t2_sum / static_cast<double>(t2_count) : 0.0;
      cells.push_back(cell);
    }
  }
  return cells;
}

namespace {

EvalResult run_eval(const EvalOptions& options,
                    const std::function<SchedulerCallbacks()>& make_callbacks) {
  EvalResult result;
  double hz_sum = 0.0;
  for (int repeat = 0; repeat < options.repeats; ++repeat) {
    int successes = 0;
    for (int rollout = 0; rollout < options.rollouts; ++rollout) {
      const std::uint64_t seed =
          options.seed + 100003ULL * static_cast<std::uint64_t>(repeat) +
          static_cast<std::uint64_t>(rollout);
      ToyEnv env(options.env);
      Rng rng(seed, /*stream=*/0x5A3);
      SchedulerCallbacks callbacks = make_callbacks();
      ControlLoopOptions loop;
      loop.ratio_n = options.ratio_n;
      loop.horizon = options.horizon;
      loop.max_steps = options.max_steps;
      RolloutStats stats = control_loop(env, seed, callbacks, loop, rng);
      if (options.check_invariants)
        check_rollout_invariants(stats, options.ratio_n, options.horizon);
      if (!options.trace_dir.empty())
        write_trace(stats, cat(options.trace_dir, "/trace_r", repeat, "_e",
                               rollout, ".jsonl"));
      successes += stats.success ? 1 : 0;
      hz_sum += stats.amortized_hz();
      ++result.rollouts_run;
    }
    result.repeat_means.push_back(static_cast<double>(successes) /
                                  options.rollouts);
  }
  double mean = 0.0;
  for (double m : result.repeat_means) mean += m;
  mean /= static_cast<double>(result.repeat_means.size());
  double var = 0.0;
  for (double m : result.repeat_means) var += (m - mean) * (m - mean);
  var /= static_cast<double>(result.repeat_means.size());
  result.mean_success = mean;
  result.variance = var;
  result.hz_mean = hz_sum / static_cast<double>(result.rollouts_run);
  return result;
}

}  // namespace

EvalResult evaluate_policy(const Policy& policy, const Normalizer& norm,
                           const DiffusionSchedule& sched,
                           const EvalOptions& options) {
  PolicyController controller(policy, norm, sched, options.sampler_steps);
  return run_eval(options,
                  [&] { return controller.callbacks(options.horizon); });
}

EvalResult evaluate_random_policy(const EvalOptions& options) {
  return run_eval(options, [&] {
    SchedulerCallbacks cb;
    cb.compute_latent = [](const Observation&, long env_step) {
      LatentCondition latent;
      latent.hiddens = Tensor::zeros({1, 1});
      latent.source_step = env_step;
      return std::make_shared<const LatentCondition>(latent);
    };
    const int horizon = options.horizon;
    cb.sample_chunk = [horizon](const LatentCondition&, const Observation&,
                                Rng& rng) {
      ActionChunk chunk = ActionChunk::zeros(horizon, 3);
      for (auto& v : chunk.values) v = rng.uniform(-1.0, 1.0);
      return chunk;
    };
    return cb;
  });
}

void write_bench_csv(const std::vector<BenchCell>& cells,
                     const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(cat("bench: cannot open ", path, " for writing"));
  out << "n,H,hz_mean,hz_std,t1_ms,t2_ms\n";
  for (const auto& cell : cells) {
    out << cell.ratio_n << ',' << cell.horizon << ',' << cell.hz_mean << ','
        << cell.hz_std << ',' << cell.t1_ms << ',' << cell.t2_ms << '\n';
  }
}

}  // namespace dsvla
