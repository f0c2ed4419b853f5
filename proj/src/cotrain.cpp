#include "dsvla/cotrain.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dsvla/ar_head.hpp"
#include "dsvla/error.hpp"

namespace dsvla {

namespace {

using nlohmann::json;

constexpr std::uint64_t kTrainStream = 0x7EA10;

std::string first_nonfinite_group(const ParamStore& params) {
  for (const auto& name : params.names()) {
    const Tensor& p = params.get(name);
    for (double v : *p.data)
      if (!std::isfinite(v)) return name;
    if (p.grad)
      for (double v : *p.grad)
        if (!std::isfinite(v)) return name;
  }
  return {};
}

}  // namespace

TrainingExample async_sample(const TrajectoryRecord& traj, int t, int ratio_n,
                             int horizon, Rng& rng, const Normalizer* norm) {
  const int len = static_cast<int>(traj.steps.size());
  if (ratio_n < 1 || horizon < 1)
    throw ConfigError("async_sample: ratio and horizon must be >= 1");
  if (t - (ratio_n - 1) < 0 || t + horizon > len)
    throw ShapeError(cat("async_sample: trajectory of length ", len,
                         " too short for t = ", t, ", n = ", ratio_n,
                         ", H = ", horizon));
  const int delta = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ratio_n)));

  TrainingExample example;
  example.t = t;
  example.delta = delta;
  example.s2_obs = traj.steps[static_cast<std::size_t>(t - delta)].obs;
  example.s1_obs = traj.steps[static_cast<std::size_t>(t)].obs;
  const int action_dim =
      static_cast<int>(traj.steps[static_cast<std::size_t>(t)].action.size());
  example.target_chunk = ActionChunk::zeros(horizon, action_dim);
  for (int h = 0; h < horizon; ++h) {
    const auto& raw = traj.steps[static_cast<std::size_t>(t + h)].action;
    const std::vector<double> a = norm != nullptr ? norm->normalize(raw) : raw;
    if (static_cast<int>(a.size()) != action_dim)
      throw ShapeError("async_sample: inconsistent action dimension");
    for (int d = 0; d < action_dim; ++d) example.target_chunk.at(h, d) = a[d];
  }
  example.target_chunk.validate();
  return example;
}

LossParts total_loss(const Policy& policy, const TrainingExample& example,
                     const DiffusionSchedule& sched, Rng& rng, double w_fast,
                     double w_slow, int fast_draws) {
  if (fast_draws < 1) throw ConfigError("total_loss: fast_draws must be >= 1");
  const std::vector<int> target_ids =
      discretize(policy.config().vocab, example.target_chunk.values);

  auto s2 = policy.system2_forward(example.s2_obs, &target_ids);
  Tensor l_slow = slow_loss(s2.ar_logits, s2.target_logit_rows, target_ids);

  // Stale latents are constants for backward, matching the runtime cache.
  LatentCondition latent = policy.make_latent(
      s2, example.t - example.delta, /*detached=*/example.delta > 0);
  std::vector<FastLossSample> batch(
      static_cast<std::size_t>(fast_draws),
      FastLossSample{example.target_chunk.tensor(),
                     policy.denoiser(latent, example.s1_obs)});
  Tensor l_fast = fast_loss(batch, sched, rng);

  LossParts parts;
  parts.fast = l_fast.item();
  parts.slow = l_slow.item();
  parts.total = ops::add(ops::scale(l_fast, w_fast), ops::scale(l_slow, w_slow));
  return parts;
}

AdamOptimizer::AdamOptimizer(ParamStore& params, double lr, double beta1,
                             double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& name : params_.names()) {
    m_.emplace_back(name, std::vector<double>(params_.get(name).numel(), 0.0));
    v_.emplace_back(name, std::vector<double>(params_.get(name).numel(), 0.0));
  }
}

void AdamOptimizer::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    Tensor& p = params_.get(m_[i].first);
    if (!p.grad) continue;
    auto& m = m_[i].second;
    auto& v = v_[i].second;
    const auto& g = *p.grad;
    auto& value = *p.data;
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
  params_.bump_version();
}

void AdamOptimizer::export_state(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const Tensor& p = params_.get(m_[i].first);
    ckpt.tensors.emplace_back(cat("adam.m.", m_[i].first),
                              Tensor::from(m_[i].second, p.shape));
    ckpt.tensors.emplace_back(cat("adam.v.", v_[i].first),
                              Tensor::from(v_[i].second, p.shape));
  }
  ckpt.meta.emplace_back("adam.step", static_cast<std::uint64_t>(step_count_));
}

void AdamOptimizer::import_state(const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const Tensor* m = ckpt.find(cat("adam.m.", m_[i].first));
    const Tensor* v = ckpt.find(cat("adam.v.", v_[i].first));
    if (m == nullptr || v == nullptr)
      throw ConfigError(cat("train state: missing optimizer moments for '",
                            m_[i].first, "'"));
    if (m->numel() != m_[i].second.size() || v->numel() != v_[i].second.size())
      throw ConfigError(cat("train state: moment size mismatch for '",
                            m_[i].first, "'"));
    m_[i].second = *m->data;
    v_[i].second = *v->data;
  }
  step_count_ = static_cast<long>(ckpt.meta_or("adam.step", 0));
}

namespace {

void write_train_state(const Policy& policy, const AdamOptimizer& adam,
                       long step, const Rng& rng, const std::string& path) {
  Checkpoint ckpt;
  const ParamStore& params = policy.params();
  for (const auto& name : params.names())
    ckpt.tensors.emplace_back(name, params.get(name));
  ckpt.fast_names.assign(params.fast_set().begin(), params.fast_set().end());
  adam.export_state(ckpt);
  ckpt.meta.emplace_back("train.step", static_cast<std::uint64_t>(step));
  ckpt.meta.emplace_back("rng.key", rng.key());
  ckpt.meta.emplace_back("rng.counter", rng.counter());
  ckpt.write(path);
}

}  // namespace

TrainResult train(Policy& policy, const MixtureSampler& data,
                  const Normalizer& norm, const DiffusionSchedule& sched,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::function<void(const TrainMetrics&)>& on_metrics) {
  if (cfg.steps < 0 || cfg.batch_size < 1 || cfg.ratio_n < 1)
    throw ConfigError("train: bad steps/batch/ratio");
  if (cfg.w_fast < 0.0 || cfg.w_slow < 0.0)
    throw ConfigError("train: loss weights must be non-negative");

  const int horizon = policy.config().horizon;
  Rng rng(cfg.seed, kTrainStream);
  AdamOptimizer adam(policy.params(), cfg.lr);
  long start_step = 0;

  if (!cfg.resume_from.empty()) {
    Checkpoint state = Checkpoint::read(cfg.resume_from);
    policy.params().assign_values(state);
    adam.import_state(state);
    start_step = static_cast<long>(state.meta_or("train.step", 0));
    rng = Rng::from_state(state.meta_or("rng.key", 0),
                          state.meta_or("rng.counter", 0));
  }

  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_file.open(out_dir + "/metrics.jsonl", std::ios::trunc);
    if (!metrics_file) throw IoError(cat("train: cannot write metrics in ", out_dir));
  }

  TrainResult result;
  const int min_len = cfg.ratio_n - 1 + horizon;

  if (cfg.lr_schedule != "constant" && cfg.lr_schedule != "cosine")
    throw ConfigError(cat("train: unknown lr schedule '", cfg.lr_schedule, "'"));

  for (long step = start_step + 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.lr_schedule == "cosine") {
      const double frac = static_cast<double>(step - 1) /
                          std::max(1, cfg.steps - 1);
      adam.set_learning_rate(cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac)));
    }
    policy.params().zero_grads();

    Tape tape;
    double fast_sum = 0.0, slow_sum = 0.0;
    Tensor batch_total;
    try {
      TapeScope scope(tape);
      for (int b = 0; b < cfg.batch_size; ++b) {
        const TrajectoryRecord* traj = nullptr;
        for (int attempt = 0; attempt < 64; ++attempt) {
          const TrajectoryRecord& candidate = data.draw(rng);
          if (static_cast<int>(candidate.steps.size()) >= min_len) {
            traj = &candidate;
            break;
          }
        }
        if (traj == nullptr)
          throw ShapeError(cat("train: no trajectory long enough for n = ",
                               cfg.ratio_n, ", H = ", horizon));
        const int len = static_cast<int>(traj->steps.size());
        const int lo = cfg.ratio_n - 1;
        const int hi = len - horizon;
        const int t = lo + static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(hi - lo + 1)));
        TrainingExample example =
            async_sample(*traj, t, cfg.ratio_n, horizon, rng, &norm);
        LossParts parts = total_loss(policy, example, sched, rng, cfg.w_fast,
                                     cfg.w_slow, cfg.fast_draws);
        fast_sum += parts.fast;
        slow_sum += parts.slow;
        batch_total = batch_total.data ? ops::add(batch_total, parts.total)
                                       : parts.total;
      }
      batch_total = ops::scale(batch_total, 1.0 / cfg.batch_size);
      if (!std::isfinite(batch_total.item()))
        throw NumericError("non-finite loss");
      tape.backward(batch_total);
    } catch (const NumericError& e) {
      const std::string group = first_nonfinite_group(policy.params());
      throw NumericError(cat("train: aborted at step ", step, ": ", e.what(),
                             group.empty()
                                 ? std::string(" (no non-finite parameter group)")
                                 : cat(" (parameter group '", group, "')")));
    }

    double grad_sq = 0.0;
    for (const auto& name : policy.params().names()) {
      const Tensor& p = policy.params().get(name);
      for (double g : *p.grad) grad_sq += g * g;
    }
    const double grad_norm = std::sqrt(grad_sq);
    if (cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip) {
      const double scale = cfg.grad_clip / grad_norm;
      for (const auto& name : policy.params().names())
        for (double& g : *policy.params().get(name).grad) g *= scale;
    }
    adam.step();

    TrainMetrics metric;
    metric.step = step;
    metric.total = batch_total.item();
    metric.fast = fast_sum / cfg.batch_size;
    metric.slow = slow_sum / cfg.batch_size;
    metric.grad_norm = grad_norm;  // pre-clip norm
    metric.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    result.metrics.push_back(metric);
    if (metrics_file.is_open()) {
      json record;
      record["step"] = metric.step;
      record["L"] = metric.total;
      record["L_fast"] = metric.fast;
      record["L_slow"] = metric.slow;
      record["grad_norm"] = metric.grad_norm;
      record["wall_ms"] = metric.wall_ms;
      metrics_file << record.dump() << '\n';
    }
    if (on_metrics) on_metrics(metric);

    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0 && step < cfg.steps) {
      write_train_state(policy, adam, step, rng,
                        cat(out_dir, "/ckpt_step_", step, ".state.bin"));
    }
  }

  if (!out_dir.empty()) {
    result.final_checkpoint = out_dir + "/checkpoint.bin";
    result.final_train_state = out_dir + "/train_state.bin";
    policy.save(result.final_checkpoint);
    write_train_state(policy, adam, cfg.steps, rng, result.final_train_state);
  }
  return result;
}

}  // namespace dsvla
