#include "dsvla/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "dsvla/error.hpp"

namespace dsvla {

ActionChunk ActionChunk::zeros(int horizon, int action_dim) {
  if (horizon < 1 || action_dim < 1)
    throw ShapeError(cat("chunk: bad dims ", horizon, "x", action_dim));
  ActionChunk c;
  c.horizon = horizon;
  c.action_dim = action_dim;
  c.values.assign(static_cast<std::size_t>(horizon) * action_dim, 0.0);
  return c;
}

Tensor ActionChunk::tensor() const {
  return Tensor::from(values, {horizon, action_dim});
}

void ActionChunk::validate(double margin) const {
  if (values.size() != static_cast<std::size_t>(horizon) * action_dim)
    throw ShapeError("chunk: value count does not match dims");
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("chunk: non-finite entry");
    if (std::abs(v) > 1.0 + margin)
      throw NumericError(cat("chunk: entry ", v, " outside [-1, 1]"));
  }
}

void DiffusionSchedule::check_tau(int tau) const {
  if (tau < 1 || tau > total_steps)
    throw NumericError(cat("diffusion: tau ", tau, " outside [1, ",
                           total_steps, "]"));
}

double DiffusionSchedule::beta_at(int tau) const {
  check_tau(tau);
  return beta_step[static_cast<std::size_t>(tau - 1)];
}

double DiffusionSchedule::betabar_at(int tau) const {
  check_tau(tau);
  return betabar[static_cast<std::size_t>(tau - 1)];
}

double DiffusionSchedule::one_minus_betabar_at(int tau) const {
  check_tau(tau);
  return one_minus_betabar[static_cast<std::size_t>(tau - 1)];
}

DiffusionSchedule build_schedule(int total_steps, double beta_min,
                                 double beta_max) {
  if (total_steps < 1)
    throw ConfigError(cat("schedule: T must be >= 1, got ", total_steps));
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw ConfigError(cat("schedule: need 0 < beta_min <= beta_max < 1, got ",
                          beta_min, ", ", beta_max));
  DiffusionSchedule sched;
  sched.total_steps = total_steps;
  sched.beta_step.resize(static_cast<std::size_t>(total_steps));
  sched.betabar.resize(static_cast<std::size_t>(total_steps));
  sched.one_minus_betabar.resize(static_cast<std::size_t>(total_steps));
  double running = 1.0;
  for (int t = 0; t < total_steps; ++t) {
    const double frac =
        total_steps == 1 ? 0.0 : static_cast<double>(t) / (total_steps - 1);
    const double beta = beta_min + (beta_max - beta_min) * frac;
    sched.beta_step[static_cast<std::size_t>(t)] = beta;
    running *= 1.0 - beta;
    sched.betabar[static_cast<std::size_t>(t)] = running;
    sched.one_minus_betabar[static_cast<std::size_t>(t)] = 1.0 - running;
    if (t > 0 && !(sched.betabar[t] < sched.betabar[t - 1]))
      throw NumericError("schedule: cumulative signal not strictly decreasing");
  }
  return sched;
}

Tensor forward_noise(const Tensor& chunk, int tau, const Tensor& eta,
                     const DiffusionSchedule& sched) {
  if (chunk.shape != eta.shape)
    throw ShapeError("forward_noise: chunk and noise shapes differ");
  const double sig = std::sqrt(sched.betabar_at(tau));
  const double noi = std::sqrt(sched.one_minus_betabar_at(tau));
  return ops::add(ops::scale(chunk, sig), ops::scale(eta, noi));
}

Tensor fast_loss(const std::vector<FastLossSample>& batch,
                 const DiffusionSchedule& sched, Rng& rng) {
  if (batch.empty()) throw ShapeError("fast_loss: empty batch");
  Tensor total;
  for (const auto& sample : batch) {
    if (sample.target_chunk.rank() != 2)
      throw ShapeError("fast_loss: target chunk must be [H, action_dim]");
    const int tau = 1 + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(sched.total_steps)));
    Tensor eta = Tensor::randn(sample.target_chunk.shape, rng);
    Tensor noised = forward_noise(sample.target_chunk.detach(), tau, eta, sched);
    Tensor eps_hat = sample.denoise(noised.detach(), tau);
    if (eps_hat.shape != sample.target_chunk.shape)
      throw ShapeError("fast_loss: denoiser output shape mismatch");
    Tensor residual = ops::sub(eta, eps_hat);
    Tensor sq = ops::sum_all(ops::mul(residual, residual));
    total = total.data ? ops::add(total, sq) : sq;
  }
  return ops::scale(total, 1.0 / static_cast<double>(batch.size()));
}

ActionChunk sample_chunk(const DenoiserFn& denoise, int horizon,
                         int action_dim, const DiffusionSchedule& sched,
                         Rng& rng, const SamplerOptions& options) {
  const int T = sched.total_steps;
  int steps = options.steps == 0 ? T : options.steps;
  if (steps < 1 || steps > T)
    throw ConfigError(cat("sample_chunk: steps ", steps, " outside [1, ", T, "]"));

  // Strictly decreasing tau ladder from T toward 1, uniform stride.
  std::vector<int> taus;
  taus.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const int tau = static_cast<int>(std::lround(T - frac * (T - 1)));
    if (taus.empty() || tau < taus.back()) taus.push_back(tau);
  }

  const std::size_t n = static_cast<std::size_t>(horizon) * action_dim;
  std::vector<double> x(n);
  if (options.init != nullptr) {
    if (options.init->numel() != n)
      throw ShapeError("sample_chunk: init size mismatch");
    x = *options.init->data;
  } else {
    for (auto& v : x) v = rng.normal();
  }

  for (std::size_t idx = 0; idx < taus.size(); ++idx) {
    const int t = taus[idx];
    const int next = idx + 1 < taus.size() ? taus[idx + 1] : 0;
    Tensor eps = denoise(Tensor::from(x, {horizon, action_dim}), t);
    if (eps.numel() != n) throw ShapeError("sample_chunk: denoiser shape mismatch");
    check_finite(eps, "sample_chunk: predicted noise");
    const double ab_t = sched.betabar_at(t);
    const double sqrt_ab_t = std::sqrt(ab_t);
    const double sqrt_om_t = std::sqrt(1.0 - ab_t);
    if (next == 0) {
      // Final step: the posterior at tau -> 0 degenerates to the denoised
      // estimate; no noise is added.
      for (std::size_t i = 0; i < n; ++i)
        x[i] = (x[i] - sqrt_om_t * eps.at(static_cast<int>(i))) / sqrt_ab_t;
    } else {
      const double ab_s = sched.betabar_at(next);
      const double alpha_ts = ab_t / ab_s;
      const double c_x = std::sqrt(alpha_ts) * (1.0 - ab_s) / (1.0 - ab_t);
      const double c_x0 = std::sqrt(ab_s) * (1.0 - alpha_ts) / (1.0 - ab_t);
      const double post_var = (1.0 - ab_s) * (1.0 - alpha_ts) / (1.0 - ab_t);
      const double sigma = std::sqrt(std::max(post_var, 0.0));
      for (std::size_t i = 0; i < n; ++i) {
        const double e = eps.at(static_cast<int>(i));
        const double x0_hat = (x[i] - sqrt_om_t * e) / sqrt_ab_t;
        x[i] = c_x * x[i] + c_x0 * x0_hat + sigma * rng.normal();
      }
    }
  }

  ActionChunk out;
  out.horizon = horizon;
  out.action_dim = action_dim;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]))
      throw NumericError("sample_chunk: non-finite sample (untrained or bad parameters?)");
    out.values[i] = std::clamp(x[i], -1.0, 1.0);
  }
  return out;
}

}  // namespace dsvla
