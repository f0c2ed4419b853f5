#pragma once

// Forward noising, the denoising (fast-system) loss, and ancestral chunk
// sampling.
//
// Notation note, to prevent drift: `betabar` stores the cumulative signal
// coefficient of the forward process (the product of per-step (1 - beta));
// the closed form is a_tau = sqrt(betabar) * a + sqrt(1 - betabar) * eta.
// The per-step DDPM variances are kept separately as `beta_step` for the
// sampler's posterior.

#include <functional>
#include <vector>

#include "dsvla/rng.hpp"
#include "dsvla/tensor.hpp"

namespace dsvla {

struct ActionChunk {
  int horizon = 0;
  int action_dim = 0;
  std::vector<double> values;  // row-major [horizon, action_dim]

  static ActionChunk zeros(int horizon, int action_dim);
  double at(int h, int d) const { return values[static_cast<std::size_t>(h) * action_dim + d]; }
  double& at(int h, int d) { return values[static_cast<std::size_t>(h) * action_dim + d]; }
  Tensor tensor() const;
  // All entries finite and within [-1, 1] (+tolerance for sampler overshoot
  // before clamping).
  void validate(double margin = 0.0) const;
};

struct DiffusionSchedule {
  int total_steps = 0;                    // T
  std::vector<double> beta_step;          // per-step variances, 1-indexed via (tau-1)
  std::vector<double> betabar;            // cumulative signal coefficients
  std::vector<double> one_minus_betabar;  // exact complement

  double beta_at(int tau) const;
  double betabar_at(int tau) const;
  double one_minus_betabar_at(int tau) const;
  void check_tau(int tau) const;
};

// Linear beta schedule from beta_min to beta_max over T steps, with the
// cumulative products computed by direct accumulation.
DiffusionSchedule build_schedule(int total_steps, double beta_min = 1e-4,
                                 double beta_max = 0.02);

// a_tau = sqrt(betabar_tau) * a + sqrt(1 - betabar_tau) * eta, no clamping.
Tensor forward_noise(const Tensor& chunk, int tau, const Tensor& eta,
                     const DiffusionSchedule& sched);

// Predicts the injected noise for a noised chunk at timestep tau; the
// conditioning context is bound into the closure.
using DenoiserFn = std::function<Tensor(const Tensor& noised_chunk, int tau)>;

struct FastLossSample {
  Tensor target_chunk;  // [H, action_dim], normalized
  DenoiserFn denoise;
};

// Per sample: tau ~ U{1..T}, eta ~ N(0, I), loss = |eta - eps_hat|^2 summed
// over chunk coordinates; averaged over the batch. Differentiable through
// the denoiser only (targets and noise are data).
Tensor fast_loss(const std::vector<FastLossSample>& batch,
                 const DiffusionSchedule& sched, Rng& rng);

struct SamplerOptions {
  int steps = 0;  // 0 means all T steps
  // Test hook: starting point instead of the N(0, I) draw.
  const Tensor* init = nullptr;
};

// Ancestral sampling: start from N(0, I), at each step predict eps, form the
// posterior mean, add posterior noise except at the final step; the result
// is clamped to [-1, 1]. With steps < T the schedule is strided uniformly
// and the posterior generalizes to the wider jumps.
ActionChunk sample_chunk(const DenoiserFn& denoise, int horizon,
                         int action_dim, const DiffusionSchedule& sched,
                         Rng& rng, const SamplerOptions& options = {});

}  // namespace dsvla
