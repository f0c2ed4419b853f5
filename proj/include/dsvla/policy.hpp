#pragma once

// The complete policy: one parameter store wiring the observation encoders
// into the split transformer.
//
// Slow pass (system2_forward): [instruction | s2 modality tokens | BOA |
// teacher-forced action tokens] through all blocks; autoregressive logits
// from the final head, and the prompt rows of the split-layer hidden states
// as the latent condition.
//
// Fast pass (system1_forward): [latent rows || s1 modality tokens |
// timestep | noised-action tokens] through the final k_shared blocks only;
// the noise estimate is read from the action-token outputs. Fast-token
// positions continue after the prefix length, the prefix keeps its original
// positions. With a fresh latent this is numerically the tail of the
// monolithic concatenated pass.

#include <cstdint>
#include <string>
#include <vector>

#include "dsvla/ar_head.hpp"
#include "dsvla/backbone.hpp"
#include "dsvla/diffusion.hpp"
#include "dsvla/encoders.hpp"
#include "dsvla/env.hpp"
#include "dsvla/params.hpp"

namespace dsvla {

struct ModalitySet {
  bool image = false;
  bool pointcloud = false;
  bool state = false;
};

struct PolicyConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
  ActionVocab vocab;
  int horizon = 4;           // H
  int diffusion_steps = 100;  // T
  double beta_min = 1e-4;
  double beta_max = 0.02;
  ModalitySet s2_inputs{true, false, false};
  ModalitySet s1_inputs{true, true, true};

  int action_dim() const { return encoder.action_dim; }
  // Mirrors shared dimensions into the sub-configs and validates them.
  void finalize();
};

struct LatentCondition {
  Tensor hiddens;  // [prompt_len, d_model] split-layer states
  int age = 0;     // fast-system inferences since refresh
  long source_step = 0;
  std::uint64_t param_version = 0;

  int len() const { return hiddens.data ? hiddens.shape[0] : 0; }
};

class Policy {
 public:
  Policy(PolicyConfig cfg, std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct System2Result {
    Tensor ar_logits;      // [S2, vocab]
    Tensor split_hiddens;  // [prompt_len, d_model]
    int prompt_len = 0;
    // Row i of these logits predicts teacher target i (shift by one).
    std::vector<int> target_logit_rows;
  };

  System2Result system2_forward(const Observation& obs,
                                const std::vector<int>* teacher_ids = nullptr) const;

  // Wraps split hiddens into a latent condition; when detached the cached
  // prefix is constant for any later backward pass.
  LatentCondition make_latent(const System2Result& s2, long source_step,
                              bool detached) const;

  // eps_hat [H, action_dim] for the noised chunk under the latent and the
  // current fast observation. The linear read-out on the action-token
  // outputs predicts the denoised actions; the returned noise estimate is
  // the exact closed-form complement
  //   eps_hat = (noised - sqrt(betabar_tau) * a_hat) / sqrt(1 - betabar_tau),
  // so the fast loss still regresses the injected noise while the learned
  // quantity stays O(1) across the whole noise schedule.
  Tensor system1_forward(const LatentCondition& latent, const Observation& obs,
                         int tau, const Tensor& noised_chunk) const;

  const DiffusionSchedule& schedule() const { return schedule_; }

  DenoiserFn denoiser(const LatentCondition& latent, const Observation& obs) const;

  // Greedy AR decode of n_tokens action tokens from the prompt.
  std::vector<int> greedy_decode(const Observation& obs, int n_tokens) const;

  void save(const std::string& path) const { params_.save(path); }
  void load(const std::string& path);

 private:
  Tensor fast_tokens(const Observation& obs, int tau,
                     const Tensor& noised_chunk, int position_offset) const;
  Tensor modality_tokens(const Observation& obs, const ModalitySet& set,
                         bool include_state) const;

  PolicyConfig cfg_;
  ParamStore params_;
  DiffusionSchedule schedule_;
};

}  // namespace dsvla
