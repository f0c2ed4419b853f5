#pragma once

// Test-only straight-line reimplementation of the composed forward pass:
// one monolithic computation with no latent caching, no policy plumbing.
// Used as the concatenation oracle for the fast/slow split: the production
// path (system2_forward -> LatentCondition -> system1_forward) must
// reproduce these numbers exactly.

#include <cmath>

#include "dsvla/backbone.hpp"
#include "dsvla/diffusion.hpp"
#include "dsvla/encoders.hpp"
#include "dsvla/env.hpp"
#include "dsvla/policy.hpp"

namespace dsvla::testing {

inline Tensor sl_modality_rows(const PolicyConfig& cfg, const ParamStore& params,
                               const Observation& obs, const ModalitySet& set) {
  std::vector<Tensor> parts;
  if (set.image) parts.push_back(encode_image(obs.image, cfg.encoder, params));
  if (set.pointcloud)
    parts.push_back(tokenize_pointcloud(obs.pointcloud, cfg.encoder, params));
  if (set.state) parts.push_back(encode_state(obs.state, cfg.encoder, params));
  if (parts.empty()) return Tensor{};
  return parts.size() == 1 ? parts[0] : ops::concat_rows(parts);
}

struct StraightlineOut {
  Tensor eps;            // [H, action_dim] read from the monolithic pass
  Tensor prompt_final;   // prompt rows after every block (slow-pass tail)
  Tensor split_hiddens;  // prompt rows at the split layer
};

// Monolithic route: prompt rows through blocks 1..split, concatenate fast
// rows (positions continuing after the prompt), suffix blocks over the
// whole matrix, action read-out on the last H rows.
inline StraightlineOut straightline_forward(const PolicyConfig& cfg,
                                            const ParamStore& params,
                                            const Observation& obs, int tau,
                                            const Tensor& noised_chunk) {
  std::vector<Tensor> prompt_parts;
  prompt_parts.push_back(embed_tokens(obs.instruction, cfg.backbone, params));
  Tensor s2_modal = sl_modality_rows(cfg, params, obs, cfg.s2_inputs);
  if (s2_modal.data) prompt_parts.push_back(s2_modal);
  prompt_parts.push_back(embed_tokens({cfg.vocab.boa()}, cfg.backbone, params));
  Tensor prompt = add_positions(ops::concat_rows(prompt_parts), 0,
                                cfg.backbone, params);
  const int prompt_len = prompt.shape[0];

  const int split = cfg.backbone.split_block();
  Tensor split_out = run_blocks(prompt, 1, split, cfg.backbone, params);

  std::vector<Tensor> fast_parts;
  Tensor s1_modal = sl_modality_rows(cfg, params, obs, cfg.s1_inputs);
  if (s1_modal.data) fast_parts.push_back(s1_modal);
  fast_parts.push_back(encode_timestep(tau, cfg.encoder, params));
  fast_parts.push_back(encode_noised_chunk(noised_chunk, cfg.encoder, params));
  Tensor fast = add_positions(ops::concat_rows(fast_parts), prompt_len,
                              cfg.backbone, params);

  Tensor joint = ops::concat_rows({split_out, fast});
  Tensor out = run_blocks(joint, split + 1, cfg.backbone.n_blocks,
                          cfg.backbone, params);

  StraightlineOut result;
  const int total = out.shape[0];
  Tensor a_hat = action_readout(
      ops::slice_rows(out, total - noised_chunk.shape[0], total), cfg.backbone,
      params);
  const DiffusionSchedule sched =
      build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
  const double signal = std::sqrt(sched.betabar_at(tau));
  const double noise = std::sqrt(sched.one_minus_betabar_at(tau));
  result.eps = ops::scale(ops::sub(noised_chunk, ops::scale(a_hat, signal)),
                          1.0 / noise);
  result.prompt_final = ops::slice_rows(out, 0, prompt_len);
  result.split_hiddens = split_out;
  return result;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.at(static_cast<int>(i)) - b.at(static_cast<int>(i))));
  return m;
}

}  // namespace dsvla::testing
