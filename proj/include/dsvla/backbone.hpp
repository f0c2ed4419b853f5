#pragma once

// Decoder-only transformer backbone with a designated split point: the full
// stack serves the slow reasoning pass, the final k_shared blocks double as
// the fast execution module. Pre-LN blocks, learned positions, causal
// attention with an optional cached key/value prefix.

#include <string>
#include <vector>

#include "dsvla/params.hpp"
#include "dsvla/tensor.hpp"

namespace dsvla {

struct BackboneConfig {
  int n_blocks = 6;
  int k_shared = 2;  // suffix blocks repurposed as the fast system
  int d_model = 64;
  int n_heads = 4;
  int vocab_size = 300;
  int max_seq_len = 160;

  // The latent is captured at the output of this block (1-indexed).
  int split_block() const { return n_blocks - k_shared; }
  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

// Cached attention inputs for a prefix of the sequence: keys/values already
// projected by one specific layer's parameters.
struct AttentionPrefix {
  int layer = 0;
  Tensor k;  // [P, d_model]
  Tensor v;  // [P, d_model]
  int len() const { return k.data ? k.shape[0] : 0; }
};

void register_backbone_params(ParamStore& params, const BackboneConfig& cfg,
                              Rng& rng);
// Parameters the fast-system path touches: suffix blocks, its output norm
// and action head, and the position table.
std::vector<std::string> backbone_fast_param_names(const BackboneConfig& cfg,
                                                   int action_dim);

// Projects prefix rows (attention-input space) into cached K/V with the
// given layer's parameters.
AttentionPrefix make_attention_prefix(const Tensor& prefix_rows, int layer,
                                      const BackboneConfig& cfg,
                                      const ParamStore& params);

// Multi-head causal self-attention for layer `layer`: row i of x attends to
// every prefix row and to x rows <= i. Output has the shape of x.
Tensor causal_self_attention(const Tensor& x, int layer,
                             const BackboneConfig& cfg, const ParamStore& params,
                             const AttentionPrefix* prefix = nullptr);

// Pre-LN block: x + attn(ln1(x)), then + mlp(ln2(.)).
Tensor block_forward(const Tensor& x, int layer, const BackboneConfig& cfg,
                     const ParamStore& params,
                     const AttentionPrefix* prefix = nullptr);

// Runs blocks [first, last] (1-indexed, inclusive).
Tensor run_blocks(const Tensor& x, int first, int last,
                  const BackboneConfig& cfg, const ParamStore& params);

Tensor embed_tokens(const std::vector<int>& ids, const BackboneConfig& cfg,
                    const ParamStore& params);
// Adds learned positions [offset, offset + rows) to every row.
Tensor add_positions(const Tensor& x, int offset, const BackboneConfig& cfg,
                     const ParamStore& params);
// Final norm + language-model head.
Tensor final_logits(const Tensor& h, const BackboneConfig& cfg,
                    const ParamStore& params);
// Fast-system output norm + linear action read-out.
Tensor action_readout(const Tensor& h, const BackboneConfig& cfg,
                      const ParamStore& params);

}  // namespace dsvla
