#include "dsvla/backbone.hpp"

#include <cmath>

#include "dsvla/error.hpp"

namespace dsvla {

void BackboneConfig::validate() const {
  if (n_blocks < 2) throw ConfigError(cat("backbone: n_blocks must be >= 2, got ", n_blocks));
  if (k_shared < 1 || k_shared >= n_blocks)
    throw ConfigError(cat("backbone: need 1 <= k_shared < n_blocks, got k=",
                          k_shared, " n=", n_blocks));
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError(cat("backbone: d_model ", d_model,
                          " not divisible by heads ", n_heads));
  if (vocab_size < 2 || max_seq_len < 2)
    throw ConfigError("backbone: vocab/sequence sizes too small");
}

namespace {

std::string bp(int layer, const char* leaf) {
  return cat("blocks.", layer, ".", leaf);
}

}  // namespace

void register_backbone_params(ParamStore& params, const BackboneConfig& cfg,
                              Rng& rng) {
  cfg.validate();
  const double w = 0.02;
  const int d = cfg.d_model;
  params.add_randn("embed.tok", {cfg.vocab_size, d}, rng, w);
  params.add_randn("embed.pos", {cfg.max_seq_len, d}, rng, w);
  for (int i = 1; i <= cfg.n_blocks; ++i) {
    params.add_full(bp(i, "ln1.g"), {d}, 1.0);
    params.add_zeros(bp(i, "ln1.b"), {d});
    for (const char* proj : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      params.add_randn(bp(i, proj), {d, d}, rng, w);
    for (const char* bias : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      params.add_zeros(bp(i, bias), {d});
    params.add_full(bp(i, "ln2.g"), {d}, 1.0);
    params.add_zeros(bp(i, "ln2.b"), {d});
    params.add_randn(bp(i, "mlp.w1"), {d, 4 * d}, rng, w);
    params.add_zeros(bp(i, "mlp.b1"), {4 * d});
    params.add_randn(bp(i, "mlp.w2"), {4 * d, d}, rng, w);
    params.add_zeros(bp(i, "mlp.b2"), {d});
  }
  params.add_full("ln_f.g", {d}, 1.0);
  params.add_zeros("ln_f.b", {d});
  params.add_randn("lm_head.w", {d, cfg.vocab_size}, rng, w);
  params.add_zeros("lm_head.b", {cfg.vocab_size});
  params.add_full("s1_ln.g", {d}, 1.0);
  params.add_zeros("s1_ln.b", {d});
}

std::vector<std::string> backbone_fast_param_names(const BackboneConfig& cfg,
                                                   int) {
  std::vector<std::string> names{"embed.pos", "s1_ln.g", "s1_ln.b",
                                 "act_head.w", "act_head.b"};
  for (int i = cfg.split_block() + 1; i <= cfg.n_blocks; ++i) {
    for (const char* leaf :
         {"ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
          "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln2.g", "ln2.b",
          "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"})
      names.push_back(bp(i, leaf));
  }
  return names;
}

AttentionPrefix make_attention_prefix(const Tensor& prefix_rows, int layer,
                                      const BackboneConfig& cfg,
                                      const ParamStore& params) {
  if (prefix_rows.rank() != 2 || prefix_rows.shape[1] != cfg.d_model)
    throw ShapeError("attention prefix: rows must be [P, d_model]");
  AttentionPrefix prefix;
  prefix.layer = layer;
  prefix.k = ops::add_rowvec(ops::matmul(prefix_rows, params.get(bp(layer, "attn.wk"))),
                             params.get(bp(layer, "attn.bk")));
  prefix.v = ops::add_rowvec(ops::matmul(prefix_rows, params.get(bp(layer, "attn.wv"))),
                             params.get(bp(layer, "attn.bv")));
  return prefix;
}

Tensor causal_self_attention(const Tensor& x, int layer,
                             const BackboneConfig& cfg, const ParamStore& params,
                             const AttentionPrefix* prefix) {
  if (x.rank() != 2 || x.shape[1] != cfg.d_model)
    throw ShapeError(cat("attention: input must be [S, ", cfg.d_model, "]"));
  if (prefix != nullptr && prefix->layer != layer)
    throw ShapeError(cat("attention: prefix built for layer ", prefix->layer,
                         ", used in layer ", layer));
  const int s = x.shape[0];
  const int p = prefix != nullptr ? prefix->len() : 0;
  const int dh = cfg.head_dim();

  Tensor q = ops::add_rowvec(ops::matmul(x, params.get(bp(layer, "attn.wq"))),
                             params.get(bp(layer, "attn.bq")));
  Tensor k = ops::add_rowvec(ops::matmul(x, params.get(bp(layer, "attn.wk"))),
                             params.get(bp(layer, "attn.bk")));
  Tensor v = ops::add_rowvec(ops::matmul(x, params.get(bp(layer, "attn.wv"))),
                             params.get(bp(layer, "attn.bv")));
  if (p > 0) {
    k = ops::concat_rows({prefix->k, k});
    v = ops::concat_rows({prefix->v, v});
  }

  // Row i may attend to prefix columns and to x columns <= i.
  Tensor mask = Tensor::zeros({s, p + s});
  for (int i = 0; i < s; ++i)
    for (int j = p + i + 1; j < p + s; ++j) mask.at(i, j) = -1e30;

  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < cfg.n_heads; ++h) {
    Tensor qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = ops::slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = ops::slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = ops::add(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), mask);
    Tensor probs = ops::softmax_lastdim(scores);
    heads.push_back(ops::matmul(probs, vh));
  }
  Tensor ctx = cfg.n_heads == 1 ? heads[0] : ops::concat_lastdim(heads);
  return ops::add_rowvec(ops::matmul(ctx, params.get(bp(layer, "attn.wo"))),
                         params.get(bp(layer, "attn.bo")));
}

Tensor block_forward(const Tensor& x, int layer, const BackboneConfig& cfg,
                     const ParamStore& params, const AttentionPrefix* prefix) {
  Tensor normed = ops::layer_norm(x, params.get(bp(layer, "ln1.g")),
                                  params.get(bp(layer, "ln1.b")));
  Tensor attended = ops::add(x, causal_self_attention(normed, layer, cfg,
                                                      params, prefix));
  Tensor normed2 = ops::layer_norm(attended, params.get(bp(layer, "ln2.g")),
                                   params.get(bp(layer, "ln2.b")));
  Tensor hidden = ops::gelu(ops::add_rowvec(
      ops::matmul(normed2, params.get(bp(layer, "mlp.w1"))),
      params.get(bp(layer, "mlp.b1"))));
  Tensor mlp_out = ops::add_rowvec(ops::matmul(hidden, params.get(bp(layer, "mlp.w2"))),
                                   params.get(bp(layer, "mlp.b2")));
  return ops::add(attended, mlp_out);
}

Tensor run_blocks(const Tensor& x, int first, int last,
                  const BackboneConfig& cfg, const ParamStore& params) {
  if (first < 1 || last > cfg.n_blocks || first > last)
    throw ShapeError(cat("run_blocks: bad range [", first, ", ", last, "]"));
  Tensor h = x;
  for (int i = first; i <= last; ++i) h = block_forward(h, i, cfg, params);
  return h;
}

Tensor embed_tokens(const std::vector<int>& ids, const BackboneConfig& cfg,
                    const ParamStore& params) {
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw ShapeError(cat("embed_tokens: id ", id, " outside vocab ",
                           cfg.vocab_size));
  return ops::embedding_lookup(params.get("embed.tok"), ids);
}

Tensor add_positions(const Tensor& x, int offset, const BackboneConfig& cfg,
                     const ParamStore& params) {
  if (offset < 0 || offset + x.shape[0] > cfg.max_seq_len)
    throw ShapeError(cat("sequence overflow: positions [", offset, ", ",
                         offset + x.shape[0], ") exceed max ", cfg.max_seq_len));
  return ops::add(x, ops::slice_rows(params.get("embed.pos"), offset,
                                     offset + x.shape[0]));
}

Tensor final_logits(const Tensor& h, const BackboneConfig& cfg,
                    const ParamStore& params) {
  Tensor normed = ops::layer_norm(h, params.get("ln_f.g"), params.get("ln_f.b"));
  return ops::add_rowvec(ops::matmul(normed, params.get("lm_head.w")),
                         params.get("lm_head.b"));
}

Tensor action_readout(const Tensor& h, const BackboneConfig& cfg,
                      const ParamStore& params) {
  Tensor normed = ops::layer_norm(h, params.get("s1_ln.g"), params.get("s1_ln.b"));
  return ops::add_rowvec(ops::matmul(normed, params.get("act_head.w")),
                         params.get("act_head.b"));
}

}  // namespace dsvla
