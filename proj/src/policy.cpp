#include "dsvla/policy.hpp"

#include <algorithm>
#include <cmath>

#include "dsvla/error.hpp"

namespace dsvla {

void PolicyConfig::finalize() {
  encoder.d_model = backbone.d_model;
  encoder.diffusion_steps = diffusion_steps;
  backbone.vocab_size = vocab.vocab_size;
  if (horizon < 1) throw ConfigError(cat("policy: horizon must be >= 1, got ", horizon));
  if (diffusion_steps < 1) throw ConfigError("policy: diffusion_steps must be >= 1");
  vocab.validate();
  backbone.validate();
  encoder.validate();
}

Policy::Policy(PolicyConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.finalize();
  schedule_ = build_schedule(cfg_.diffusion_steps, cfg_.beta_min, cfg_.beta_max);
  Rng rng(seed, /*stream=*/0x9011CE);
  register_backbone_params(params_, cfg_.backbone, rng);
  register_encoder_params(params_, cfg_.encoder, rng);
  params_.add_randn("act_head.w", {cfg_.backbone.d_model, cfg_.action_dim()}, rng, 0.02);
  params_.add_zeros("act_head.b", {cfg_.action_dim()});

  // theta_f: everything the fast path touches.
  for (const auto& name : backbone_fast_param_names(cfg_.backbone, cfg_.action_dim()))
    params_.mark_fast(name);
  params_.mark_fast("enc.time.w");
  params_.mark_fast("enc.time.b");
  params_.mark_fast("enc.act.w");
  params_.mark_fast("enc.act.b");
  params_.mark_fast("group.time");
  params_.mark_fast("group.act");
  if (cfg_.s1_inputs.image || cfg_.s1_inputs.pointcloud) {
    params_.mark_fast("vision.proj.w");
    params_.mark_fast("vision.proj.b");
  }
  if (cfg_.s1_inputs.image) {
    for (const char* n : {"img.branch_a.w", "img.branch_a.b", "img.branch_b.w",
                          "img.branch_b.b", "img.pos", "group.img"})
      params_.mark_fast(n);
  }
  if (cfg_.s1_inputs.pointcloud) {
    for (std::size_t blk = 0; blk < cfg_.encoder.pc_chain.size(); ++blk) {
      params_.mark_fast(cat("pc.block", blk + 1, ".w"));
      params_.mark_fast(cat("pc.block", blk + 1, ".b"));
    }
    params_.mark_fast("group.pc");
  }
  if (cfg_.s1_inputs.state) {
    params_.mark_fast("enc.state.w");
    params_.mark_fast("enc.state.b");
    params_.mark_fast("group.state");
  }
}

Tensor Policy::modality_tokens(const Observation& obs, const ModalitySet& set,
                               bool include_state) const {
  std::vector<Tensor> parts;
  if (set.image) parts.push_back(encode_image(obs.image, cfg_.encoder, params_));
  if (set.pointcloud)
    parts.push_back(tokenize_pointcloud(obs.pointcloud, cfg_.encoder, params_));
  if (set.state && include_state)
    parts.push_back(encode_state(obs.state, cfg_.encoder, params_));
  if (parts.empty()) return Tensor{};
  return parts.size() == 1 ? parts[0] : ops::concat_rows(parts);
}

Policy::System2Result Policy::system2_forward(
    const Observation& obs, const std::vector<int>* teacher_ids) const {
  if (obs.instruction.empty())
    throw ShapeError("system2_forward: empty instruction");
  std::vector<Tensor> parts;
  parts.push_back(embed_tokens(obs.instruction, cfg_.backbone, params_));
  Tensor modal = modality_tokens(obs, cfg_.s2_inputs, true);
  if (modal.data) parts.push_back(modal);
  parts.push_back(embed_tokens({cfg_.vocab.boa()}, cfg_.backbone, params_));
  Tensor prompt = ops::concat_rows(parts);
  const int prompt_len = prompt.shape[0];

  Tensor seq = prompt;
  int n_targets = 0;
  if (teacher_ids != nullptr && !teacher_ids->empty()) {
    n_targets = static_cast<int>(teacher_ids->size());
    seq = ops::concat_rows({prompt, embed_tokens(*teacher_ids, cfg_.backbone, params_)});
  }
  seq = add_positions(seq, 0, cfg_.backbone, params_);

  const int split = cfg_.backbone.split_block();
  Tensor split_out = run_blocks(seq, 1, split, cfg_.backbone, params_);
  Tensor final_h = run_blocks(split_out, split + 1, cfg_.backbone.n_blocks,
                              cfg_.backbone, params_);

  System2Result result;
  result.ar_logits = final_logits(final_h, cfg_.backbone, params_);
  result.split_hiddens = ops::slice_rows(split_out, 0, prompt_len);
  result.prompt_len = prompt_len;
  for (int i = 0; i < n_targets; ++i)
    result.target_logit_rows.push_back(prompt_len - 1 + i);
  return result;
}

LatentCondition Policy::make_latent(const System2Result& s2, long source_step,
                                    bool detached) const {
  LatentCondition latent;
  latent.hiddens = detached ? s2.split_hiddens.detach() : s2.split_hiddens;
  latent.age = 0;
  latent.source_step = source_step;
  latent.param_version = params_.version();
  return latent;
}

Tensor Policy::fast_tokens(const Observation& obs, int tau,
                           const Tensor& noised_chunk, int position_offset) const {
  std::vector<Tensor> parts;
  Tensor modal = modality_tokens(obs, cfg_.s1_inputs, true);
  if (modal.data) parts.push_back(modal);
  parts.push_back(encode_timestep(tau, cfg_.encoder, params_));
  parts.push_back(encode_noised_chunk(noised_chunk, cfg_.encoder, params_));
  Tensor fast = ops::concat_rows(parts);
  return add_positions(fast, position_offset, cfg_.backbone, params_);
}

Tensor Policy::system1_forward(const LatentCondition& latent,
                               const Observation& obs, int tau,
                               const Tensor& noised_chunk) const {
  if (latent.len() == 0) throw ShapeError("system1_forward: empty latent");
  if (latent.param_version != params_.version())
    throw NumericError(cat("system1_forward: latent built for parameter version ",
                           latent.param_version, ", store is at ",
                           params_.version()));
  if (noised_chunk.rank() != 2 || noised_chunk.shape[0] < 1 ||
      noised_chunk.shape[1] != cfg_.action_dim())
    throw ShapeError(cat("system1_forward: noised chunk must be [H, ",
                         cfg_.action_dim(), "]"));

  const int h = noised_chunk.shape[0];
  Tensor fast = fast_tokens(obs, tau, noised_chunk, latent.len());
  Tensor x = ops::concat_rows({latent.hiddens, fast});
  x = run_blocks(x, cfg_.backbone.split_block() + 1, cfg_.backbone.n_blocks,
                 cfg_.backbone, params_);
  const int total = x.shape[0];
  Tensor action_rows = ops::slice_rows(x, total - h, total);
  Tensor a_hat = action_readout(action_rows, cfg_.backbone, params_);
  // Closed-form complement of the denoised-action estimate.
  const double signal = std::sqrt(schedule_.betabar_at(tau));
  const double noise = std::sqrt(schedule_.one_minus_betabar_at(tau));
  return ops::scale(ops::sub(noised_chunk.detach(), ops::scale(a_hat, signal)),
                    1.0 / noise);
}

DenoiserFn Policy::denoiser(const LatentCondition& latent,
                            const Observation& obs) const {
  return [this, latent, obs](const Tensor& noised, int tau) {
    return system1_forward(latent, obs, tau, noised);
  };
}

std::vector<int> Policy::greedy_decode(const Observation& obs,
                                       int n_tokens) const {
  std::vector<int> ids;
  for (int step = 0; step < n_tokens; ++step) {
    System2Result s2 = system2_forward(obs, &ids);
    const int row = s2.prompt_len - 1 + static_cast<int>(ids.size());
    // Decode within the action-bin range.
    int best = 0;
    double best_v = s2.ar_logits.at(row, 0);
    for (int v = 1; v < cfg_.vocab.bins; ++v) {
      if (s2.ar_logits.at(row, v) > best_v) {
        best_v = s2.ar_logits.at(row, v);
        best = v;
      }
    }
    ids.push_back(best);
  }
  return ids;
}

void Policy::load(const std::string& path) {
  ParamStore fresh;
  Rng rng(0);
  register_backbone_params(fresh, cfg_.backbone, rng);
  register_encoder_params(fresh, cfg_.encoder, rng);
  fresh.add_zeros("act_head.w", {cfg_.backbone.d_model, cfg_.action_dim()});
  fresh.add_zeros("act_head.b", {cfg_.action_dim()});

  params_.load(path);
  if (params_.names().size() != fresh.names().size())
    throw ConfigError(cat("checkpoint: expected ", fresh.names().size(),
                          " parameters, found ", params_.names().size()));
  for (const auto& name : fresh.names()) {
    if (!params_.has(name))
      throw ConfigError(cat("checkpoint: missing parameter '", name, "'"));
    if (params_.get(name).shape != fresh.get(name).shape)
      throw ConfigError(cat("checkpoint: shape mismatch for '", name, "'"));
  }
}

}  // namespace dsvla
