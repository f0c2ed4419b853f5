#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dsvla/backbone.hpp"
#include "dsvla/policy.hpp"
#include "support/straightline.hpp"

using namespace dsvla;
using dsvla::testing::max_abs_diff;
using dsvla::testing::straightline_forward;

namespace {

PolicyConfig small_policy_config() {
  PolicyConfig cfg;
  cfg.backbone.n_blocks = 4;
  cfg.backbone.k_shared = 2;
  cfg.backbone.d_model = 32;
  cfg.backbone.n_heads = 4;
  cfg.backbone.max_seq_len = 96;
  cfg.encoder.image_side = 16;
  cfg.encoder.patch_side = 8;
  cfg.encoder.branch_dim = 16;
  cfg.encoder.pc_points = 32;
  cfg.encoder.pc_chain = {16, 8, 4};
  cfg.encoder.knn_k = 4;
  cfg.horizon = 2;
  cfg.diffusion_steps = 20;
  return cfg;
}

EnvConfig small_env_config() {
  EnvConfig env;
  env.image_side = 16;
  env.pc_ring_points = 16;
  return env;
}

Observation sample_obs(std::uint64_t seed) {
  ToyEnv env(small_env_config());
  Observation obs = env.reset(seed);
  return obs;
}

BackboneConfig bare_backbone() {
  BackboneConfig cfg;
  cfg.n_blocks = 3;
  cfg.k_shared = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.vocab_size = 40;
  cfg.max_seq_len = 32;
  return cfg;
}

ParamStore bare_params(const BackboneConfig& cfg, std::uint64_t seed) {
  ParamStore params;
  Rng rng(seed);
  register_backbone_params(params, cfg, rng);
  return params;
}

}  // namespace

TEST_CASE("single token with no prefix is its value projection") {
  BackboneConfig cfg = bare_backbone();
  ParamStore params = bare_params(cfg, 3);
  Rng rng(5);
  Tensor x = Tensor::randn({1, cfg.d_model}, rng);
  Tensor out = causal_self_attention(x, 1, cfg, params);
  REQUIRE(out.shape == x.shape);

  // Attention weight over a single key is 1, so out = (x Wv + bv) Wo + bo.
  Tensor v = ops::add_rowvec(ops::matmul(x, params.get("blocks.1.attn.wv")),
                             params.get("blocks.1.attn.bv"));
  Tensor expect = ops::add_rowvec(ops::matmul(v, params.get("blocks.1.attn.wo")),
                                  params.get("blocks.1.attn.bo"));
  CHECK(max_abs_diff(out, expect) < 1e-14);
}

TEST_CASE("two identical tokens produce identical attention rows") {
  BackboneConfig cfg = bare_backbone();
  ParamStore params = bare_params(cfg, 7);
  Rng rng(9);
  Tensor row = Tensor::randn({1, cfg.d_model}, rng);
  Tensor x = ops::concat_rows({row, row});
  Tensor out = causal_self_attention(x, 2, cfg, params);
  for (int c = 0; c < cfg.d_model; ++c)
    CHECK(out.at(0, c) == doctest::Approx(out.at(1, c)).epsilon(1e-14));
}

TEST_CASE("prefix attention equals attention over the concatenation") {
  BackboneConfig cfg = bare_backbone();
  ParamStore params = bare_params(cfg, 11);
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const int p = 1 + static_cast<int>(rng.uniform_int(6));
    const int s = 1 + static_cast<int>(rng.uniform_int(6));
    Tensor prefix_rows = Tensor::randn({p, cfg.d_model}, rng);
    Tensor x = Tensor::randn({s, cfg.d_model}, rng);
    for (int layer = 1; layer <= cfg.n_blocks; ++layer) {
      AttentionPrefix prefix = make_attention_prefix(prefix_rows, layer, cfg, params);
      Tensor with_prefix = causal_self_attention(x, layer, cfg, params, &prefix);
      Tensor joint = causal_self_attention(ops::concat_rows({prefix_rows, x}),
                                           layer, cfg, params);
      Tensor suffix = ops::slice_rows(joint, p, p + s);
      REQUIRE(max_abs_diff(with_prefix, suffix) < 1e-12);
    }
  }
}

TEST_CASE("prefix built for another layer is rejected") {
  BackboneConfig cfg = bare_backbone();
  ParamStore params = bare_params(cfg, 17);
  Rng rng(19);
  Tensor prefix_rows = Tensor::randn({2, cfg.d_model}, rng);
  Tensor x = Tensor::randn({3, cfg.d_model}, rng);
  AttentionPrefix prefix = make_attention_prefix(prefix_rows, 1, cfg, params);
  CHECK_THROWS_AS(causal_self_attention(x, 2, cfg, params, &prefix), ShapeError);
}

TEST_CASE("config validation") {
  BackboneConfig bad = bare_backbone();
  bad.d_model = 30;  // not divisible by 4 heads
  bad.n_heads = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bare_backbone();
  bad.k_shared = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("system2 logits shape and split boundary") {
  PolicyConfig cfg = small_policy_config();
  cfg.backbone.k_shared = cfg.backbone.n_blocks - 1;  // split after block 1
  Policy policy(cfg, 23);
  Observation obs = sample_obs(1);
  auto s2 = policy.system2_forward(obs);
  const int s2_len = s2.ar_logits.shape[0];
  CHECK(s2.ar_logits.shape == std::vector<int>{s2_len, cfg.vocab.vocab_size});
  CHECK(s2.prompt_len == s2_len);
  CHECK(s2.split_hiddens.shape == std::vector<int>{s2.prompt_len, 32});

  // With k = n_blocks - 1 the latent is exactly the output of block 1.
  std::vector<Tensor> parts;
  parts.push_back(embed_tokens(obs.instruction, policy.config().backbone, policy.params()));
  parts.push_back(encode_image(obs.image, policy.config().encoder, policy.params()));
  parts.push_back(embed_tokens({policy.config().vocab.boa()},
                               policy.config().backbone, policy.params()));
  Tensor seq = add_positions(ops::concat_rows(parts), 0,
                             policy.config().backbone, policy.params());
  Tensor block1 = run_blocks(seq, 1, 1, policy.config().backbone, policy.params());
  CHECK(max_abs_diff(s2.split_hiddens, block1) == 0.0);
}

TEST_CASE("teacher forcing rows line up") {
  PolicyConfig cfg = small_policy_config();
  Policy policy(cfg, 29);
  Observation obs = sample_obs(2);
  std::vector<int> targets{3, 200, 17, 255};
  auto s2 = policy.system2_forward(obs, &targets);
  REQUIRE(s2.target_logit_rows.size() == targets.size());
  CHECK(s2.target_logit_rows.front() == s2.prompt_len - 1);
  CHECK(s2.ar_logits.shape[0] == s2.prompt_len + static_cast<int>(targets.size()));
}

TEST_CASE("suffix equivalence: fast pass equals the monolithic tail") {
  PolicyConfig cfg = small_policy_config();
  Policy policy(cfg, 31);
  Observation obs = sample_obs(3);
  Rng rng(37);
  Tensor noised = Tensor::randn({cfg.horizon, cfg.action_dim()}, rng);
  const int tau = 7;

  auto s2 = policy.system2_forward(obs);
  LatentCondition latent = policy.make_latent(s2, 0, /*detached=*/false);
  Tensor eps = policy.system1_forward(latent, obs, tau, noised);

  auto mono = straightline_forward(policy.config(), policy.params(), obs, tau, noised);
  REQUIRE(max_abs_diff(eps, mono.eps) < 1e-12);
  REQUIRE(max_abs_diff(s2.split_hiddens, mono.split_hiddens) < 1e-12);

  // Fast-within-slow: the prompt rows of the monolithic suffix run evolve
  // exactly as the slow pass's own tail (causality blinds them to the
  // appended fast rows).
  Tensor slow_tail = run_blocks(mono.split_hiddens,
                                cfg.backbone.split_block() + 1,
                                cfg.backbone.n_blocks, cfg.backbone,
                                policy.params());
  REQUIRE(max_abs_diff(mono.prompt_final, slow_tail) < 1e-12);
}

TEST_CASE("system1 determinism and version checking") {
  PolicyConfig cfg = small_policy_config();
  Policy policy(cfg, 41);
  Observation obs = sample_obs(4);
  Rng rng(43);
  Tensor noised = Tensor::randn({cfg.horizon, cfg.action_dim()}, rng);
  auto s2 = policy.system2_forward(obs);
  LatentCondition latent = policy.make_latent(s2, 0, true);
  Tensor e1 = policy.system1_forward(latent, obs, 3, noised);
  Tensor e2 = policy.system1_forward(latent, obs, 3, noised);
  CHECK(max_abs_diff(e1, e2) == 0.0);
  CHECK(e1.shape == std::vector<int>{cfg.horizon, cfg.action_dim()});

  policy.params().bump_version();
  CHECK_THROWS_AS(policy.system1_forward(latent, obs, 3, noised), NumericError);
}

TEST_CASE("H = 1 produces a single-row noise estimate") {
  PolicyConfig cfg = small_policy_config();
  cfg.horizon = 1;
  Policy policy(cfg, 47);
  Observation obs = sample_obs(5);
  Tensor noised = Tensor::zeros({1, cfg.action_dim()});
  auto s2 = policy.system2_forward(obs);
  LatentCondition latent = policy.make_latent(s2, 0, true);
  Tensor eps = policy.system1_forward(latent, obs, 1, noised);
  CHECK(eps.shape == std::vector<int>{1, 3});
}

TEST_CASE("changing the instruction changes the latent and the noise estimate") {
  PolicyConfig cfg = small_policy_config();
  Policy policy(cfg, 53);
  Observation obs = sample_obs(6);
  Rng rng(59);
  Tensor noised = Tensor::randn({cfg.horizon, cfg.action_dim()}, rng);

  auto s2a = policy.system2_forward(obs);
  Observation alt = obs;
  const auto templates = instruction_templates(cfg.vocab);
  alt.instruction = templates[(alt.instruction == templates[0]) ? 1 : 0];
  auto s2b = policy.system2_forward(alt);

  CHECK(max_abs_diff(s2a.split_hiddens, s2b.split_hiddens) > 1e-9);
  Tensor ea = policy.system1_forward(policy.make_latent(s2a, 0, true), obs, 2, noised);
  Tensor eb = policy.system1_forward(policy.make_latent(s2b, 0, true), alt, 2, noised);
  CHECK(max_abs_diff(ea, eb) > 1e-12);
}

TEST_CASE("gradient reach: fresh latent opens the pre-split blocks, stale does not") {
  PolicyConfig cfg = small_policy_config();
  Policy policy(cfg, 61);
  Observation obs = sample_obs(7);
  Rng rng(67);
  Tensor noised = Tensor::randn({cfg.horizon, cfg.action_dim()}, rng);

  auto grad_norm_of = [&](const std::string& name) {
    double s = 0;
    for (double g : *policy.params().get(name).grad) s += g * g;
    return std::sqrt(s);
  };

  auto run_backward = [&](bool detached) {
    policy.params().zero_grads();
    Tape tape;
    TapeScope scope(tape);
    auto s2 = policy.system2_forward(obs);
    LatentCondition latent = policy.make_latent(s2, 0, detached);
    Tensor eps = policy.system1_forward(latent, obs, 3, noised);
    Tensor loss = ops::sum_all(ops::mul(eps, eps));
    tape.backward(loss);
  };

  run_backward(/*detached=*/false);
  const int split = cfg.backbone.split_block();
  CHECK(grad_norm_of(cat("blocks.", 1, ".attn.wq")) > 0.0);
  CHECK(grad_norm_of(cat("blocks.", split + 1, ".attn.wq")) > 0.0);
  CHECK(grad_norm_of("enc.act.w") > 0.0);
  CHECK(grad_norm_of("enc.time.w") > 0.0);
  CHECK(grad_norm_of("act_head.w") > 0.0);

  run_backward(/*detached=*/true);
  CHECK(grad_norm_of(cat("blocks.", 1, ".attn.wq")) == 0.0);
  CHECK(grad_norm_of(cat("blocks.", split, ".mlp.w1")) == 0.0);
  CHECK(grad_norm_of(cat("blocks.", split + 1, ".attn.wq")) > 0.0);
  CHECK(grad_norm_of("act_head.w") > 0.0);
}

TEST_CASE("sequence overflow is rejected") {
  PolicyConfig cfg = small_policy_config();
  cfg.backbone.max_seq_len = 8;  // far below the prompt size
  Policy policy(cfg, 71);
  Observation obs = sample_obs(8);
  CHECK_THROWS_AS(policy.system2_forward(obs), ShapeError);
}

TEST_CASE("theta_f is a subset of theta and respects modality wiring") {
  PolicyConfig cfg = small_policy_config();
  cfg.s1_inputs = {false, false, false};  // latent-only fast system
  Policy policy(cfg, 73);
  for (const auto& name : policy.params().fast_set())
    CHECK(policy.params().has(name));
  CHECK_FALSE(policy.params().is_fast("enc.state.w"));
  CHECK_FALSE(policy.params().is_fast("group.pc"));
  CHECK(policy.params().is_fast("enc.act.w"));
  CHECK(policy.params().is_fast("act_head.w"));
  CHECK(policy.params().is_fast(cat("blocks.", cfg.backbone.split_block() + 1, ".mlp.w1")));
  CHECK_FALSE(policy.params().is_fast("blocks.1.mlp.w1"));
  CHECK_FALSE(policy.params().is_fast("embed.tok"));
}
