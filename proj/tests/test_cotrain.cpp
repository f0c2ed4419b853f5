#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dsvla/cotrain.hpp"

using namespace dsvla;

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

std::vector<TrajectoryRecord> small_dataset(int episodes) {
  ToyEnv env(small_env_config());
  std::vector<TrajectoryRecord> out;
  for (int i = 0; i < episodes; ++i)
    out.push_back(roll_expert_episode(env, 4000 + static_cast<std::uint64_t>(i), i));
  return out;
}

std::string temp_dir(const char* name) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

}  // namespace

TEST_CASE("async_sample degenerate and error cases") {
  auto data = small_dataset(1);
  Rng rng(1);
  const auto& traj = data[0];
  const int len = static_cast<int>(traj.steps.size());

  SUBCASE("n = 1 always gives delta = 0 and coinciding observations") {
    for (int i = 0; i < 50; ++i) {
      const int t = 2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(len - 6)));
      auto ex = async_sample(traj, t, 1, 2, rng);
      CHECK(ex.delta == 0);
      CHECK(ex.s2_obs.state == ex.s1_obs.state);
      CHECK(ex.s2_obs.image == ex.s1_obs.image);
    }
  }

  SUBCASE("delta histogram over 10k draws is uniform within 3 sigma") {
    const int n = 4;
    std::vector<int> counts(4, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      auto ex = async_sample(traj, n - 1 + 2, n, 2, rng);
      ++counts[static_cast<std::size_t>(ex.delta)];
    }
    // multinomial: sigma = sqrt(N p (1-p)) with p = 1/4
    const double sigma = std::sqrt(draws * 0.25 * 0.75);
    for (int c : counts) CHECK(std::abs(c - draws / 4) < 3.0 * sigma);
  }

  SUBCASE("windows that leave the trajectory are rejected, never truncated") {
    CHECK_THROWS_AS(async_sample(traj, 1, 4, 2, rng), ShapeError);          // t - (n-1) < 0
    CHECK_THROWS_AS(async_sample(traj, len - 1, 1, 2, rng), ShapeError);    // t + H > len
    CHECK_THROWS_AS(async_sample(traj, 3, 4, len + 1, rng), ShapeError);    // H alone too long
    CHECK_NOTHROW(async_sample(traj, 3, 4, 2, rng));
  }

  SUBCASE("normalization is applied to targets") {
    ActionStats stats;
    stats.p01 = {-2.0, -2.0, -2.0};
    stats.p99 = {2.0, 2.0, 2.0};
    Normalizer norm{stats};
    Rng r2(3);
    auto raw = async_sample(traj, 3, 1, 1, r2);
    Rng r3(3);
    auto scaled = async_sample(traj, 3, 1, 1, r3, &norm);
    for (int d = 0; d < 3; ++d)
      CHECK(scaled.target_chunk.at(0, d) ==
            doctest::Approx(raw.target_chunk.at(0, d) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("total_loss weighting, additivity, and determinism") {
  Policy policy(small_policy_config(), 7);
  auto data = small_dataset(1);
  auto sched = build_schedule(policy.config().diffusion_steps);
  Rng sample_rng(5);
  auto example = async_sample(data[0], 4, 2, policy.config().horizon, sample_rng);

  auto eval_loss = [&](double wf, double ws, std::uint64_t seed) {
    Rng rng(seed);
    Tape tape;
    TapeScope scope(tape);
    return total_loss(policy, example, sched, rng, wf, ws);
  };

  const auto both = eval_loss(1.0, 1.0, 11);
  const auto fast_only = eval_loss(1.0, 0.0, 11);
  const auto weighted = eval_loss(0.7, 1.3, 11);

  CHECK(both.fast == fast_only.fast);
  CHECK(fast_only.total.item() == doctest::Approx(fast_only.fast).epsilon(1e-15));
  CHECK(std::abs(both.total.item() - (both.fast + both.slow)) < 1e-12);
  CHECK(std::abs(weighted.total.item() - (0.7 * weighted.fast + 1.3 * weighted.slow)) < 1e-12);

  const auto again = eval_loss(1.0, 1.0, 11);
  CHECK(again.total.item() == both.total.item());  // bit-exact reproducibility
  CHECK(again.fast == both.fast);
  CHECK(again.slow == both.slow);
}

TEST_CASE("gradient census: a fresh-latent example touches every group") {
  Policy policy(small_policy_config(), 9);
  auto data = small_dataset(1);
  auto sched = build_schedule(policy.config().diffusion_steps);
  Rng sample_rng(13);
  // ratio 1 forces delta = 0 (fresh latent, end-to-end gradients).
  auto example = async_sample(data[0], 4, 1, policy.config().horizon, sample_rng);

  policy.params().zero_grads();
  {
    Rng rng(17);
    Tape tape;
    TapeScope scope(tape);
    auto parts = total_loss(policy, example, sched, rng, 1.0, 1.0);
    tape.backward(parts.total);
  }

  auto group_grad = [&](const std::string& prefix) {
    double s = 0.0;
    for (const auto& name : policy.params().names()) {
      if (name.rfind(prefix, 0) != 0) continue;
      for (double g : *policy.params().get(name).grad) s += std::abs(g);
    }
    return s;
  };

  CHECK(group_grad("embed.tok") > 0.0);
  CHECK(group_grad("embed.pos") > 0.0);
  CHECK(group_grad("img.") > 0.0);
  CHECK(group_grad("pc.") > 0.0);
  CHECK(group_grad("vision.proj") > 0.0);
  CHECK(group_grad("enc.state") > 0.0);
  CHECK(group_grad("enc.time") > 0.0);
  CHECK(group_grad("enc.act") > 0.0);
  CHECK(group_grad("group.") > 0.0);
  for (int b = 1; b <= policy.config().backbone.n_blocks; ++b)
    CHECK(group_grad(cat("blocks.", b, ".")) > 0.0);
  CHECK(group_grad("ln_f") > 0.0);
  CHECK(group_grad("lm_head") > 0.0);
  CHECK(group_grad("s1_ln") > 0.0);
  CHECK(group_grad("act_head") > 0.0);
}

TEST_CASE("train: zero learning rate leaves parameters untouched") {
  Policy policy(small_policy_config(), 21);
  auto data = small_dataset(2);
  MixtureSampler sampler({&data}, {1.0});
  Normalizer norm{compute_action_stats(data)};
  auto sched = build_schedule(policy.config().diffusion_steps);

  std::vector<std::vector<double>> before;
  for (const auto& name : policy.params().names())
    before.push_back(*policy.params().get(name).data);

  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 1;
  cfg.lr = 0.0;
  cfg.ratio_n = 2;
  cfg.seed = 1;
  train(policy, sampler, norm, sched, cfg, "");

  std::size_t i = 0;
  for (const auto& name : policy.params().names())
    CHECK(*policy.params().get(name).data == before[i++]);
}

TEST_CASE("train: identical seeds give identical metric streams") {
  auto run = [&] {
    Policy policy(small_policy_config(), 23);
    auto data = small_dataset(2);
    MixtureSampler sampler({&data}, {1.0});
    Normalizer norm{compute_action_stats(data)};
    auto sched = build_schedule(policy.config().diffusion_steps);
    TrainConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 2;
    cfg.ratio_n = 2;
    cfg.seed = 77;
    return train(policy, sampler, norm, sched, cfg, "");
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].total == b.metrics[i].total);
    CHECK(a.metrics[i].fast == b.metrics[i].fast);
    CHECK(a.metrics[i].slow == b.metrics[i].slow);
    CHECK(a.metrics[i].grad_norm == b.metrics[i].grad_norm);
  }
  CHECK(a.metrics.back().total < a.metrics.front().total * 5.0);  // sanity
}

TEST_CASE("train: checkpoint resume is bit-exact") {
  auto data = small_dataset(2);
  MixtureSampler sampler({&data}, {1.0});
  Normalizer norm{compute_action_stats(data)};

  const std::string dir_a = temp_dir("dsvla_resume_a");
  const std::string dir_b = temp_dir("dsvla_resume_b");
  const std::string dir_c = temp_dir("dsvla_resume_c");

  TrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 1;
  cfg.ratio_n = 2;
  cfg.seed = 31;
  cfg.checkpoint_every = 3;

  Policy straight(small_policy_config(), 29);
  auto sched = build_schedule(straight.config().diffusion_steps);
  auto result_straight = train(straight, sampler, norm, sched, cfg, dir_a);

  // Fresh policy, resumed from the step-3 state written by a half run.
  Policy half(small_policy_config(), 29);
  TrainConfig half_cfg = cfg;
  half_cfg.steps = 3;
  train(half, sampler, norm, sched, half_cfg, dir_b);

  Policy resumed(small_policy_config(), 999);  // different init: state wins
  TrainConfig resume_cfg = cfg;
  resume_cfg.resume_from = dir_b + "/train_state.bin";
  auto result_resumed = train(resumed, sampler, norm, sched, resume_cfg, dir_c);

  REQUIRE(result_resumed.metrics.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& full = result_straight.metrics[3 + i];
    const auto& res = result_resumed.metrics[i];
    CHECK(full.step == res.step);
    CHECK(full.total == res.total);
    CHECK(full.fast == res.fast);
    CHECK(full.slow == res.slow);
    CHECK(full.grad_norm == res.grad_norm);
  }
  CHECK(content_hash_file(dir_a + "/checkpoint.bin") ==
        content_hash_file(dir_c + "/checkpoint.bin"));

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::remove_all(dir_c);
}

TEST_CASE("train: non-finite parameters abort with the offending group") {
  Policy policy(small_policy_config(), 41);
  auto data = small_dataset(1);
  MixtureSampler sampler({&data}, {1.0});
  Normalizer norm{compute_action_stats(data)};
  auto sched = build_schedule(policy.config().diffusion_steps);
  policy.params().get("blocks.2.mlp.w1").at(5) =
      std::numeric_limits<double>::infinity();

  TrainConfig cfg;
  cfg.steps = 1;
  cfg.batch_size = 1;
  cfg.ratio_n = 1;
  try {
    train(policy, sampler, norm, sched, cfg, "");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("blocks.2.mlp.w1") != std::string::npos);
    CHECK(msg.find("step 1") != std::string::npos);
  }
}
