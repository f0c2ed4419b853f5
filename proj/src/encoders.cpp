#include "dsvla/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsvla/error.hpp"

namespace dsvla {

void PointCloud::validate() const {
  if (count < 1) throw ShapeError("pointcloud: needs at least one point");
  if (xyz.size() != static_cast<std::size_t>(count) * 3)
    throw ShapeError("pointcloud: coordinate count mismatch");
  for (double v : xyz) {
    if (!std::isfinite(v)) throw NumericError("pointcloud: non-finite coordinate");
    if (std::abs(v) > 1.0)
      throw NumericError(cat("pointcloud: coordinate ", v, " outside [-1, 1]"));
  }
}

void EncoderConfig::validate() const {
  if (image_side < 1 || patch_side < 1 || image_side % patch_side != 0)
    throw ConfigError(cat("encoder: image side ", image_side,
                          " not divisible by patch ", patch_side));
  if (channels < 1) throw ConfigError("encoder: channels must be >= 1");
  if (branch_dim < 2 || branch_dim % 2 != 0)
    throw ConfigError("encoder: branch_dim must be even and >= 2");
  if (pc_chain.empty()) throw ConfigError("encoder: empty pc chain");
  int prev = pc_points;
  for (int m : pc_chain) {
    if (m < 1 || m >= prev)
      throw ConfigError("encoder: pc chain sizes must be strictly descending");
    prev = m;
  }
  const int smallest_input =
      pc_chain.size() >= 2 ? pc_chain[pc_chain.size() - 2] : pc_points;
  if (knn_k < 1 || knn_k > smallest_input)
    throw ConfigError(cat("encoder: knn_k ", knn_k, " exceeds level size ",
                          smallest_input));
  if (d_model < 1 || state_dim < 1 || action_dim < 1 || diffusion_steps < 1)
    throw ConfigError("encoder: bad dimension");
}

namespace {

double dist2(const PointCloud& p, int i, int j) {
  const double dx = p.x(i) - p.x(j);
  const double dy = p.y(i) - p.y(j);
  const double dz = p.z(i) - p.z(j);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<int> fps(const PointCloud& points, int m, int start_index) {
  const int n = points.count;
  if (m < 1 || m > n)
    throw ShapeError(cat("fps: m = ", m, " outside [1, ", n, "]"));
  if (start_index < 0 || start_index >= n)
    throw ShapeError(cat("fps: start index ", start_index, " outside [0, ", n, ")"));
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(m));
  selected.push_back(start_index);
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  taken[static_cast<std::size_t>(start_index)] = 1;
  std::vector<double> min_d2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) min_d2[static_cast<std::size_t>(i)] = dist2(points, i, start_index);
  while (static_cast<int>(selected.size()) < m) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)] && min_d2[static_cast<std::size_t>(i)] > best_d) {
        best_d = min_d2[static_cast<std::size_t>(i)];
        best = i;
      }
    }
    selected.push_back(best);
    taken[static_cast<std::size_t>(best)] = 1;
    for (int i = 0; i < n; ++i)
      min_d2[static_cast<std::size_t>(i)] =
          std::min(min_d2[static_cast<std::size_t>(i)], dist2(points, i, best));
  }
  return selected;
}

std::vector<std::vector<int>> knn_group(const PointCloud& points,
                                        const std::vector<int>& center_indices,
                                        int k) {
  const int n = points.count;
  if (k < 1 || k > n)
    throw ShapeError(cat("knn_group: k = ", k, " outside [1, ", n, "]"));
  std::vector<std::vector<int>> groups;
  groups.reserve(center_indices.size());
  std::vector<std::pair<double, int>> order(static_cast<std::size_t>(n));
  for (int c : center_indices) {
    if (c < 0 || c >= n) throw ShapeError(cat("knn_group: center ", c, " out of range"));
    for (int i = 0; i < n; ++i)
      order[static_cast<std::size_t>(i)] = {dist2(points, i, c), i};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    std::vector<int> group(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) group[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i)].second;
    groups.push_back(std::move(group));
  }
  return groups;
}

void register_encoder_params(ParamStore& params, const EncoderConfig& cfg,
                             Rng& rng) {
  cfg.validate();
  const double w = 0.02;
  params.add_randn("img.branch_a.w", {cfg.patch_dim(), cfg.branch_dim}, rng, w);
  params.add_zeros("img.branch_a.b", {cfg.branch_dim});
  params.add_randn("img.branch_b.w", {cfg.patch_dim(), cfg.branch_dim}, rng, w);
  params.add_zeros("img.branch_b.b", {cfg.branch_dim});
  params.add_randn("img.pos", {cfg.image_tokens(), cfg.d_model}, rng, w);
  params.add_randn("vision.proj.w", {2 * cfg.branch_dim, cfg.d_model}, rng, w);
  params.add_zeros("vision.proj.b", {cfg.d_model});

  const auto dims = cfg.pc_feature_dims();
  int in_dim = 3;
  for (std::size_t blk = 0; blk < cfg.pc_chain.size(); ++blk) {
    params.add_randn(cat("pc.block", blk + 1, ".w"), {in_dim, dims[blk]}, rng, w);
    params.add_zeros(cat("pc.block", blk + 1, ".b"), {dims[blk]});
    in_dim = 3 + dims[blk];
  }

  params.add_randn("enc.state.w", {cfg.state_dim, cfg.d_model}, rng, w);
  params.add_zeros("enc.state.b", {cfg.d_model});
  params.add_randn("enc.time.w", {cfg.d_model, cfg.d_model}, rng, w);
  params.add_zeros("enc.time.b", {cfg.d_model});
  params.add_randn("enc.act.w", {cfg.action_dim, cfg.d_model}, rng, w);
  params.add_zeros("enc.act.b", {cfg.d_model});

  for (const char* g : {"group.img", "group.pc", "group.state", "group.time",
                        "group.act"})
    params.add_randn(g, {cfg.d_model}, rng, w);
}

std::vector<std::string> encoder_fast_param_names(const EncoderConfig& cfg) {
  std::vector<std::string> names{
      "img.branch_a.w", "img.branch_a.b", "img.branch_b.w", "img.branch_b.b",
      "img.pos",        "vision.proj.w",  "vision.proj.b",  "enc.state.w",
      "enc.state.b",    "enc.time.w",     "enc.time.b",     "enc.act.w",
      "enc.act.b",      "group.img",      "group.pc",       "group.state",
      "group.time",     "group.act"};
  for (std::size_t blk = 0; blk < cfg.pc_chain.size(); ++blk) {
    names.push_back(cat("pc.block", blk + 1, ".w"));
    names.push_back(cat("pc.block", blk + 1, ".b"));
  }
  return names;
}

Tensor encode_image(const std::vector<double>& image, const EncoderConfig& cfg,
                    const ParamStore& params) {
  const int side = cfg.image_side, patch = cfg.patch_side, ch = cfg.channels;
  if (image.size() != static_cast<std::size_t>(ch) * side * side)
    throw ShapeError(cat("encode_image: expected ", ch * side * side,
                         " pixels, got ", image.size()));
  for (double v : image) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw NumericError(cat("encode_image: pixel ", v, " outside [0, 1]"));
  }
  const int grid = side / patch;
  const int n_tokens = grid * grid;
  const int pdim = cfg.patch_dim();
  std::vector<double> patches(static_cast<std::size_t>(n_tokens) * pdim);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      double* dst = patches.data() +
                    static_cast<std::size_t>(gy * grid + gx) * pdim;
      int w = 0;
      for (int c = 0; c < ch; ++c)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            dst[w++] = image[static_cast<std::size_t>(c) * side * side +
                             static_cast<std::size_t>(gy * patch + py) * side +
                             (gx * patch + px)];
    }
  }
  Tensor p = Tensor::from(std::move(patches), {n_tokens, pdim});
  // Two independent branches, channel-concatenated, shared projection.
  Tensor a = ops::add_rowvec(ops::matmul(p, params.get("img.branch_a.w")),
                             params.get("img.branch_a.b"));
  Tensor b = ops::add_rowvec(ops::matmul(p, params.get("img.branch_b.w")),
                             params.get("img.branch_b.b"));
  Tensor fused = ops::concat_lastdim({a, b});
  Tensor tokens = ops::add_rowvec(ops::matmul(fused, params.get("vision.proj.w")),
                                  params.get("vision.proj.b"));
  tokens = ops::add(tokens, params.get("img.pos"));
  return ops::add_rowvec(tokens, params.get("group.img"));
}

Tensor tokenize_pointcloud(const PointCloud& points, const EncoderConfig& cfg,
                           const ParamStore& params) {
  points.validate();
  if (points.count < cfg.pc_points)
    throw ShapeError(cat("tokenize_pointcloud: need at least ", cfg.pc_points,
                         " points, got ", points.count));
  const auto dims = cfg.pc_feature_dims();

  PointCloud level = points;
  Tensor features;  // [level.count, f]; empty before the first block
  for (std::size_t blk = 0; blk < cfg.pc_chain.size(); ++blk) {
    const int m = cfg.pc_chain[blk];
    const std::vector<int> centers = fps(level, m, 0);
    const auto groups = knn_group(level, centers, cfg.knn_k);

    // Relative coordinates are pure geometry (constant on the tape).
    std::vector<double> rel(static_cast<std::size_t>(m) * cfg.knn_k * 3);
    std::vector<int> flat_ids(static_cast<std::size_t>(m) * cfg.knn_k);
    for (int c = 0; c < m; ++c) {
      for (int t = 0; t < cfg.knn_k; ++t) {
        const int idx = groups[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
        const std::size_t row = static_cast<std::size_t>(c) * cfg.knn_k + t;
        rel[row * 3 + 0] = level.x(idx) - level.x(centers[static_cast<std::size_t>(c)]);
        rel[row * 3 + 1] = level.y(idx) - level.y(centers[static_cast<std::size_t>(c)]);
        rel[row * 3 + 2] = level.z(idx) - level.z(centers[static_cast<std::size_t>(c)]);
        flat_ids[row] = idx;
      }
    }
    Tensor rel_t = Tensor::from(std::move(rel), {m * cfg.knn_k, 3});
    Tensor group_in =
        features.data
            ? ops::concat_lastdim({rel_t, ops::embedding_lookup(features, flat_ids)})
            : rel_t;
    Tensor encoded = ops::add_rowvec(
        ops::matmul(group_in, params.get(cat("pc.block", blk + 1, ".w"))),
        params.get(cat("pc.block", blk + 1, ".b")));
    features = ops::maxpool_rows(encoded, cfg.knn_k);  // [m, dims[blk]]

    PointCloud next;
    next.count = m;
    next.xyz.resize(static_cast<std::size_t>(m) * 3);
    for (int c = 0; c < m; ++c) {
      next.xyz[static_cast<std::size_t>(c) * 3 + 0] = level.x(centers[static_cast<std::size_t>(c)]);
      next.xyz[static_cast<std::size_t>(c) * 3 + 1] = level.y(centers[static_cast<std::size_t>(c)]);
      next.xyz[static_cast<std::size_t>(c) * 3 + 2] = level.z(centers[static_cast<std::size_t>(c)]);
    }
    level = std::move(next);
  }
  (void)dims;
  Tensor tokens = ops::add_rowvec(
      ops::matmul(features, params.get("vision.proj.w")),
      params.get("vision.proj.b"));
  return ops::add_rowvec(tokens, params.get("group.pc"));
}

Tensor encode_state(const std::vector<double>& state, const EncoderConfig& cfg,
                    const ParamStore& params) {
  if (state.size() != static_cast<std::size_t>(cfg.state_dim))
    throw ShapeError(cat("encode_state: expected ", cfg.state_dim,
                         " values, got ", state.size()));
  Tensor s = Tensor::from(state, {1, cfg.state_dim});
  Tensor tok = ops::add_rowvec(ops::matmul(s, params.get("enc.state.w")),
                               params.get("enc.state.b"));
  return ops::add_rowvec(tok, params.get("group.state"));
}

Tensor encode_timestep(int tau, const EncoderConfig& cfg,
                       const ParamStore& params) {
  if (tau < 1 || tau > cfg.diffusion_steps)
    throw NumericError(cat("encode_timestep: tau ", tau, " outside [1, ",
                           cfg.diffusion_steps, "]"));
  const int d = cfg.d_model;
  std::vector<double> base(static_cast<std::size_t>(d));
  for (int i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d);
    base[static_cast<std::size_t>(2 * i)] = std::sin(tau * freq);
    base[static_cast<std::size_t>(2 * i + 1)] = std::cos(tau * freq);
  }
  if (d % 2 == 1) base[static_cast<std::size_t>(d - 1)] = std::sin(tau);
  Tensor b = Tensor::from(std::move(base), {1, d});
  Tensor tok = ops::add_rowvec(ops::matmul(b, params.get("enc.time.w")),
                               params.get("enc.time.b"));
  return ops::add_rowvec(tok, params.get("group.time"));
}

Tensor encode_noised_chunk(const Tensor& noised, const EncoderConfig& cfg,
                           const ParamStore& params) {
  if (noised.rank() != 2 || noised.shape[1] != cfg.action_dim)
    throw ShapeError(cat("encode_noised_chunk: expected [H, ", cfg.action_dim,
                         "]"));
  Tensor tok = ops::add_rowvec(ops::matmul(noised, params.get("enc.act.w")),
                               params.get("enc.act.b"));
  return ops::add_rowvec(tok, params.get("group.act"));
}

int ConditioningBundle::total() const {
  int n = 0;
  for (const auto& [_, size] : groups) n += size;
  return n;
}

ConditioningBundle embed_conditioning(const std::vector<double>& state, int tau,
                                      const Tensor& noised_chunk,
                                      const EncoderConfig& cfg,
                                      const ParamStore& params) {
  ConditioningBundle bundle;
  Tensor s = encode_state(state, cfg, params);
  Tensor t = encode_timestep(tau, cfg, params);
  Tensor a = encode_noised_chunk(noised_chunk, cfg, params);
  bundle.tokens = ops::concat_rows({s, t, a});
  bundle.groups = {{"state", 1}, {"timestep", 1}, {"action", noised_chunk.shape[0]}};
  return bundle;
}

}  // namespace dsvla
