#pragma once

// Observation encoders: dual-branch patch embedding for images, the
// FPS/kNN/linear/max-pool tokenizer stack for point clouds, and the small
// projections for state, diffusion timestep and noised-action inputs.
// All encoders emit tokens in the backbone model dimension; the image and
// point-cloud paths share the final vision projection. Each token group
// carries its own learned group embedding.

#include <string>
#include <utility>
#include <vector>

#include "dsvla/params.hpp"
#include "dsvla/tensor.hpp"

namespace dsvla {

struct PointCloud {
  int count = 0;
  std::vector<double> xyz;  // row-major [count, 3]

  double x(int i) const { return xyz[static_cast<std::size_t>(i) * 3 + 0]; }
  double y(int i) const { return xyz[static_cast<std::size_t>(i) * 3 + 1]; }
  double z(int i) const { return xyz[static_cast<std::size_t>(i) * 3 + 2]; }
  // count >= 1, coordinates finite and inside [-1, 1]^3.
  void validate() const;
};

struct EncoderConfig {
  int image_side = 32;
  int patch_side = 8;
  int channels = 3;
  int branch_dim = 64;  // width of each of the two patch-embedding branches
  int pc_points = 128;
  std::vector<int> pc_chain{64, 32, 16};  // FPS sizes per tokenizer block
  int knn_k = 8;
  int d_model = 64;
  int state_dim = 3;
  int action_dim = 3;
  int diffusion_steps = 100;

  // Full-scale reference (not the toy defaults): images resized to 224x224
  // and point clouds downsampled to 1024 points.
  int image_tokens() const {
    return (image_side / patch_side) * (image_side / patch_side);
  }
  int patch_dim() const { return channels * patch_side * patch_side; }
  int pc_tokens() const { return pc_chain.back(); }
  // Feature widths per tokenizer block; the last equals the concatenated
  // image-branch width so both paths share the vision projection.
  std::vector<int> pc_feature_dims() const {
    return {branch_dim / 2, branch_dim, 2 * branch_dim};
  }
  void validate() const;
};

// Greedy max-min farthest point sampling; the first pick is start_index,
// distance ties break to the lowest index. Returns m unique indices.
std::vector<int> fps(const PointCloud& points, int m, int start_index);

// Per center, the k nearest points (squared Euclidean, ties by lowest
// index), nearest first. A center is its own nearest neighbor.
std::vector<std::vector<int>> knn_group(const PointCloud& points,
                                        const std::vector<int>& center_indices,
                                        int k);

void register_encoder_params(ParamStore& params, const EncoderConfig& cfg,
                             Rng& rng);
// Names of every parameter the System-1 input path touches.
std::vector<std::string> encoder_fast_param_names(const EncoderConfig& cfg);

// image: channel-major [channels, side, side] pixels in [0, 1].
Tensor encode_image(const std::vector<double>& image, const EncoderConfig& cfg,
                    const ParamStore& params);

Tensor tokenize_pointcloud(const PointCloud& points, const EncoderConfig& cfg,
                           const ParamStore& params);

Tensor encode_state(const std::vector<double>& state, const EncoderConfig& cfg,
                    const ParamStore& params);

Tensor encode_timestep(int tau, const EncoderConfig& cfg,
                       const ParamStore& params);

// noised chunk [H, action_dim] -> H tokens.
Tensor encode_noised_chunk(const Tensor& noised, const EncoderConfig& cfg,
                           const ParamStore& params);

struct ConditioningBundle {
  Tensor tokens;
  // Fixed, documented group order with sizes; boundaries recoverable by
  // prefix sums.
  std::vector<std::pair<std::string, int>> groups;
  int total() const;
};

// The state/timestep/noised-action token block, in that order.
ConditioningBundle embed_conditioning(const std::vector<double>& state, int tau,
                                      const Tensor& noised_chunk,
                                      const EncoderConfig& cfg,
                                      const ParamStore& params);

}  // namespace dsvla
