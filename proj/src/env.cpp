#include "dsvla/env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dsvla/error.hpp"

namespace dsvla {

namespace {

using nlohmann::json;

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

constexpr double kDrawRadius = 0.14;  // rendered disc radius
constexpr double kEdgeSoft = 0.125;   // two pixels of soft edge
constexpr double kRingRadius = 0.1;
constexpr double kObjectRingZ = 0.15;
constexpr double kGoalRingZ = 0.05;

// base64 of raw bytes (RFC 4648, padded)
const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < len ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < len ? data[i + 2] : 0;
    out.push_back(kB64Alphabet[b0 >> 2]);
    out.push_back(kB64Alphabet[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < len ? kB64Alphabet[((b1 & 0xF) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < len ? kB64Alphabet[b2 & 0x3F] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw IoError("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        vals[j] = 0;
        ++pad;
      } else {
        vals[j] = value_of(c);
        if (vals[j] < 0) throw IoError("base64: invalid character");
        if (pad > 0) throw IoError("base64: data after padding");
      }
    }
    out.push_back(static_cast<unsigned char>((vals[0] << 2) | (vals[1] >> 4)));
    if (pad < 2) out.push_back(static_cast<unsigned char>(((vals[1] & 0xF) << 4) | (vals[2] >> 2)));
    if (pad < 1) out.push_back(static_cast<unsigned char>(((vals[2] & 0x3) << 6) | vals[3]));
  }
  return out;
}

std::string encode_f32_array(const std::vector<double>& values) {
  static_assert(std::endian::native == std::endian::little,
                "dataset byte layout assumes a little-endian host");
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + i * 4, &f, 4);
  }
  return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> decode_f32_array(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw IoError("float32 array: byte count not a multiple of 4");
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * 4, 4);
    values[i] = static_cast<double>(f);
  }
  return values;
}

double percentile(std::vector<double> sorted, double p) {
  // linear interpolation at index p * (n - 1)
  const std::size_t n = sorted.size();
  const double idx = p * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = idx - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

const std::vector<std::string>& instruction_words() {
  static const std::vector<std::string> words{
      "move", "push",  "bring",  "carry", "the",  "block", "object",
      "cube", "piece", "to",     "onto",  "goal", "target", "marker",
      "zone", "and",   "release"};
  return words;
}

std::vector<std::vector<int>> instruction_templates(const ActionVocab& vocab) {
  auto id = [&](const char* word) {
    const auto& words = instruction_words();
    for (std::size_t i = 0; i < words.size(); ++i)
      if (words[i] == word) return vocab.first_word() + static_cast<int>(i);
    throw ConfigError(cat("unknown instruction word '", word, "'"));
  };
  return {
      {id("move"), id("the"), id("block"), id("to"), id("the"), id("goal")},
      {id("push"), id("the"), id("object"), id("onto"), id("the"), id("target")},
      {id("carry"), id("the"), id("cube"), id("to"), id("the"), id("marker")},
      {id("bring"), id("the"), id("piece"), id("to"), id("the"), id("zone")},
  };
}

ToyEnv::ToyEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
  if (static_cast<std::size_t>(instruction_words().size()) >
      static_cast<std::size_t>(cfg_.vocab.word_slots()))
    throw ConfigError("env: instruction vocabulary exceeds word slots");
}

Observation ToyEnv::reset(std::uint64_t seed) {
  Rng rng(seed, /*stream=*/0xE57);
  state_ = ToyEnvState{};
  state_.seed = seed;
  const double e = cfg_.spawn_extent;
  while (true) {
    state_.ox = rng.uniform(-e, e);
    state_.oy = rng.uniform(-e, e);
    state_.gx = rng.uniform(-e, e);
    state_.gy = rng.uniform(-e, e);
    const double dx = state_.ox - state_.gx, dy = state_.oy - state_.gy;
    if (std::sqrt(dx * dx + dy * dy) >= cfg_.min_separation) break;
  }
  const auto templates = instruction_templates(cfg_.vocab);
  instruction_ = templates[rng.uniform_int(templates.size())];
  return observe();
}

ToyEnv::StepResult ToyEnv::step(const std::vector<double>& action) {
  if (action.size() != 3) throw ShapeError("env: action must have 3 dims");
  const double ax = clamp1(std::isfinite(action[0]) ? action[0] : 0.0);
  const double ay = clamp1(std::isfinite(action[1]) ? action[1] : 0.0);
  const double ag = clamp1(std::isfinite(action[2]) ? action[2] : 0.0);

  double dx = ax * cfg_.max_step;
  double dy = ay * cfg_.max_step;
  const double norm = std::sqrt(dx * dx + dy * dy);
  if (norm > cfg_.max_step) {
    dx *= cfg_.max_step / norm;
    dy *= cfg_.max_step / norm;
  }
  state_.ex = clamp1(state_.ex + dx);
  state_.ey = clamp1(state_.ey + dy);
  if (state_.held) {
    state_.ox = state_.ex;
    state_.oy = state_.ey;
  }

  bool success = false;
  const int prev_gripper = state_.gripper;
  int gripper_cmd = prev_gripper;
  if (ag > 0.5) gripper_cmd = 1;
  if (ag < -0.5) gripper_cmd = 0;
  if (gripper_cmd == 1 && prev_gripper == 0) {
    state_.gripper = 1;
    const double ox = state_.ox - state_.ex, oy = state_.oy - state_.ey;
    if (std::sqrt(ox * ox + oy * oy) <= cfg_.grasp_radius) state_.held = true;
  } else if (gripper_cmd == 0 && prev_gripper == 1) {
    state_.gripper = 0;
    if (state_.held) {
      state_.held = false;
      const double gx = state_.ox - state_.gx, gy = state_.oy - state_.gy;
      if (std::sqrt(gx * gx + gy * gy) <= cfg_.goal_radius) success = true;
    }
  }

  ++state_.step_count;
  StepResult result;
  result.success = success;
  result.done = success || state_.step_count >= cfg_.max_episode_steps;
  result.obs = observe();
  return result;
}

Observation ToyEnv::observe() const {
  Observation obs;
  const int side = cfg_.image_side;
  obs.image.assign(static_cast<std::size_t>(3) * side * side, 0.0);
  auto draw = [&](int channel, double cx, double cy) {
    for (int py = 0; py < side; ++py) {
      for (int px = 0; px < side; ++px) {
        const double wx = -1.0 + (px + 0.5) * 2.0 / side;
        const double wy = -1.0 + (py + 0.5) * 2.0 / side;
        const double d = std::sqrt((wx - cx) * (wx - cx) + (wy - cy) * (wy - cy));
        const double v = std::clamp((kDrawRadius - d) / kEdgeSoft, 0.0, 1.0);
        if (v > 0.0)
          obs.image[static_cast<std::size_t>(channel) * side * side +
                    static_cast<std::size_t>(py) * side + px] = f32(v);
      }
    }
  };
  draw(0, state_.ox, state_.oy);
  draw(1, state_.gx, state_.gy);
  draw(2, state_.ex, state_.ey);

  obs.pointcloud.count = cfg_.pc_points();
  obs.pointcloud.xyz.resize(static_cast<std::size_t>(obs.pointcloud.count) * 3);
  const int ring = cfg_.pc_ring_points;
  for (int i = 0; i < ring; ++i) {
    const double angle = 2.0 * 3.14159265358979323846 * i / ring;
    const double cs = std::cos(angle), sn = std::sin(angle);
    // object ring
    obs.pointcloud.xyz[static_cast<std::size_t>(i) * 3 + 0] =
        f32(clamp1(state_.ox + kRingRadius * cs));
    obs.pointcloud.xyz[static_cast<std::size_t>(i) * 3 + 1] =
        f32(clamp1(state_.oy + kRingRadius * sn));
    obs.pointcloud.xyz[static_cast<std::size_t>(i) * 3 + 2] = f32(kObjectRingZ);
    // goal ring
    const std::size_t j = static_cast<std::size_t>(ring + i) * 3;
    obs.pointcloud.xyz[j + 0] = f32(clamp1(state_.gx + kRingRadius * cs));
    obs.pointcloud.xyz[j + 1] = f32(clamp1(state_.gy + kRingRadius * sn));
    obs.pointcloud.xyz[j + 2] = f32(kGoalRingZ);
  }

  obs.state = {f32(state_.ex), f32(state_.ey), static_cast<double>(state_.gripper)};
  obs.instruction = instruction_;
  return obs;
}

std::vector<double> scripted_expert(const ToyEnvState& state,
                                    const EnvConfig& cfg) {
  constexpr double kSnap = 0.02;
  const double tx = state.held ? state.gx : state.ox;
  const double ty = state.held ? state.gy : state.oy;
  const double dx = tx - state.ex, dy = ty - state.ey;
  const double dist = std::sqrt(dx * dx + dy * dy);
  if (dist > kSnap) {
    return {clamp1(dx / cfg.max_step), clamp1(dy / cfg.max_step),
            state.held ? 1.0 : -1.0};
  }
  if (!state.held) return {0.0, 0.0, 1.0};  // on the object: grasp
  return {0.0, 0.0, -1.0};                  // at the goal: release
}

TrajectoryRecord roll_expert_episode(ToyEnv& env, std::uint64_t seed,
                                     int episode_id) {
  TrajectoryRecord record;
  record.episode_id = episode_id;
  Observation obs = env.reset(seed);
  for (int t = 0; t < env.config().max_episode_steps; ++t) {
    TrajectoryStep step;
    step.obs = obs;
    step.action = scripted_expert(env.state(), env.config());
    auto result = env.step(step.action);
    step.done = result.done;
    step.success = result.success;
    record.steps.push_back(std::move(step));
    obs = std::move(result.obs);
    if (record.steps.back().done) break;
  }
  record.success = !record.steps.empty() && record.steps.back().success;
  return record;
}

void write_dataset(const std::vector<TrajectoryRecord>& episodes,
                   const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(cat("dataset: cannot open ", path, " for writing"));
  for (const auto& episode : episodes) {
    int t = 0;
    for (const auto& step : episode.steps) {
      json record;
      record["episode"] = episode.episode_id;
      record["t"] = t++;
      record["image"] = encode_f32_array(step.obs.image);
      record["pc"] = encode_f32_array(step.obs.pointcloud.xyz);
      record["state"] = step.obs.state;
      record["action"] = step.action;
      record["instr"] = step.obs.instruction;
      record["done"] = step.done;
      record["success"] = step.success;
      out << record.dump() << '\n';
    }
  }
  if (!out) throw IoError(cat("dataset: write to ", path, " failed"));
  write_stats(compute_action_stats(episodes), stats_path_for(path));
}

std::vector<TrajectoryRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(cat("dataset: cannot open ", path));
  std::vector<TrajectoryRecord> episodes;
  std::string line;
  int line_no = 0;
  const char* field = "";
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json record = json::parse(line);
      field = "episode";
      const int episode_id = record.at("episode").get<int>();
      field = "t";
      const int t = record.at("t").get<int>();
      if (episodes.empty() || episodes.back().episode_id != episode_id) {
        if (t != 0) throw IoError("episode does not start at t = 0");
        episodes.emplace_back();
        episodes.back().episode_id = episode_id;
      } else if (t != static_cast<int>(episodes.back().steps.size())) {
        throw IoError("non-contiguous step index");
      }
      TrajectoryStep step;
      field = "image";
      step.obs.image = decode_f32_array(record.at("image").get<std::string>());
      field = "pc";
      step.obs.pointcloud.xyz = decode_f32_array(record.at("pc").get<std::string>());
      if (step.obs.pointcloud.xyz.size() % 3 != 0)
        throw IoError("point count not a multiple of 3");
      step.obs.pointcloud.count = static_cast<int>(step.obs.pointcloud.xyz.size() / 3);
      field = "state";
      step.obs.state = record.at("state").get<std::vector<double>>();
      field = "action";
      step.action = record.at("action").get<std::vector<double>>();
      field = "instr";
      step.obs.instruction = record.at("instr").get<std::vector<int>>();
      field = "done";
      step.done = record.at("done").get<bool>();
      field = "success";
      step.success = record.at("success").get<bool>();
      episodes.back().steps.push_back(std::move(step));
    } catch (const std::exception& e) {
      throw IoError(cat("dataset ", path, ": line ", line_no, ", field '",
                        field, "': ", e.what()));
    }
  }
  for (auto& ep : episodes)
    ep.success = !ep.steps.empty() && ep.steps.back().success;
  return episodes;
}

std::string stats_path_for(const std::string& dataset_path) {
  return dataset_path + ".stats.json";
}

ActionStats compute_action_stats(const std::vector<TrajectoryRecord>& episodes) {
  std::size_t dims = 0;
  for (const auto& ep : episodes)
    for (const auto& step : ep.steps) dims = std::max(dims, step.action.size());
  if (dims == 0) throw IoError("action stats: no actions in dataset");
  ActionStats stats;
  stats.p01.resize(dims);
  stats.p99.resize(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    std::vector<double> values;
    for (const auto& ep : episodes)
      for (const auto& step : ep.steps)
        if (d < step.action.size()) values.push_back(step.action[d]);
    std::sort(values.begin(), values.end());
    stats.p01[d] = percentile(values, 0.01);
    stats.p99[d] = percentile(values, 0.99);
  }
  return stats;
}

void write_stats(const ActionStats& stats, const std::string& path) {
  json j;
  j["action_p01"] = stats.p01;
  j["action_p99"] = stats.p99;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(cat("stats: cannot open ", path, " for writing"));
  out << j.dump(2) << '\n';
}

ActionStats read_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(cat("stats: cannot open ", path));
  json j;
  try {
    in >> j;
    ActionStats stats;
    stats.p01 = j.at("action_p01").get<std::vector<double>>();
    stats.p99 = j.at("action_p99").get<std::vector<double>>();
    if (stats.p01.size() != stats.p99.size()) throw IoError("percentile sizes differ");
    return stats;
  } catch (const std::exception& e) {
    throw IoError(cat("stats ", path, ": ", e.what()));
  }
}

std::vector<double> Normalizer::normalize(const std::vector<double>& action) const {
  if (action.size() != stats.p01.size())
    throw ShapeError("normalize: dimension mismatch with stats");
  std::vector<double> out(action.size());
  for (std::size_t d = 0; d < action.size(); ++d) {
    const double span = stats.p99[d] - stats.p01[d];
    if (span < 1e-12) {
      out[d] = 0.0;
    } else {
      out[d] = std::clamp(2.0 * (action[d] - stats.p01[d]) / span - 1.0, -1.0, 1.0);
    }
  }
  return out;
}

std::vector<double> Normalizer::denormalize(const std::vector<double>& normalized) const {
  if (normalized.size() != stats.p01.size())
    throw ShapeError("denormalize: dimension mismatch with stats");
  std::vector<double> out(normalized.size());
  for (std::size_t d = 0; d < normalized.size(); ++d) {
    const double span = stats.p99[d] - stats.p01[d];
    if (span < 1e-12) {
      out[d] = stats.p01[d];
    } else {
      out[d] = stats.p01[d] + (normalized[d] + 1.0) * span / 2.0;
    }
  }
  return out;
}

bool Normalizer::would_clip(const std::vector<double>& action) const {
  for (std::size_t d = 0; d < action.size(); ++d) {
    const double span = stats.p99[d] - stats.p01[d];
    if (span < 1e-12) continue;
    const double v = 2.0 * (action[d] - stats.p01[d]) / span - 1.0;
    if (v < -1.0 - 1e-12 || v > 1.0 + 1e-12) return true;
  }
  return false;
}

MixtureSampler::MixtureSampler(
    std::vector<const std::vector<TrajectoryRecord>*> datasets,
    std::vector<double> weights)
    : datasets_(std::move(datasets)) {
  if (datasets_.empty() || datasets_.size() != weights.size())
    throw ConfigError("mixture: datasets and weights must align and be non-empty");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw ConfigError("mixture: negative weight");
    if (weights[i] > 0.0 && datasets_[i]->empty())
      throw ConfigError(cat("mixture: dataset ", i, " has positive weight but no episodes"));
    total += weights[i];
    cumulative_.push_back(total);
  }
  if (total <= 0.0) throw ConfigError("mixture: weights sum to zero");
}

std::pair<int, int> MixtureSampler::draw_indices(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  std::size_t pick = cumulative_.size() - 1;
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    if (u < cumulative_[i]) {
      pick = i;
      break;
    }
  }
  const auto& ds = *datasets_[pick];
  const int episode = static_cast<int>(rng.uniform_int(ds.size()));
  return {static_cast<int>(pick), episode};
}

const TrajectoryRecord& MixtureSampler::draw(Rng& rng) const {
  const auto [ds, ep] = draw_indices(rng);
  return (*datasets_[static_cast<std::size_t>(ds)])[static_cast<std::size_t>(ep)];
}

}  // namespace dsvla
