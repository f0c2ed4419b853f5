#include "dsvla/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dsvla/error.hpp"

namespace dsvla {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string token;
  std::istringstream in(s);
  while (std::getline(in, token, sep)) {
    token = trim(token);
    if (!token.empty()) parts.push_back(token);
  }
  return parts;
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(cat("config: key '", key, "': '", value, "' is not an integer"));
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(cat("config: key '", key, "': '", value,
                          "' is not an unsigned integer"));
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(cat("config: key '", key, "': '", value, "' is not a number"));
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& part : split(value, ',')) out.push_back(parse_int(key, part));
  if (out.empty()) throw ConfigError(cat("config: key '", key, "': empty list"));
  return out;
}

std::vector<double> parse_double_list(const std::string& key,
                                      const std::string& value) {
  std::vector<double> out;
  for (const auto& part : split(value, ',')) out.push_back(parse_double(key, part));
  return out;
}

ModalitySet parse_modalities(const std::string& key, const std::string& value) {
  ModalitySet set;
  if (trim(value) == "none") return set;
  for (const auto& name : split(value, ',')) {
    if (name == "image") {
      set.image = true;
    } else if (name == "pointcloud") {
      set.pointcloud = true;
    } else if (name == "state") {
      set.state = true;
    } else {
      throw ConfigError(cat("config: key '", key, "': unknown modality '", name,
                            "' (expected image, pointcloud, state or none)"));
    }
  }
  return set;
}

std::string modalities_to_string(const ModalitySet& set) {
  std::vector<std::string> parts;
  if (set.image) parts.push_back("image");
  if (set.pointcloud) parts.push_back("pointcloud");
  if (set.state) parts.push_back("state");
  if (parts.empty()) return "none";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "," + parts[i];
  return out;
}

template <typename T>
std::string list_to_string(const std::vector<T>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ',';
    out << values[i];
  }
  return out.str();
}

std::vector<std::string> parse_string_list(const std::string& value) {
  return split(value, ',');
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(cat("config: cannot open ", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, std::map<std::string, Setter>> schema{
      {"backbone",
       {{"n_blocks", [&](auto k, auto v) { cfg.n_blocks = parse_int(k, v); }},
        {"k_shared", [&](auto k, auto v) { cfg.k_shared = parse_int(k, v); }},
        {"d_model", [&](auto k, auto v) { cfg.d_model = parse_int(k, v); }},
        {"n_heads", [&](auto k, auto v) { cfg.n_heads = parse_int(k, v); }},
        {"max_seq_len", [&](auto k, auto v) { cfg.max_seq_len = parse_int(k, v); }}}},
      {"vocab",
       {{"bins", [&](auto k, auto v) { cfg.bins = parse_int(k, v); }},
        {"vocab_size", [&](auto k, auto v) { cfg.vocab_size = parse_int(k, v); }}}},
      {"image",
       {{"side", [&](auto k, auto v) { cfg.image_side = parse_int(k, v); }},
        {"patch", [&](auto k, auto v) { cfg.patch_side = parse_int(k, v); }},
        {"branch_dim", [&](auto k, auto v) { cfg.branch_dim = parse_int(k, v); }}}},
      {"pointcloud",
       {{"points", [&](auto k, auto v) { cfg.pc_points = parse_int(k, v); }},
        {"chain", [&](auto k, auto v) { cfg.pc_chain = parse_int_list(k, v); }},
        {"knn_k", [&](auto k, auto v) { cfg.knn_k = parse_int(k, v); }}}},
      {"model",
       {{"horizon", [&](auto k, auto v) { cfg.horizon = parse_int(k, v); }},
        {"action_dim", [&](auto k, auto v) { cfg.action_dim = parse_int(k, v); }},
        {"s2_inputs", [&](auto k, auto v) { cfg.s2_inputs = parse_modalities(k, v); }},
        {"s1_inputs", [&](auto k, auto v) { cfg.s1_inputs = parse_modalities(k, v); }},
        {"model_seed", [&](auto k, auto v) { cfg.model_seed = parse_u64(k, v); }}}},
      {"diffusion",
       {{"steps", [&](auto k, auto v) { cfg.diffusion_steps = parse_int(k, v); }},
        {"beta_min", [&](auto k, auto v) { cfg.beta_min = parse_double(k, v); }},
        {"beta_max", [&](auto k, auto v) { cfg.beta_max = parse_double(k, v); }},
        {"sampler_steps", [&](auto k, auto v) { cfg.sampler_steps = parse_int(k, v); }}}},
      {"env",
       {{"max_episode_steps",
         [&](auto k, auto v) { cfg.max_episode_steps = parse_int(k, v); }}}},
      {"train",
       {{"steps", [&](auto k, auto v) { cfg.train_steps = parse_int(k, v); }},
        {"batch_size", [&](auto k, auto v) { cfg.batch_size = parse_int(k, v); }},
        {"lr", [&](auto k, auto v) { cfg.lr = parse_double(k, v); }},
        {"lr_schedule", [&](auto, auto v) { cfg.lr_schedule = trim(v); }},
        {"grad_clip", [&](auto k, auto v) { cfg.grad_clip = parse_double(k, v); }},
        {"fast_draws", [&](auto k, auto v) { cfg.fast_draws = parse_int(k, v); }},
        {"ratio_n", [&](auto k, auto v) { cfg.ratio_n = parse_int(k, v); }},
        {"w_fast", [&](auto k, auto v) { cfg.w_fast = parse_double(k, v); }},
        {"w_slow", [&](auto k, auto v) { cfg.w_slow = parse_double(k, v); }},
        {"seed", [&](auto k, auto v) { cfg.train_seed = parse_u64(k, v); }},
        {"checkpoint_every",
         [&](auto k, auto v) { cfg.checkpoint_every = parse_int(k, v); }},
        {"data", [&](auto, auto v) { cfg.data_paths = parse_string_list(v); }},
        {"data_weights",
         [&](auto k, auto v) { cfg.data_weights = parse_double_list(k, v); }},
        {"out_dir", [&](auto, auto v) { cfg.out_dir = trim(v); }}}},
      {"eval",
       {{"rollouts", [&](auto k, auto v) { cfg.eval_rollouts = parse_int(k, v); }},
        {"repeats", [&](auto k, auto v) { cfg.eval_repeats = parse_int(k, v); }},
        {"seed", [&](auto k, auto v) { cfg.eval_seed = parse_u64(k, v); }}}},
      {"bench",
       {{"ratios", [&](auto k, auto v) { cfg.bench_ratios = parse_int_list(k, v); }},
        {"chunks", [&](auto k, auto v) { cfg.bench_chunks = parse_int_list(k, v); }},
        {"trials", [&](auto k, auto v) { cfg.bench_trials = parse_int(k, v); }}}},
  };

  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(cat("config line ", line_no, ": malformed section header"));
      section = trim(line.substr(1, line.size() - 2));
      if (schema.count(section) == 0)
        throw ConfigError(cat("config line ", line_no, ": unknown section [",
                              section, "]"));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(cat("config line ", line_no, ": expected key = value"));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(cat("config line ", line_no, ": key '", key,
                            "' outside any section"));
    const auto& keys = schema.at(section);
    const auto it = keys.find(key);
    if (it == keys.end())
      throw ConfigError(cat("config line ", line_no, ": unknown key '", key,
                            "' in section [", section, "]"));
    it->second(section + "." + key, value);
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  policy_config();  // runs every sub-config validation
  if (train_steps < 0 || batch_size < 1 || ratio_n < 1 || fast_draws < 1)
    throw ConfigError("config: bad train steps/batch/ratio/draws");
  if (lr_schedule != "constant" && lr_schedule != "cosine")
    throw ConfigError(cat("config: unknown lr_schedule '", lr_schedule, "'"));
  if (grad_clip < 0.0) throw ConfigError("config: grad_clip must be >= 0");
  if (w_fast < 0.0 || w_slow < 0.0)
    throw ConfigError("config: loss weights must be non-negative");
  if (sampler_steps < 1 || sampler_steps > diffusion_steps)
    throw ConfigError(cat("config: sampler_steps ", sampler_steps,
                          " outside [1, ", diffusion_steps, "]"));
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw ConfigError("config: need 0 < beta_min <= beta_max < 1");
  if (max_episode_steps < 1) throw ConfigError("config: bad max_episode_steps");
  if (eval_rollouts < 1 || eval_repeats < 1)
    throw ConfigError("config: bad eval rollouts/repeats");
  if (bench_trials < 1) throw ConfigError("config: bad bench trials");
  for (int n : bench_ratios)
    if (n < 1) throw ConfigError("config: bench ratios must be >= 1");
  for (int h : bench_chunks)
    if (h < 1) throw ConfigError("config: bench chunks must be >= 1");
  if (!data_weights.empty() && data_weights.size() != data_paths.size())
    throw ConfigError("config: data_weights must match data paths");
  if (static_cast<std::size_t>(2 * (pc_points / 2)) != static_cast<std::size_t>(pc_points))
    throw ConfigError("config: pointcloud points must be even");
}

PolicyConfig RunConfig::policy_config() const {
  PolicyConfig cfg;
  cfg.backbone.n_blocks = n_blocks;
  cfg.backbone.k_shared = k_shared;
  cfg.backbone.d_model = d_model;
  cfg.backbone.n_heads = n_heads;
  cfg.backbone.max_seq_len = max_seq_len;
  cfg.vocab.bins = bins;
  cfg.vocab.vocab_size = vocab_size;
  cfg.encoder.image_side = image_side;
  cfg.encoder.patch_side = patch_side;
  cfg.encoder.branch_dim = branch_dim;
  cfg.encoder.pc_points = pc_points;
  cfg.encoder.pc_chain = pc_chain;
  cfg.encoder.knn_k = knn_k;
  cfg.encoder.action_dim = action_dim;
  cfg.horizon = horizon;
  cfg.diffusion_steps = diffusion_steps;
  cfg.beta_min = beta_min;
  cfg.beta_max = beta_max;
  cfg.s2_inputs = s2_inputs;
  cfg.s1_inputs = s1_inputs;
  cfg.finalize();
  return cfg;
}

EnvConfig RunConfig::env_config() const {
  EnvConfig cfg;
  cfg.image_side = image_side;
  cfg.pc_ring_points = pc_points / 2;
  cfg.max_episode_steps = max_episode_steps;
  cfg.vocab.bins = bins;
  cfg.vocab.vocab_size = vocab_size;
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.steps = train_steps;
  cfg.batch_size = batch_size;
  cfg.lr = lr;
  cfg.lr_schedule = lr_schedule;
  cfg.grad_clip = grad_clip;
  cfg.fast_draws = fast_draws;
  cfg.ratio_n = ratio_n;
  cfg.w_fast = w_fast;
  cfg.w_slow = w_slow;
  cfg.seed = train_seed;
  cfg.checkpoint_every = checkpoint_every;
  return cfg;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  out << "[backbone]\n"
      << "n_blocks = " << n_blocks << "\n"
      << "k_shared = " << k_shared << "\n"
      << "d_model = " << d_model << "\n"
      << "n_heads = " << n_heads << "\n"
      << "max_seq_len = " << max_seq_len << "\n\n";
  out << "[vocab]\n"
      << "bins = " << bins << "\n"
      << "vocab_size = " << vocab_size << "\n\n";
  out << "[image]\n"
      << "side = " << image_side << "\n"
      << "patch = " << patch_side << "\n"
      << "branch_dim = " << branch_dim << "\n\n";
  out << "[pointcloud]\n"
      << "points = " << pc_points << "\n"
      << "chain = " << list_to_string(pc_chain) << "\n"
      << "knn_k = " << knn_k << "\n\n";
  out << "[model]\n"
      << "horizon = " << horizon << "\n"
      << "action_dim = " << action_dim << "\n"
      << "s2_inputs = " << modalities_to_string(s2_inputs) << "\n"
      << "s1_inputs = " << modalities_to_string(s1_inputs) << "\n"
      << "model_seed = " << model_seed << "\n\n";
  out << "[diffusion]\n"
      << "steps = " << diffusion_steps << "\n"
      << "beta_min = " << beta_min << "\n"
      << "beta_max = " << beta_max << "\n"
      << "sampler_steps = " << sampler_steps << "\n\n";
  out << "[env]\n"
      << "max_episode_steps = " << max_episode_steps << "\n\n";
  out << "[train]\n"
      << "steps = " << train_steps << "\n"
      << "batch_size = " << batch_size << "\n"
      << "lr = " << lr << "\n"
      << "lr_schedule = " << lr_schedule << "\n"
      << "grad_clip = " << grad_clip << "\n"
      << "fast_draws = " << fast_draws << "\n"
      << "ratio_n = " << ratio_n << "\n"
      << "w_fast = " << w_fast << "\n"
      << "w_slow = " << w_slow << "\n"
      << "seed = " << train_seed << "\n"
      << "checkpoint_every = " << checkpoint_every << "\n";
  if (!data_paths.empty()) {
    out << "data = ";
    for (std::size_t i = 0; i < data_paths.size(); ++i)
      out << (i > 0 ? "," : "") << data_paths[i];
    out << "\n";
  }
  if (!data_weights.empty())
    out << "data_weights = " << list_to_string(data_weights) << "\n";
  out << "out_dir = " << out_dir << "\n\n";
  out << "[eval]\n"
      << "rollouts = " << eval_rollouts << "\n"
      << "repeats = " << eval_repeats << "\n"
      << "seed = " << eval_seed << "\n\n";
  out << "[bench]\n"
      << "ratios = " << list_to_string(bench_ratios) << "\n"
      << "chunks = " << list_to_string(bench_chunks) << "\n"
      << "trials = " << bench_trials << "\n";
  return out.str();
}

}  // namespace dsvla
