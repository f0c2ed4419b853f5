#include "dsvla/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dsvla {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'V', 'L', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(cat("checkpoint ", path, ": truncated file"));
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
  const auto len = read_pod<std::uint32_t>(in, path);
  if (len > (1u << 20)) throw IoError(cat("checkpoint ", path, ": absurd string length"));
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError(cat("checkpoint ", path, ": truncated string"));
  return s;
}

}  // namespace

void Checkpoint::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(cat("checkpoint: cannot open ", path, " for writing"));
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kFormatVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data->data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(fast_names.size()));
  for (const auto& n : fast_names) write_string(out, n);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [name, v] : meta) {
    write_string(out, name);
    write_pod<std::uint64_t>(out, v);
  }
  if (!out) throw IoError(cat("checkpoint: write to ", path, " failed"));
}

Checkpoint Checkpoint::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("checkpoint: cannot open ", path));
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(cat("checkpoint ", path, ": bad magic"));
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kFormatVersion)
    throw IoError(cat("checkpoint ", path, ": unsupported format version ",
                      version));
  Checkpoint ckpt;
  const auto n_tensors = read_pod<std::uint32_t>(in, path);
  ckpt.tensors.reserve(n_tensors);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = read_string(in, path);
    const auto ndim = read_pod<std::uint32_t>(in, path);
    if (ndim > 8) throw IoError(cat("checkpoint ", path, ": absurd rank"));
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = read_pod<std::int32_t>(in, path);
      if (d <= 0) throw IoError(cat("checkpoint ", path, ": bad dimension"));
      numel *= static_cast<std::size_t>(d);
    }
    std::vector<double> values(numel);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw IoError(cat("checkpoint ", path, ": truncated tensor ", name));
    ckpt.tensors.emplace_back(std::move(name),
                              Tensor::from(std::move(values), std::move(shape)));
  }
  const auto n_fast = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_fast; ++i)
    ckpt.fast_names.push_back(read_string(in, path));
  const auto n_meta = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string name = read_string(in, path);
    ckpt.meta.emplace_back(std::move(name), read_pod<std::uint64_t>(in, path));
  }
  return ckpt;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::uint64_t Checkpoint::meta_or(const std::string& name,
                                  std::uint64_t fallback) const {
  for (const auto& [n, v] : meta)
    if (n == name) return v;
  return fallback;
}

std::uint64_t content_hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("hash: cannot open ", path));
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!in) break;
  }
  return h;
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name) != 0)
    throw ConfigError(cat("parameter '", name, "' already exists"));
  value.requires_grad = true;
  value.ensure_grad();
  value.node = -1;
  names_.push_back(name);
  auto [it, _] = params_.emplace(name, std::move(value));
  return it->second;
}

Tensor& ParamStore::add_randn(const std::string& name, std::vector<int> shape,
                              Rng& rng, double stddev) {
  return add(name, Tensor::randn(std::move(shape), rng, stddev));
}

Tensor& ParamStore::add_zeros(const std::string& name, std::vector<int> shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor& ParamStore::add_full(const std::string& name, std::vector<int> shape,
                             double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) != 0;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ConfigError(cat("unknown parameter '", name, "'"));
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ConfigError(cat("unknown parameter '", name, "'"));
  return it->second;
}

std::size_t ParamStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& name : names_) n += params_.at(name).numel();
  return n;
}

void ParamStore::mark_fast(const std::string& name) {
  if (!has(name))
    throw ConfigError(cat("fast-set name '", name, "' is not a parameter"));
  fast_.insert(name);
}

bool ParamStore::is_fast(const std::string& name) const {
  return fast_.count(name) != 0;
}

void ParamStore::zero_grads() {
  for (const auto& name : names_) params_.at(name).zero_grad();
}

void ParamStore::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.tensors.reserve(names_.size());
  for (const auto& name : names_)
    ckpt.tensors.emplace_back(name, params_.at(name));
  ckpt.fast_names.assign(fast_.begin(), fast_.end());
  ckpt.write(path);
}

void ParamStore::load(const std::string& path) {
  Checkpoint ckpt = Checkpoint::read(path);
  names_.clear();
  params_.clear();
  fast_.clear();
  for (auto& [name, t] : ckpt.tensors) {
    check_finite(t, "checkpoint parameter");
    add(name, std::move(t));
  }
  for (const auto& n : ckpt.fast_names) mark_fast(n);
  bump_version();
}

void ParamStore::assign_values(const Checkpoint& ckpt) {
  for (const auto& name : names_) {
    const Tensor* src = ckpt.find(name);
    if (src == nullptr)
      throw ConfigError(cat("checkpoint: missing parameter '", name, "'"));
    Tensor& dst = params_.at(name);
    if (src->shape != dst.shape)
      throw ConfigError(cat("checkpoint: shape mismatch for '", name, "'"));
    check_finite(*src, "checkpoint parameter");
    *dst.data = *src->data;
  }
  bump_version();
}

GradCheckResult grad_check(const std::function<Tensor()>& f, ParamStore& params,
                           double eps, int min_coords) {
  // Analytic pass.
  params.zero_grads();
  double base;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    base = loss.item();
    // A loss that never touched the tape is constant in the parameters;
    // its analytic gradient is the zero vector left by zero_grads().
    if (tape.produced(loss)) tape.backward(loss);
  }
  // Determinism gate: a second baseline evaluation must match bit-for-bit.
  {
    Tensor again = f();
    if (again.item() != base)
      throw NumericError("grad_check: f is not deterministic (baseline evaluations differ)");
  }
  std::vector<std::pair<std::string, std::vector<double>>> analytic;
  for (const auto& name : params.names())
    analytic.emplace_back(name, *params.get(name).grad);

  const int n_params = static_cast<int>(params.names().size());
  const int per_param = std::max(1, (min_coords + n_params - 1) / n_params);

  GradCheckResult result;
  for (const auto& [name, grads] : analytic) {
    Tensor& p = params.get(name);
    const std::size_t n = p.numel();
    const std::size_t step = std::max<std::size_t>(1, n / static_cast<std::size_t>(per_param));
    for (std::size_t i = 0; i < n && result.coords_checked < min_coords + n_params * per_param;
         i += step) {
      double& slot = (*p.data)[i];
      const double saved = slot;
      slot = saved + eps;
      const double up = f().item();
      slot = saved - eps;
      const double down = f().item();
      slot = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grads[i];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
      }
    }
  }
  return result;
}

}  // namespace dsvla
