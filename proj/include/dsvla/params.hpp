#pragma once

// Named parameter tensors, the checkpoint container, and the finite
// difference gradient checker.
//
// Checkpoint container (binary, little-endian), stable format v1:
//   magic  "DSVLACKP"
//   u32    format version (1)
//   u32    tensor count
//   per tensor: u32 name_len, name bytes, u32 ndim, i32 dims..., f64 data...
//   u32    fast-set size, then names (u32 len + bytes) — the theta_f subset
//   u32    meta count, then (u32 len + name bytes, u64 value) pairs
// Used both for parameter checkpoints (empty meta) and full training state
// (optimizer moments under "adam.m."/"adam.v." plus step/rng meta).

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsvla/rng.hpp"
#include "dsvla/tensor.hpp"

namespace dsvla {

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::string> fast_names;
  std::vector<std::pair<std::string, std::uint64_t>> meta;

  void write(const std::string& path) const;
  static Checkpoint read(const std::string& path);

  const Tensor* find(const std::string& name) const;
  std::uint64_t meta_or(const std::string& name, std::uint64_t fallback) const;
};

// FNV-1a 64 over a file's bytes; used for manifest content hashes.
std::uint64_t content_hash_file(const std::string& path);

class ParamStore {
 public:
  // Inserts a parameter (gradient tracking forced on). Duplicate names are
  // an error. Returns the stored handle.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& add_randn(const std::string& name, std::vector<int> shape, Rng& rng,
                    double stddev);
  Tensor& add_zeros(const std::string& name, std::vector<int> shape);
  Tensor& add_full(const std::string& name, std::vector<int> shape,
                   double value);

  bool has(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t total_scalars() const;

  // theta_f: the System-1 execution subset. Marked names must exist.
  void mark_fast(const std::string& name);
  bool is_fast(const std::string& name) const;
  const std::set<std::string>& fast_set() const { return fast_; }

  void zero_grads();

  // Version tag; bumped on every mutation of values (optimizer step, load).
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  void save(const std::string& path) const;
  // Replaces contents with the checkpoint's tensors (shape-checked against
  // nothing: the store is rebuilt) and bumps the version.
  void load(const std::string& path);
  // Copies values into existing parameters by name (shapes must match);
  // entries in the checkpoint that are not parameters are ignored. Bumps
  // the version.
  void assign_values(const Checkpoint& ckpt);

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> params_;
  std::set<std::string> fast_;
  std::uint64_t version_ = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  std::string worst_param;
};

// Central-difference check of d f / d theta over >= min_coords coordinates
// sampled deterministically across every parameter. f must be a
// deterministic scalar function of the parameters; this is verified by two
// baseline evaluations. Relative error per coordinate is
// |analytic - central| / max(|analytic|, |central|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor()>& f, ParamStore& params,
                           double eps, int min_coords = 200);

}  // namespace dsvla
