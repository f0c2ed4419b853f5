#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Tensors are value-semantic handles over shared storage. When a Tape is
// active (TapeScope) and any input of an operation requires gradients, the
// operation records a backward closure; Tape::backward walks the recorded
// nodes in reverse. Leaf gradients accumulate across backward calls until
// zeroed; non-leaf gradients are reset at the start of each walk.
//
// Tape construction and backward are single-execution-context. Tensors with
// finalized values are safe for concurrent read-only use.

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "dsvla/error.hpp"
#include "dsvla/rng.hpp"

namespace dsvla {

struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // present iff requires_grad
  bool requires_grad = false;
  int node = -1;  // producing node on the active tape, -1 for leaves

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from(std::vector<double> values, std::vector<int> shape,
                     bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  std::size_t numel() const { return data ? data->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 0 : shape.back(); }

  double& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
  double at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
  double& at(int r, int c) {
    return (*data)[static_cast<std::size_t>(r) * cols() + c];
  }
  double at(int r, int c) const {
    return (*data)[static_cast<std::size_t>(r) * cols() + c];
  }

  double item() const;
  void zero_grad();
  void ensure_grad();

  // Same storage, no gradient tracking.
  Tensor detach() const;
  Tensor clone() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(const Tensor& out, std::function<void()> backward);
  // Whether this tape recorded the operation that produced t.
  bool produced(const Tensor& t) const;
  // Seeds d(loss)/d(loss) = 1 and propagates. Leaf grads accumulate.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class TapeScope;
  struct Node {
    Tensor out;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

// Activates a tape for the current scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace ops {

constexpr double kLayerNormEps = 1e-5;

Tensor matmul(const Tensor& a, const Tensor& b);
// a[M,N] * b[K,N]^T -> [M,K]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// x[M,N] + v[N] broadcast over rows
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);
Tensor softmax_lastdim(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor sum_all(const Tensor& x);
// Max over each consecutive group of `group` rows: [G*group, F] -> [G, F].
Tensor maxpool_rows(const Tensor& x, int group);
// Mean cross-entropy of logits rows `rows` against `targets` (same length),
// computed with a log-sum-exp; other rows are fully masked out.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& rows,
                          const std::vector<int>& targets);

}  // namespace ops

enum class OpKind {
  Matmul,
  Add,
  Mul,
  LayerNorm,
  SoftmaxLastdim,
  Gelu,
  EmbeddingLookup,
  ConcatLastdim,
  Slice,
};

struct PrimitiveArgs {
  int dim = 0;  // Slice: 0 = rows, 1 = cols
  int begin = 0;
  int end = 0;
  std::vector<int> ids;  // EmbeddingLookup
};

// Uniform entry point over the primitive set; validates inputs (shapes and
// finiteness) before dispatching.
Tensor primitive_forward(OpKind kind, const std::vector<Tensor>& inputs,
                         const PrimitiveArgs& args = {});

// Throws NumericError if any element is non-finite.
void check_finite(const Tensor& t, const char* context);

}  // namespace dsvla
