#include "dsvla/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "dsvla/kernels.hpp"

namespace dsvla {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError(cat("tensor: non-positive dimension ", d));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(cat(what, ": expected rank-2 tensor, got rank ", t.rank()));
}

// Rank-1 tensors are treated as a single row where ops are row-wise.
std::pair<int, int> as_rows(const Tensor& t, const char* what) {
  if (t.rank() == 1) return {1, t.shape[0]};
  if (t.rank() == 2) return {t.shape[0], t.shape[1]};
  throw ShapeError(cat(what, ": expected rank 1 or 2, got rank ", t.rank()));
}

template <typename... Ts>
bool wants_grad(const Ts&... ts) {
  return g_active_tape != nullptr && (ts.requires_grad || ...);
}

template <typename F>
void track(const char* name, Tensor& out, bool needs, F&& make_backward) {
  check_finite(out, name);
  if (!needs) return;
  out.requires_grad = true;
  out.ensure_grad();
  g_active_tape->record(out, make_backward());
}

}  // namespace

void check_finite(const Tensor& t, const char* context) {
  const auto& v = *t.data;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw NumericError(cat(context, ": non-finite value at flat index ", i));
  }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  const std::size_t n = shape_numel(shape);
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(n, 0.0);
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(std::vector<double> values, std::vector<int> shape,
                    bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (n != values.size())
    throw ShapeError(cat("tensor: shape wants ", n, " values, got ",
                         values.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  check_finite(t, "tensor::from");
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : *t.data) v = rng.normal() * stddev;
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError(cat("item(): tensor has ", numel(), " elements"));
  return (*data)[0];
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  t.requires_grad = false;
  t.node = -1;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  t.requires_grad = false;
  t.node = -1;
  return t;
}

Tape* Tape::current() { return g_active_tape; }

void Tape::record(const Tensor& out, std::function<void()> backward) {
  Node node;
  node.out = out;
  node.out.node = static_cast<int>(nodes_.size());
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
}

bool Tape::produced(const Tensor& t) const {
  for (const auto& node : nodes_)
    if (node.out.data == t.data) return true;
  return false;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError(cat("backward: loss must be scalar, has ", loss.numel(),
                         " elements"));
  // Find the node that produced this tensor (storage identity).
  int start = -1;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[static_cast<std::size_t>(i)].out.data == loss.data) {
      start = i;
      break;
    }
  }
  if (start < 0)
    throw NumericError(
        "backward: loss is not a recorded operation on this tape "
        "(disconnected from parameters)");
  // Non-leaf grads are per-walk scratch; leaf grads accumulate across calls.
  for (auto& node : nodes_) node.out.zero_grad();
  (*nodes_[static_cast<std::size_t>(start)].out.grad)[0] = 1.0;
  for (int i = start; i >= 0; --i) nodes_[static_cast<std::size_t>(i)].backward();
}

void Tape::clear() { nodes_.clear(); }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  if (a.shape[1] != b.shape[0])
    throw ShapeError(cat("matmul: inner dimensions differ (", a.shape[0], "x",
                         a.shape[1], " * ", b.shape[0], "x", b.shape[1], ")"));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  kernels::active().matmul_nn(out.data->data(), a.data->data(),
                              b.data->data(), m, k, n, false);
  track("matmul", out, wants_grad(a, b), [&] {
    return [a, b, out, m, k, n] {
      const double* g = out.grad->data();
      if (a.requires_grad)
        kernels::active().matmul_nt(a.grad->data(), g, b.data->data(), m, n, k,
                                    true);
      if (b.requires_grad)
        kernels::active().matmul_tn(b.grad->data(), a.data->data(), g, m, k, n,
                                    true);
    };
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt lhs");
  require_rank2(b, "matmul_nt rhs");
  if (a.shape[1] != b.shape[1])
    throw ShapeError(cat("matmul_nt: contraction dims differ (", a.shape[1],
                         " vs ", b.shape[1], ")"));
  const int m = a.shape[0], n = a.shape[1], k = b.shape[0];
  Tensor out = Tensor::zeros({m, k});
  kernels::active().matmul_nt(out.data->data(), a.data->data(),
                              b.data->data(), m, n, k, false);
  track("matmul_nt", out, wants_grad(a, b), [&] {
    return [a, b, out, m, n, k] {
      const double* g = out.grad->data();
      if (a.requires_grad)
        kernels::active().matmul_nn(a.grad->data(), g, b.data->data(), m, k, n,
                                    true);
      if (b.requires_grad)
        kernels::active().matmul_tn(b.grad->data(), g, a.data->data(), m, k, n,
                                    true);
    };
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("add: shapes differ");
  Tensor out;
  out.shape = a.shape;
  out.data = std::make_shared<std::vector<double>>(a.numel());
  kernels::active().add(out.data->data(), a.data->data(), b.data->data(),
                        a.numel());
  track("add", out, wants_grad(a, b), [&] {
    return [a, b, out] {
      const double* g = out.grad->data();
      if (a.requires_grad)
        kernels::active().axpy(a.grad->data(), 1.0, g, out.numel());
      if (b.requires_grad)
        kernels::active().axpy(b.grad->data(), 1.0, g, out.numel());
    };
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  const auto [m, n] = as_rows(x, "add_rowvec");
  if (v.rank() != 1 || v.shape[0] != n)
    throw ShapeError(cat("add_rowvec: vector length must be ", n));
  Tensor out = Tensor::zeros(x.shape);
  for (int i = 0; i < m; ++i)
    kernels::active().add(out.data->data() + static_cast<std::size_t>(i) * n,
                          x.data->data() + static_cast<std::size_t>(i) * n,
                          v.data->data(), static_cast<std::size_t>(n));
  track("add_rowvec", out, wants_grad(x, v), [&] {
    return [x, v, out, m = m, n = n] {
      const double* g = out.grad->data();
      if (x.requires_grad)
        kernels::active().axpy(x.grad->data(), 1.0, g, out.numel());
      if (v.requires_grad) {
        double* gv = v.grad->data();
        for (int i = 0; i < m; ++i)
          kernels::active().axpy(gv, 1.0, g + static_cast<std::size_t>(i) * n,
                                 static_cast<std::size_t>(n));
      }
    };
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw ShapeError("sub: shapes differ");
  Tensor out;
  out.shape = a.shape;
  out.data = std::make_shared<std::vector<double>>(a.numel());
  kernels::active().sub(out.data->data(), a.data->data(), b.data->data(),
                        a.numel());
  track("sub", out, wants_grad(a, b), [&] {
    return [a, b, out] {
      const double* g = out.grad->data();
      if (a.requires_grad)
        kernels::active().axpy(a.grad->data(), 1.0, g, out.numel());
      if (b.requires_grad)
        kernels::active().axpy(b.grad->data(), -1.0, g, out.numel());
    };
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw ShapeError("mul: shapes differ");
  Tensor out;
  out.shape = a.shape;
  out.data = std::make_shared<std::vector<double>>(a.numel());
  kernels::active().mul(out.data->data(), a.data->data(), b.data->data(),
                        a.numel());
  track("mul", out, wants_grad(a, b), [&] {
    return [a, b, out] {
      const std::size_t n = out.numel();
      const double* g = out.grad->data();
      if (a.requires_grad) {
        double* ga = a.grad->data();
        const double* bv = b.data->data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad) {
        double* gb = b.grad->data();
        const double* av = a.data->data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
      }
    };
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  Tensor out;
  out.shape = x.shape;
  out.data = std::make_shared<std::vector<double>>(x.numel());
  kernels::active().scale(out.data->data(), c, x.data->data(), x.numel());
  track("scale", out, wants_grad(x), [&] {
    return [x, out, c] {
      if (x.requires_grad)
        kernels::active().axpy(x.grad->data(), c, out.grad->data(),
                               out.numel());
    };
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const auto [m, n] = as_rows(x, "layer_norm");
  if (gamma.rank() != 1 || gamma.shape[0] != n)
    throw ShapeError(cat("layer_norm: gamma length must be ", n));
  if (beta.rank() != 1 || beta.shape[0] != n)
    throw ShapeError(cat("layer_norm: beta length must be ", n));
  Tensor out = Tensor::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  const double* xd = x.data->data();
  const double* gd = gamma.data->data();
  const double* bd = beta.data->data();
  double* od = out.data->data();
  for (int i = 0; i < m; ++i) {
    const double* row = xd + static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      od[static_cast<std::size_t>(i) * n + j] = gd[j] * xh + bd[j];
    }
  }
  track("layer_norm", out, wants_grad(x, gamma, beta), [&] {
    return [x, gamma, beta, out, xhat, inv_std, m = m, n = n] {
      const double* g = out.grad->data();
      const double* xh = xhat->data();
      const double* gd = gamma.data->data();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        if (gamma.requires_grad) {
          double* gg = gamma.grad->data();
          for (int j = 0; j < n; ++j) gg[j] += g[off + j] * xh[off + j];
        }
        if (beta.requires_grad) {
          double* gb = beta.grad->data();
          for (int j = 0; j < n; ++j) gb[j] += g[off + j];
        }
        if (x.requires_grad) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (int j = 0; j < n; ++j) {
            const double d = g[off + j] * gd[j];
            sum_d += d;
            sum_dx += d * xh[off + j];
          }
          const double is = (*inv_std)[static_cast<std::size_t>(i)];
          double* gx = x.grad->data();
          for (int j = 0; j < n; ++j) {
            const double d = g[off + j] * gd[j];
            gx[off + j] += (d - sum_d / n - xh[off + j] * sum_dx / n) * is;
          }
        }
      }
    };
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  const auto [m, n] = as_rows(x, "softmax_lastdim");
  Tensor out = Tensor::zeros(x.shape);
  const double* xd = x.data->data();
  double* od = out.data->data();
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double mx = xd[off];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xd[off + j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(xd[off + j] - mx);
      od[off + j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) od[off + j] *= inv;
  }
  track("softmax_lastdim", out, wants_grad(x), [&] {
    return [x, out, m = m, n = n] {
      if (!x.requires_grad) return;
      const double* g = out.grad->data();
      const double* p = out.data->data();
      double* gx = x.grad->data();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[off + j] * p[off + j];
        for (int j = 0; j < n; ++j)
          gx[off + j] += p[off + j] * (g[off + j] - dot);
      }
    };
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  // tanh approximation: 0.5 x (1 + tanh(c0 (x + c1 x^3)))
  constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c1 = 0.044715;
  Tensor out;
  out.shape = x.shape;
  out.data = std::make_shared<std::vector<double>>(x.numel());
  const double* xd = x.data->data();
  double* od = out.data->data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = xd[i];
    od[i] = 0.5 * v * (1.0 + std::tanh(c0 * (v + c1 * v * v * v)));
  }
  track("gelu", out, wants_grad(x), [&] {
    return [x, out] {
      if (!x.requires_grad) return;
      const double* g = out.grad->data();
      const double* xd = x.data->data();
      double* gx = x.grad->data();
      for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = xd[i];
        const double t = std::tanh(c0 * (v + c1 * v * v * v));
        const double du = c0 * (1.0 + 3.0 * c1 * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      }
    };
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embedding_lookup table");
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const int v = table.shape[0], d = table.shape[1];
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ShapeError(cat("embedding_lookup: id ", id, " outside vocab ", v));
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data->data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data->data() + i * d);
  track("embedding_lookup", out, wants_grad(table), [&] {
    return [table, out, ids, d] {
      if (!table.requires_grad) return;
      double* gt = table.grad->data();
      const double* g = out.grad->data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        kernels::active().axpy(gt + static_cast<std::size_t>(ids[i]) * d, 1.0,
                               g + i * d, static_cast<std::size_t>(d));
    };
  });
  return out;
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  const int m = parts[0].rank() == 2 ? parts[0].shape[0] : 1;
  int total = 0;
  for (const Tensor& p : parts) {
    const auto [pm, pn] = as_rows(p, "concat_lastdim");
    if (pm != m) throw ShapeError("concat_lastdim: row counts differ");
    total += pn;
  }
  Tensor out = Tensor::zeros({m, total});
  int col = 0;
  for (const Tensor& p : parts) {
    const int pn = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy_n(p.data->data() + static_cast<std::size_t>(i) * pn, pn,
                  out.data->data() + static_cast<std::size_t>(i) * total + col);
    col += pn;
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || wants_grad(p);
  track("concat_lastdim", out, needs, [&] {
    return [parts, out, m, total] {
      const double* g = out.grad->data();
      int col = 0;
      for (const Tensor& p : parts) {
        const int pn = p.cols();
        if (p.requires_grad) {
          double* gp = p.grad->data();
          for (int i = 0; i < m; ++i)
            kernels::active().axpy(
                gp + static_cast<std::size_t>(i) * pn, 1.0,
                g + static_cast<std::size_t>(i) * total + col,
                static_cast<std::size_t>(pn));
        }
        col += pn;
      }
    };
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  require_rank2(parts[0], "concat_rows");
  const int n = parts[0].shape[1];
  int total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.shape[1] != n) throw ShapeError("concat_rows: column counts differ");
    total += p.shape[0];
  }
  Tensor out = Tensor::zeros({total, n});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data->data(), p.numel(), out.data->data() + off);
    off += p.numel();
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || wants_grad(p);
  track("concat_rows", out, needs, [&] {
    return [parts, out] {
      const double* g = out.grad->data();
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad)
          kernels::active().axpy(p.grad->data(), 1.0, g + off, p.numel());
        off += p.numel();
      }
    };
  });
  return out;
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  require_rank2(x, "slice_rows");
  if (begin < 0 || end > x.shape[0] || begin >= end)
    throw ShapeError(cat("slice_rows: bad range [", begin, ", ", end,
                         ") for ", x.shape[0], " rows"));
  const int n = x.shape[1];
  Tensor out = Tensor::zeros({end - begin, n});
  std::copy_n(x.data->data() + static_cast<std::size_t>(begin) * n,
              out.numel(), out.data->data());
  track("slice_rows", out, wants_grad(x), [&] {
    return [x, out, begin, n] {
      if (x.requires_grad)
        kernels::active().axpy(
            x.grad->data() + static_cast<std::size_t>(begin) * n, 1.0,
            out.grad->data(), out.numel());
    };
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
  require_rank2(x, "slice_cols");
  if (begin < 0 || end > x.shape[1] || begin >= end)
    throw ShapeError(cat("slice_cols: bad range [", begin, ", ", end,
                         ") for ", x.shape[1], " cols"));
  const int m = x.shape[0], n = x.shape[1], w = end - begin;
  Tensor out = Tensor::zeros({m, w});
  for (int i = 0; i < m; ++i)
    std::copy_n(x.data->data() + static_cast<std::size_t>(i) * n + begin, w,
                out.data->data() + static_cast<std::size_t>(i) * w);
  track("slice_cols", out, wants_grad(x), [&] {
    return [x, out, begin, m, n, w] {
      if (!x.requires_grad) return;
      const double* g = out.grad->data();
      double* gx = x.grad->data();
      for (int i = 0; i < m; ++i)
        kernels::active().axpy(gx + static_cast<std::size_t>(i) * n + begin,
                               1.0, g + static_cast<std::size_t>(i) * w,
                               static_cast<std::size_t>(w));
    };
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : *x.data) s += v;
  Tensor out = Tensor::scalar(s);
  track("sum_all", out, wants_grad(x), [&] {
    return [x, out] {
      if (!x.requires_grad) return;
      const double g = (*out.grad)[0];
      double* gx = x.grad->data();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
    };
  });
  return out;
}

Tensor maxpool_rows(const Tensor& x, int group) {
  require_rank2(x, "maxpool_rows");
  if (group < 1 || x.shape[0] % group != 0)
    throw ShapeError(cat("maxpool_rows: ", x.shape[0],
                         " rows not divisible into groups of ", group));
  const int g_count = x.shape[0] / group, n = x.shape[1];
  Tensor out = Tensor::zeros({g_count, n});
  auto argmax = std::make_shared<std::vector<int>>(out.numel());
  const double* xd = x.data->data();
  double* od = out.data->data();
  for (int gi = 0; gi < g_count; ++gi) {
    for (int j = 0; j < n; ++j) {
      int best = gi * group;
      double bv = xd[static_cast<std::size_t>(best) * n + j];
      for (int r = 1; r < group; ++r) {
        const double v = xd[static_cast<std::size_t>(gi * group + r) * n + j];
        if (v > bv) {
          bv = v;
          best = gi * group + r;
        }
      }
      od[static_cast<std::size_t>(gi) * n + j] = bv;
      (*argmax)[static_cast<std::size_t>(gi) * n + j] = best;
    }
  }
  track("maxpool_rows", out, wants_grad(x), [&] {
    return [x, out, argmax, n] {
      if (!x.requires_grad) return;
      const double* g = out.grad->data();
      double* gx = x.grad->data();
      for (std::size_t i = 0; i < out.numel(); ++i) {
        const int src = (*argmax)[i];
        gx[static_cast<std::size_t>(src) * n + static_cast<int>(i % n)] += g[i];
      }
    };
  });
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& rows,
                          const std::vector<int>& targets) {
  require_rank2(logits, "cross_entropy_rows");
  if (rows.empty() || rows.size() != targets.size())
    throw ShapeError("cross_entropy_rows: rows/targets must be non-empty and aligned");
  const int m = logits.shape[0], v = logits.shape[1];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m)
      throw ShapeError(cat("cross_entropy_rows: row ", rows[i], " outside ", m));
    if (targets[i] < 0 || targets[i] >= v)
      throw ShapeError(cat("cross_entropy_rows: target ", targets[i],
                           " outside vocab ", v));
  }
  const double* ld = logits.data->data();
  auto probs =
      std::make_shared<std::vector<double>>(rows.size() * static_cast<std::size_t>(v));
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* row = ld + static_cast<std::size_t>(rows[i]) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[i * v + j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < v; ++j) (*probs)[i * v + j] *= inv;
    total += (mx + std::log(sum)) - row[targets[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(rows.size()));
  track("cross_entropy_rows", out, wants_grad(logits), [&] {
    return [logits, out, probs, rows, targets, v] {
      if (!logits.requires_grad) return;
      const double g = (*out.grad)[0] / static_cast<double>(rows.size());
      double* gl = logits.grad->data();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double* grow = gl + static_cast<std::size_t>(rows[i]) * v;
        const double* p = probs->data() + i * v;
        for (int j = 0; j < v; ++j) grow[j] += g * p[j];
        grow[targets[i]] -= g;
      }
    };
  });
  return out;
}

}  // namespace ops

Tensor primitive_forward(OpKind kind, const std::vector<Tensor>& inputs,
                         const PrimitiveArgs& args) {
  auto expect = [&](std::size_t n, const char* name) {
    if (inputs.size() != n)
      throw ShapeError(cat(name, ": expected ", n, " inputs, got ",
                           inputs.size()));
  };
  for (const Tensor& t : inputs) check_finite(t, "primitive_forward input");
  switch (kind) {
    case OpKind::Matmul:
      expect(2, "matmul");
      return ops::matmul(inputs[0], inputs[1]);
    case OpKind::Add:
      expect(2, "add");
      if (inputs[0].shape == inputs[1].shape)
        return ops::add(inputs[0], inputs[1]);
      if (inputs[1].rank() == 1 && inputs[1].shape[0] == inputs[0].cols())
        return ops::add_rowvec(inputs[0], inputs[1]);
      throw ShapeError("add: shapes neither equal nor row-broadcastable");
    case OpKind::Mul:
      expect(2, "mul");
      return ops::mul(inputs[0], inputs[1]);
    case OpKind::LayerNorm:
      expect(3, "layer_norm");
      return ops::layer_norm(inputs[0], inputs[1], inputs[2]);
    case OpKind::SoftmaxLastdim:
      expect(1, "softmax_lastdim");
      return ops::softmax_lastdim(inputs[0]);
    case OpKind::Gelu:
      expect(1, "gelu");
      return ops::gelu(inputs[0]);
    case OpKind::EmbeddingLookup:
      expect(1, "embedding_lookup");
      return ops::embedding_lookup(inputs[0], args.ids);
    case OpKind::ConcatLastdim:
      return ops::concat_lastdim(inputs);
    case OpKind::Slice:
      expect(1, "slice");
      if (args.dim == 0) return ops::slice_rows(inputs[0], args.begin, args.end);
      if (args.dim == 1) return ops::slice_cols(inputs[0], args.begin, args.end);
      throw ShapeError(cat("slice: dim must be 0 or 1, got ", args.dim));
  }
  throw ShapeError("primitive_forward: unknown op kind");
}

}  // namespace dsvla
