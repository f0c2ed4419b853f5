// Scalar reference kernels. These define the numeric ground truth: the SIMD
// variants must match them bit-for-bit (same contraction order, mul+add,
// no FMA). Keep them boring and auditable.

#include <cstddef>

#include "dsvla/kernels.hpp"

namespace dsvla::kernels {
namespace {

void matmul_nn_scalar(double* c, const double* a, const double* b, int m,
                      int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) {
        s += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = s;
    }
  }
}

void matmul_tn_scalar(double* c, const double* a, const double* b, int m,
                      int k, int n, bool accumulate) {
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[p * n + j] : 0.0;
      for (int i = 0; i < m; ++i) {
        s += a[i * k + p] * b[i * n + j];
      }
      c[p * n + j] = s;
    }
  }
}

void matmul_nt_scalar(double* c, const double* a, const double* b, int m,
                      int n, int k, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double s = accumulate ? c[i * k + p] : 0.0;
      for (int j = 0; j < n; ++j) {
        s += a[i * n + j] * b[p * n + j];
      }
      c[i * k + p] = s;
    }
  }
}

void add_scalar(double* out, const double* a, const double* b,
                std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(double* out, const double* a, const double* b,
                std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(double* out, const double* a, const double* b,
                std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_scalar(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double* out, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar",      matmul_nn_scalar, matmul_tn_scalar, matmul_nt_scalar,
      add_scalar,    sub_scalar,       mul_scalar,       axpy_scalar,
      scale_scalar,
  };
  return table;
}

}  // namespace dsvla::kernels
