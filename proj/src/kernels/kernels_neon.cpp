// NEON kernel variants (aarch64). Mirrors the AVX2 file with 2-wide
// float64x2_t lanes; same no-FMA, ascending-contraction contract, so output
// bits match the scalar reference.

#include "dsvla/kernels.hpp"

#if defined(DSVLA_HAVE_NEON)

#include <arm_neon.h>

#include <cstddef>
#include <vector>

namespace dsvla::kernels {
namespace {

void nn_core(double* c, const double* a, const double* b, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      float64x2_t acc0, acc1, acc2, acc3;
      if (accumulate) {
        acc0 = vld1q_f64(crow + j + 0);
        acc1 = vld1q_f64(crow + j + 2);
        acc2 = vld1q_f64(crow + j + 4);
        acc3 = vld1q_f64(crow + j + 6);
      } else {
        acc0 = acc1 = acc2 = acc3 = vdupq_n_f64(0.0);
      }
      for (int p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(arow[p]);
        const double* brow = b + static_cast<std::size_t>(p) * n + j;
        acc0 = vaddq_f64(acc0, vmulq_f64(av, vld1q_f64(brow)));
        acc1 = vaddq_f64(acc1, vmulq_f64(av, vld1q_f64(brow + 2)));
        acc2 = vaddq_f64(acc2, vmulq_f64(av, vld1q_f64(brow + 4)));
        acc3 = vaddq_f64(acc3, vmulq_f64(av, vld1q_f64(brow + 6)));
      }
      vst1q_f64(crow + j + 0, acc0);
      vst1q_f64(crow + j + 2, acc1);
      vst1q_f64(crow + j + 4, acc2);
      vst1q_f64(crow + j + 6, acc3);
    }
    for (; j + 2 <= n; j += 2) {
      float64x2_t acc = accumulate ? vld1q_f64(crow + j) : vdupq_n_f64(0.0);
      for (int p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(arow[p]);
        const float64x2_t bv = vld1q_f64(b + static_cast<std::size_t>(p) * n + j);
        acc = vaddq_f64(acc, vmulq_f64(av, bv));
      }
      vst1q_f64(crow + j, acc);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * b[static_cast<std::size_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void matmul_nn_neon(double* c, const double* a, const double* b, int m, int k,
                    int n, bool accumulate) {
  nn_core(c, a, b, m, k, n, accumulate);
}

void matmul_tn_neon(double* c, const double* a, const double* b, int m, int k,
                    int n, bool accumulate) {
  for (int p = 0; p < k; ++p) {
    double* crow = c + static_cast<std::size_t>(p) * n;
    int j = 0;
    for (; j + 2 <= n; j += 2) {
      float64x2_t acc = accumulate ? vld1q_f64(crow + j) : vdupq_n_f64(0.0);
      for (int i = 0; i < m; ++i) {
        const float64x2_t av = vdupq_n_f64(a[static_cast<std::size_t>(i) * k + p]);
        const float64x2_t bv = vld1q_f64(b + static_cast<std::size_t>(i) * n + j);
        acc = vaddq_f64(acc, vmulq_f64(av, bv));
      }
      vst1q_f64(crow + j, acc);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (int i = 0; i < m; ++i)
        s += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(i) * n + j];
      crow[j] = s;
    }
  }
}

void matmul_nt_neon(double* c, const double* a, const double* b, int m, int n,
                    int k, bool accumulate) {
  thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(n) * k);
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j)
      scratch[static_cast<std::size_t>(j) * k + p] = b[static_cast<std::size_t>(p) * n + j];
  nn_core(c, a, scratch.data(), m, n, k, accumulate);
}

void add_neon(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_neon(double* y, double alpha, const double* x, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t prod = vmulq_f64(av, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(double* out, double alpha, const double* x, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vmulq_f64(av, vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable table{
      "neon",     matmul_nn_neon, matmul_tn_neon, matmul_nt_neon,
      add_neon,   sub_neon,       mul_neon,       axpy_neon,
      scale_neon,
  };
  return table;
}

}  // namespace dsvla::kernels

#endif  // DSVLA_HAVE_NEON
