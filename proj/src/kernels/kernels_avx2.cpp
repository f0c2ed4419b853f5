// AVX2 kernel variants. Compiled with -mavx2 only on x86-64; selected at
// runtime when the CPU reports AVX2 support.
//
// Bit-compatibility with the scalar reference is load-bearing: every output
// element accumulates over the contraction index in ascending order using
// separate multiply and add (no FMA), which makes the two paths produce
// identical bits. The equivalence tests assert exact equality.

#include "dsvla/kernels.hpp"

#if defined(DSVLA_HAVE_AVX2)

#include <immintrin.h>

#include <cstddef>
#include <vector>

namespace dsvla::kernels {
namespace {

// C[M,N] (+)= A[M,K] * B[K,N], broadcast-A / vector-B formulation.
void nn_core(double* c, const double* a, const double* b, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d acc0, acc1, acc2, acc3;
      if (accumulate) {
        acc0 = _mm256_loadu_pd(crow + j + 0);
        acc1 = _mm256_loadu_pd(crow + j + 4);
        acc2 = _mm256_loadu_pd(crow + j + 8);
        acc3 = _mm256_loadu_pd(crow + j + 12);
      } else {
        acc0 = acc1 = acc2 = acc3 = _mm256_setzero_pd();
      }
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(arow[p]);
        const double* brow = b + static_cast<std::size_t>(p) * n + j;
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(av, _mm256_loadu_pd(brow)));
        acc1 =
            _mm256_add_pd(acc1, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 4)));
        acc2 =
            _mm256_add_pd(acc2, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 8)));
        acc3 =
            _mm256_add_pd(acc3, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 12)));
      }
      _mm256_storeu_pd(crow + j + 0, acc0);
      _mm256_storeu_pd(crow + j + 4, acc1);
      _mm256_storeu_pd(crow + j + 8, acc2);
      _mm256_storeu_pd(crow + j + 12, acc3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d acc = accumulate ? _mm256_loadu_pd(crow + j) : _mm256_setzero_pd();
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(arow[p]);
        const __m256d bv = _mm256_loadu_pd(b + static_cast<std::size_t>(p) * n + j);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, bv));
      }
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * b[static_cast<std::size_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void matmul_nn_avx2(double* c, const double* a, const double* b, int m, int k,
                    int n, bool accumulate) {
  nn_core(c, a, b, m, k, n, accumulate);
}

// C[K,N] (+)= A^T * B, contraction over rows of A and B (ascending i).
void matmul_tn_avx2(double* c, const double* a, const double* b, int m, int k,
                    int n, bool accumulate) {
  for (int p = 0; p < k; ++p) {
    double* crow = c + static_cast<std::size_t>(p) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = accumulate ? _mm256_loadu_pd(crow + j) : _mm256_setzero_pd();
      for (int i = 0; i < m; ++i) {
        const __m256d av = _mm256_set1_pd(a[static_cast<std::size_t>(i) * k + p]);
        const __m256d bv = _mm256_loadu_pd(b + static_cast<std::size_t>(i) * n + j);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, bv));
      }
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (int i = 0; i < m; ++i)
        s += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(i) * n + j];
      crow[j] = s;
    }
  }
}

// C[M,K] (+)= A * B^T. B is transposed into scratch once so the inner loops
// can reuse the nn formulation; per-element accumulation order (ascending j)
// matches the scalar reference.
void matmul_nt_avx2(double* c, const double* a, const double* b, int m, int n,
                    int k, bool accumulate) {
  thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(n) * k);
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j)
      scratch[static_cast<std::size_t>(j) * k + p] = b[static_cast<std::size_t>(p) * n + j];
  nn_core(c, a, scratch.data(), m, n, k, accumulate);
}

void add_avx2(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_avx2(double* y, double alpha, const double* x, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double* out, double alpha, const double* x, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{
      "avx2",     matmul_nn_avx2, matmul_tn_avx2, matmul_nt_avx2,
      add_avx2,   sub_avx2,       mul_avx2,       axpy_avx2,
      scale_avx2,
  };
  return table;
}

}  // namespace dsvla::kernels

#endif  // DSVLA_HAVE_AVX2
