#pragma once

// Runtime-dispatched compute kernels for the dense inner loops.
//
// Every entry point exists as a scalar reference implementation and, where
// the build targets support it, as an AVX2 (x86-64) or NEON (aarch64)
// variant. All variants accumulate in the same per-element order and never
// use FMA, so whichever table is active the results are bit-identical to
// the scalar reference. The active table is chosen once at startup from
// CPU features and can be overridden via select() or the DSVLA_KERNELS
// environment variable ("scalar", "avx2", "neon").

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dsvla::kernels {

struct KernelTable {
  const char* name;

  // C[M,N] (+)= A[M,K] * B[K,N]
  void (*matmul_nn)(double* c, const double* a, const double* b, int m, int k,
                    int n, bool accumulate);
  // C[K,N] (+)= A^T * B with A[M,K], B[M,N]
  void (*matmul_tn)(double* c, const double* a, const double* b, int m, int k,
                    int n, bool accumulate);
  // C[M,K] (+)= A * B^T with A[M,N], B[K,N]
  void (*matmul_nt)(double* c, const double* a, const double* b, int m, int n,
                    int k, bool accumulate);

  void (*add)(double* out, const double* a, const double* b, std::size_t n);
  void (*sub)(double* out, const double* a, const double* b, std::size_t n);
  void (*mul)(double* out, const double* a, const double* b, std::size_t n);
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
  void (*scale)(double* out, double alpha, const double* x, std::size_t n);
};

const KernelTable& scalar_table();

// Currently active table (set at first use; honors DSVLA_KERNELS).
const KernelTable& active();

// Force a specific table: "scalar", "avx2", "neon" or "auto".
// Throws std::runtime_error if the variant is unavailable on this machine.
void select(std::string_view name);

std::vector<std::string> available();

}  // namespace dsvla::kernels
