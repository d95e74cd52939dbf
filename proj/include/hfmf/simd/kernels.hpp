#pragma once
// Data-parallel inner loops used by the tensor engine.
//
// Every kernel has a scalar reference implementation and, where the target
// supports it, an AVX2+FMA variant. The active table is chosen once at
// startup from CPUID; HFMF_SIMD=scalar|avx2 forces a particular table.

#include <cstddef>
#include <string_view>

namespace hfmf::simd {

/// C[m x n] += op(A)[m x k] * B[k x n].
/// op(A)(i, p) = a[i * a_row_stride + p * a_col_stride], so row-major A uses
/// (lda, 1) and a transposed view of a row-major k x m matrix uses (1, lda).
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t a_row_stride,
                        std::size_t a_col_stride, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc);

/// C[m x n] += A[m x k] * B[n x k]^T with both operands row-major, so every
/// output element is a dot product of two contiguous rows.
using GemmNtFn = void (*)(std::size_t m, std::size_t n, std::size_t k,
                          const double* a, std::size_t lda, const double* b,
                          std::size_t ldb, double* c, std::size_t ldc);

using DotFn = double (*)(std::size_t n, const double* x, const double* y);
/// y += alpha * x
using AxpyFn = void (*)(std::size_t n, double alpha, const double* x,
                        double* y);
/// out = x + y, out = x * y (out may alias x or y)
using BinaryFn = void (*)(std::size_t n, const double* x, const double* y,
                          double* out);
/// out = alpha * x
using ScaleFn = void (*)(std::size_t n, double alpha, const double* x,
                         double* out);
/// out = max(x, 0)
using ReluFn = void (*)(std::size_t n, const double* x, double* out);
/// gx += (x > 0) ? g : 0
using ReluGradFn = void (*)(std::size_t n, const double* x, const double* g,
                            double* gx);

struct KernelTable {
  std::string_view name;
  GemmFn gemm;
  GemmNtFn gemm_nt;
  DotFn dot;
  AxpyFn axpy;
  BinaryFn add;
  BinaryFn mul;
  ScaleFn scale;
  ReluFn relu;
  ReluGradFn relu_grad;
};

const KernelTable& scalar_kernels();

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

/// Table used by the engine. Resolved on first call.
const KernelTable& active_kernels();

/// Swap the active table (tests and benchmarks). Not thread-safe with
/// respect to concurrent kernel calls.
void set_active_kernels(const KernelTable& table);

}  // namespace hfmf::simd
