#pragma once

// Data-parallel inner loops used by the tensor core. Every kernel has a
// portable scalar reference and, where the target supports it, a SIMD
// variant. The active table is chosen once at startup from CPU features
// (override with DUET_KERNELS=scalar|avx2).
//
// Contract shared by all variants:
//  - gemm accumulates each output element as an fma chain over k, in
//    increasing k, starting from 0.0. The result of a row never depends on
//    how many rows are processed together.
//  - the elementwise kernels and adamw perform the same IEEE operations in
//    the same order, so they are bitwise identical across variants.
//  - dot and sum_squares may reassociate; variants agree to rounding only.

#include <cstddef>
#include <string_view>

namespace duet::kernels {

struct AdamArgs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
  double bias_correction1;
  double bias_correction2;
  double grad_scale;
};

using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        std::size_t lda, const double* b, std::size_t ldb, double* c,
                        std::size_t ldc, bool accumulate);
using AxpyFn = void (*)(std::size_t n, double alpha, const double* x, double* y);
using BinaryFn = void (*)(std::size_t n, const double* a, const double* b, double* out);
using ReduceFn = double (*)(std::size_t n, const double* a, const double* b);
using AdamFn = void (*)(std::size_t n, double* param, const double* grad, double* m, double* v,
                        const AdamArgs& args);

struct KernelTable {
  std::string_view name;
  GemmFn gemm;
  AxpyFn axpy;  // y += alpha * x, fused
  BinaryFn add;
  BinaryFn sub;
  BinaryFn mul;
  BinaryFn div;
  ReduceFn dot;
  AdamFn adamw;
};

const KernelTable& scalar();

// nullptr when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2();

const KernelTable& active();

// "auto", "scalar" or "avx2". Throws std::invalid_argument for an unknown or
// unavailable variant.
void select(std::string_view name);

}  // namespace duet::kernels
