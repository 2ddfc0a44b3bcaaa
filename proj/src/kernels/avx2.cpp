#include <immintrin.h>

#include <cmath>

#include "duet/kernels.hpp"

namespace duet::kernels {
namespace {

inline void store_row(double* c, __m256d acc, bool accumulate) {
  if (accumulate) acc = _mm256_add_pd(_mm256_loadu_pd(c), acc);
  _mm256_storeu_pd(c, acc);
}

// 4 rows x 8 columns register tile.
void tile_4x8(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb,
              double* c, std::size_t ldc, bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  store_row(c, c00, accumulate);
  store_row(c + 4, c01, accumulate);
  store_row(c + ldc, c10, accumulate);
  store_row(c + ldc + 4, c11, accumulate);
  store_row(c + 2 * ldc, c20, accumulate);
  store_row(c + 2 * ldc + 4, c21, accumulate);
  store_row(c + 3 * ldc, c30, accumulate);
  store_row(c + 3 * ldc + 4, c31, accumulate);
}

void tile_1x8(std::size_t k, const double* a, const double* b, std::size_t ldb, double* c,
              bool accumulate) {
  __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + 4), c1);
  }
  store_row(c, c0, accumulate);
  store_row(c + 4, c1, accumulate);
}

void tile_1x4(std::size_t k, const double* a, const double* b, std::size_t ldb, double* c,
              bool accumulate) {
  __m256d c0 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p)
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * ldb), c0);
  store_row(c, c0, accumulate);
}

void tile_1x1(std::size_t k, const double* a, const double* b, std::size_t ldb, double* c,
              bool accumulate) {
  double acc = 0.0;
  for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[p], b[p * ldb], acc);
  *c = accumulate ? *c + acc : acc;
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
      tile_4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    for (std::size_t r = 0; r < 4; ++r) {
      const double* arow = a + (i + r) * lda;
      double* crow = c + (i + r) * ldc;
      std::size_t jj = j;
      for (; jj + 4 <= n; jj += 4) tile_1x4(k, arow, b + jj, ldb, crow + jj, accumulate);
      for (; jj < n; ++jj) tile_1x1(k, arow, b + jj, ldb, crow + jj, accumulate);
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) tile_1x8(k, arow, b + j, ldb, crow + j, accumulate);
    for (; j + 4 <= n; j += 4) tile_1x4(k, arow, b + j, ldb, crow + j, accumulate);
    for (; j < n; ++j) tile_1x1(k, arow, b + j, ldb, crow + j, accumulate);
  }
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename VecOp, typename ScalarOp>
inline void binary_loop(std::size_t n, const double* a, const double* b, double* out, VecOp vop,
                        ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

void add_avx2(std::size_t n, const double* a, const double* b, double* out) {
  binary_loop(
      n, a, b, out, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); },
      [](double x, double y) { return x + y; });
}
void sub_avx2(std::size_t n, const double* a, const double* b, double* out) {
  binary_loop(
      n, a, b, out, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); },
      [](double x, double y) { return x - y; });
}
void mul_avx2(std::size_t n, const double* a, const double* b, double* out) {
  binary_loop(
      n, a, b, out, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); },
      [](double x, double y) { return x * y; });
}
void div_avx2(std::size_t n, const double* a, const double* b, double* out) {
  binary_loop(
      n, a, b, out, [](__m256d x, __m256d y) { return _mm256_div_pd(x, y); },
      [](double x, double y) { return x / y; });
}

double dot_avx2(std::size_t n, const double* a, const double* b) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

void adamw_avx2(std::size_t n, double* param, const double* grad, double* m, double* v,
                const AdamArgs& args) {
  const __m256d scale = _mm256_set1_pd(args.grad_scale);
  const __m256d b1 = _mm256_set1_pd(args.beta1);
  const __m256d b2 = _mm256_set1_pd(args.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - args.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - args.beta2);
  const __m256d bc1 = _mm256_set1_pd(args.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(args.bias_correction2);
  const __m256d lr = _mm256_set1_pd(args.lr);
  const __m256d lr_wd = _mm256_set1_pd(args.lr * args.weight_decay);
  const __m256d eps = _mm256_set1_pd(args.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_mul_pd(_mm256_loadu_pd(grad + i), scale);
    const __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vv =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d m_hat = _mm256_div_pd(mv, bc1);
    const __m256d v_hat = _mm256_div_pd(vv, bc2);
    const __m256d p = _mm256_loadu_pd(param + i);
    const __m256d decayed = _mm256_sub_pd(p, _mm256_mul_pd(lr_wd, p));
    const __m256d ratio = _mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(decayed, _mm256_mul_pd(lr, ratio)));
  }
  if (i < n) {
    AdamArgs tail = args;
    scalar().adamw(n - i, param + i, grad + i, m + i, v + i, tail);
  }
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{"avx2",   gemm_avx2, axpy_avx2, add_avx2, sub_avx2,
                                 mul_avx2, div_avx2,  dot_avx2,  adamw_avx2};
  return &table;
}

}  // namespace duet::kernels
