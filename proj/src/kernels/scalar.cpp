#include <cmath>

#include "duet/kernels.hpp"

namespace duet::kernels {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * ldb + j], acc);
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void add_scalar(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_scalar(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_scalar(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div_scalar(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

double dot_scalar(std::size_t n, const double* a, const double* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void adamw_scalar(std::size_t n, double* param, const double* grad, double* m, double* v,
                  const AdamArgs& args) {
  const double one_minus_b1 = 1.0 - args.beta1;
  const double one_minus_b2 = 1.0 - args.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i] * args.grad_scale;
    m[i] = args.beta1 * m[i] + one_minus_b1 * g;
    v[i] = args.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / args.bias_correction1;
    const double v_hat = v[i] / args.bias_correction2;
    const double decayed = param[i] - args.lr * args.weight_decay * param[i];
    param[i] = decayed - args.lr * (m_hat / (std::sqrt(v_hat) + args.eps));
  }
}

}  // namespace

const KernelTable& scalar() {
  static const KernelTable table{"scalar",   gemm_scalar, axpy_scalar, add_scalar, sub_scalar,
                                 mul_scalar, div_scalar,  dot_scalar,  adamw_scalar};
  return table;
}

}  // namespace duet::kernels
