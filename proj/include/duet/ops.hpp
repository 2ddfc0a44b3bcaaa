#pragma once

// Differentiable operations on Tensor. Binary elementwise ops follow
// trailing-dimension broadcasting: shapes are aligned from the right and each
// dimension pair must be equal or contain a 1 (missing dimensions count as 1).

#include <cstddef>
#include <span>
#include <vector>

#include "duet/tensor.hpp"

namespace duet {

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// [..., m, k] x [..., k, n] -> [..., m, n]; batch dimensions broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax(const Tensor& x, int axis = -1);
// Normalizes the last axis to unit RMS, then scales by `weight`.
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = 1e-6);
// Mean over rows of -log softmax(logits)[row, target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
// Mean over all elements of the logistic loss; `targets` is treated as data.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sums away the last axis.
Tensor sum_last(const Tensor& x);
// Averages away the first axis.
Tensor mean_rows(const Tensor& x);

// Row operations work on the first axis.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
// out[i] = x[index[i]], or 0 where index[i] < 0. Backward scatter-adds.
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::ptrdiff_t> index);

// Square single-channel image (size*size values) <-> non-overlapping patches
// [(size/patch)^2, patch*patch], patches and pixels both row-major.
Tensor patchify(const Tensor& image, std::size_t size, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t size, std::size_t patch);

// x @ w (+ b). `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

}  // namespace duet
