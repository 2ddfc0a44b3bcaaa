#include "duet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "duet/kernels.hpp"

namespace duet {

namespace {

// Neumaier-compensated sum: the result is within about one rounding of the
// exact sum regardless of length.
double accurate_sum(std::span<const double> v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

using detail::Node;

bool wants_grad(const Node& out, std::size_t parent) {
  return out.parents.size() > parent && !out.parents[parent]->grad.empty();
}

// Maps a flat index of the broadcast output to the flat index of one input.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& in, const Shape& out) : n_(shape_numel(in)) {
    if (in == out) {
      kind_ = Kind::same;
    } else if (n_ == 1) {
      kind_ = Kind::single;
    } else if (is_suffix(in, out)) {
      kind_ = Kind::suffix;
    } else {
      kind_ = Kind::general;
      build_map(in, out);
    }
  }

  bool same() const { return kind_ == Kind::same; }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::same: return i;
      case Kind::single: return 0;
      case Kind::suffix: return i % n_;
      case Kind::general: return map_[i];
    }
    return 0;
  }

 private:
  enum class Kind { same, single, suffix, general };

  static bool is_suffix(const Shape& in, const Shape& out) {
    if (in.size() > out.size()) return false;
    return std::equal(in.begin(), in.end(), out.end() - static_cast<std::ptrdiff_t>(in.size()));
  }

  void build_map(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    const std::size_t offset = r - in.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
      stride[d + offset] = in[d] == 1 ? 0 : s;
      s *= in[d];
    }
    const std::size_t total = shape_numel(out);
    map_.resize(total);
    std::vector<std::size_t> idx(r, 0);
    std::size_t flat_in = 0;
    for (std::size_t i = 0; i < total; ++i) {
      map_[i] = flat_in;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        flat_in += stride[d];
        if (idx[d] < out[d]) break;
        flat_in -= stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  Kind kind_;
  std::size_t n_;
  std::vector<std::size_t> map_;
};

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto& k = kernels::active();
  const auto ad = a.data();
  const auto bd = b.data();
  if (a.shape() == out_shape && b.shape() == out_shape) {
    switch (op) {
      case BinOp::add: k.add(n, ad.data(), bd.data(), out.data()); break;
      case BinOp::sub: k.sub(n, ad.data(), bd.data(), out.data()); break;
      case BinOp::mul: k.mul(n, ad.data(), bd.data(), out.data()); break;
      case BinOp::div: k.div(n, ad.data(), bd.data(), out.data()); break;
    }
  } else {
    const BroadcastIndex ia(a.shape(), out_shape);
    const BroadcastIndex ib(b.shape(), out_shape);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = ad[ia(i)];
      const double y = bd[ib(i)];
      switch (op) {
        case BinOp::add: out[i] = x + y; break;
        case BinOp::sub: out[i] = x - y; break;
        case BinOp::mul: out[i] = x * y; break;
        case BinOp::div: out[i] = x / y; break;
      }
    }
  }
  const Shape a_shape = a.shape();
  const Shape b_shape = b.shape();
  return make_op(out_shape, std::move(out), {a, b}, [op, a_shape, b_shape](Node& o) {
    const Node& pa = *o.parents[0];
    const Node& pb = *o.parents[1];
    const BroadcastIndex ia(a_shape, o.shape);
    const BroadcastIndex ib(b_shape, o.shape);
    const std::size_t n = o.data.size();
    const auto& g = o.grad;
    if (wants_grad(o, 0)) {
      auto& ga = o.parents[0]->grad;
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (op == BinOp::mul) d *= pb.data[ib(i)];
        if (op == BinOp::div) d /= pb.data[ib(i)];
        ga[ia(i)] += d;
      }
    }
    if (wants_grad(o, 1)) {
      auto& gb = o.parents[1]->grad;
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        switch (op) {
          case BinOp::add: break;
          case BinOp::sub: d = -d; break;
          case BinOp::mul: d *= pa.data[ia(i)]; break;
          case BinOp::div: {
            const double y = pb.data[ib(i)];
            d = -d * pa.data[ia(i)] / (y * y);
            break;
          }
        }
        gb[ib(i)] += d;
      }
    }
  });
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_op(x.shape(), std::move(out), {x}, [df](Node& o) {
    const Node& px = *o.parents[0];
    auto& gx = o.parents[0]->grad;
    for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i] * df(px.data[i], o.data[i]);
  });
}

void transpose_into(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  const auto r = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw std::out_of_range("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  AxisSplit s{1, shape[static_cast<std::size_t>(a)], 1};
  for (int i = 0; i < a; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = a + 1; i < r; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

std::size_t row_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shape mismatch: cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div); }

Tensor add(const Tensor& a, double b) {
  return unary(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw std::invalid_argument("matmul needs rank >= 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k)
    throw std::invalid_argument("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape(a_batch, b_batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t nb = shape_numel(batch);
  std::vector<double> out(nb * m * n);
  const auto& kern = kernels::active();
  {
    const BroadcastIndex ia(a_batch, batch);
    const BroadcastIndex ib(b_batch, batch);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t bi = 0; bi < nb; ++bi)
      kern.gemm(m, n, k, ad + ia(bi) * m * k, k, bd + ib(bi) * k * n, n, out.data() + bi * m * n, n, false);
  }
  return make_op(out_shape, std::move(out), {a, b}, [a_batch, b_batch, batch, m, n, k](Node& o) {
    const auto& kern = kernels::active();
    const BroadcastIndex ia(a_batch, batch);
    const BroadcastIndex ib(b_batch, batch);
    const std::size_t nb = shape_numel(batch);
    const double* ad = o.parents[0]->data.data();
    const double* bd = o.parents[1]->data.data();
    std::vector<double> tmp;
    if (wants_grad(o, 0)) {
      double* ga = o.parents[0]->grad.data();
      tmp.resize(n * k);
      for (std::size_t bi = 0; bi < nb; ++bi) {
        transpose_into(bd + ib(bi) * k * n, k, n, tmp.data());
        kern.gemm(m, k, n, o.grad.data() + bi * m * n, n, tmp.data(), k, ga + ia(bi) * m * k, k, true);
      }
    }
    if (wants_grad(o, 1)) {
      double* gb = o.parents[1]->grad.data();
      tmp.resize(k * m);
      for (std::size_t bi = 0; bi < nb; ++bi) {
        transpose_into(ad + ia(bi) * m * k, m, k, tmp.data());
        kern.gemm(k, n, m, tmp.data(), m, o.grad.data() + bi * m * n, n, gb + ib(bi) * k * n, n, true);
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose needs rank >= 2, got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(-2), cols = a.dim(-1);
  const std::size_t nb = a.numel() / (rows * cols);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(a.numel());
  for (std::size_t b = 0; b < nb; ++b) transpose_into(a.data().data() + b * rows * cols, rows, cols, out.data() + b * rows * cols);
  return make_op(out_shape, std::move(out), {a}, [rows, cols, nb](Node& o) {
    auto& ga = o.parents[0]->grad;
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[b * rows * cols + r * cols + c] += o.grad[b * rows * cols + c * rows + r];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op(std::move(shape), std::move(out), {a}, [](Node& o) {
    auto& ga = o.parents[0]->grad;
    kernels::active().axpy(o.grad.size(), 1.0, o.grad.data(), ga.data());
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [s](Node& o) {
    auto& gx = o.parents[0]->grad;
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = ou * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += o.grad[base + j * s.inner] * o.data[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t p = base + j * s.inner;
          gx[p] += o.data[p] * (o.grad[p] - dot);
        }
      }
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  const std::size_t d = x.dim(-1);
  if (weight.numel() != d)
    throw std::invalid_argument("rms_norm weight length " + std::to_string(weight.numel()) + " does not match last axis of " +
                                shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  const auto wd = weight.data();
  std::vector<double> out(xd.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t i = 0; i < d; ++i) ms += xd[r * d + i] * xd[r * d + i];
    ms /= static_cast<double>(d);
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = xd[r * d + i] * inv_rms[r] * wd[i];
  }
  return make_op(x.shape(), std::move(out), {x, weight}, [inv_rms = std::move(inv_rms), d, rows](Node& o) {
    const auto& xd = o.parents[0]->data;
    const auto& wd = o.parents[1]->data;
    const bool gx_on = wants_grad(o, 0);
    const bool gw_on = wants_grad(o, 1);
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double ir = inv_rms[r];
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double xhat = xd[r * d + i] * ir;
        const double g = o.grad[r * d + i];
        if (gw_on) o.parents[1]->grad[i] += g * xhat;
        dxhat[i] = g * wd[i];
        proj += dxhat[i] * xhat;
      }
      if (!gx_on) continue;
      proj /= static_cast<double>(d);
      auto& gx = o.parents[0]->grad;
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += ir * (dxhat[i] - xd[r * d + i] * ir * proj);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy expects [n, V] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n)
    throw std::invalid_argument("cross_entropy has " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  for (std::size_t t : targets)
    if (t >= v) throw std::out_of_range("target index " + std::to_string(t) + " out of range for vocabulary of " + std::to_string(v));
  const auto ld = logits.data();
  std::vector<double> probs(n * v);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = ld.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[r * v + j] = std::exp(row[j] - mx);
      z += probs[r * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    total += (mx + std::log(z)) - row[targets[r]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_op({}, {total / static_cast<double>(n)}, {logits}, [probs = std::move(probs), tgt = std::move(tgt), n, v](Node& o) {
    auto& gl = o.parents[0]->grad;
    const double scale = o.grad[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += scale * probs[r * v + j];
      gl[r * v + tgt[r]] -= scale;
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw std::invalid_argument("bce_with_logits shape mismatch: " + shape_str(logits.shape()) + " vs " + shape_str(targets.shape()));
  const auto z = logits.data();
  const auto y = targets.data();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  const auto n = static_cast<double>(z.size());
  std::vector<double> ty(y.begin(), y.end());
  return make_op({}, {total / n}, {logits}, [ty = std::move(ty), n](Node& o) {
    const auto& zd = o.parents[0]->data;
    auto& gz = o.parents[0]->grad;
    for (std::size_t i = 0; i < zd.size(); ++i) gz[i] += o.grad[0] * (1.0 / (1.0 + std::exp(-zd[i])) - ty[i]) / n;
  });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  const double total = accurate_sum(x.data());
  return make_op({}, {total}, {x}, [](Node& o) {
    for (double& g : o.parents[0]->grad) g += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<double>(x.numel());
  const double total = accurate_sum(x.data());
  return make_op({}, {total / n}, {x}, [n](Node& o) {
    for (double& g : o.parents[0]->grad) g += o.grad[0] / n;
  });
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() == 0) throw std::invalid_argument("sum_last on a scalar");
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows, 0.0);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) out[r] = accurate_sum(xd.subspan(r * d, d));
  return make_op(out_shape, std::move(out), {x}, [d, rows](Node& o) {
    auto& gx = o.parents[0]->grad;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += o.grad[r];
  });
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() == 0) throw std::invalid_argument("mean_rows on a scalar");
  const std::size_t rows = x.dim(0);
  const std::size_t rs = row_size(x.shape());
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  std::vector<double> out(rs, 0.0);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < rs; ++i) out[i] += xd[r * rs + i];
  for (double& v : out) v /= static_cast<double>(rows);
  return make_op(out_shape, std::move(out), {x}, [rows, rs](Node& o) {
    auto& gx = o.parents[0]->grad;
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < rs; ++i) gx[r * rs + i] += o.grad[i] * inv;
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0))
    throw std::out_of_range("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for shape " +
                            shape_str(x.shape()));
  const std::size_t rs = row_size(x.shape());
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * rs),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * rs));
  return make_op(out_shape, std::move(out), {x}, [begin, rs](Node& o) {
    auto& gx = o.parents[0]->grad;
    kernels::active().axpy(o.grad.size(), 1.0, o.grad.data(), gx.data() + begin * rs);
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Shape out_shape = parts.front().shape();
  if (out_shape.empty()) throw std::invalid_argument("concat_rows of scalars");
  const std::size_t rs = row_size(out_shape);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size() || row_size(p.shape()) != rs ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), out_shape.begin() + 1))
      throw std::invalid_argument("concat_rows shape mismatch: " + shape_str(out_shape) + " vs " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  out_shape[0] = rows;
  std::vector<double> out;
  out.reserve(rows * rs);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_op(out_shape, std::move(out), parts, [offsets = std::move(offsets)](Node& o) {
    for (std::size_t i = 0; i < o.parents.size(); ++i) {
      if (!wants_grad(o, i)) continue;
      auto& g = o.parents[i]->grad;
      kernels::active().axpy(g.size(), 1.0, o.grad.data() + offsets[i], g.data());
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding table must be [V, d], got " + shape_str(table.shape()));
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= v) throw std::out_of_range("token id " + std::to_string(ids[r]) + " out of range for " + std::to_string(v));
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> id_copy(ids.begin(), ids.end());
  return make_op({ids.size(), d}, std::move(out), {table}, [id_copy = std::move(id_copy), d](Node& o) {
    auto& gt = o.parents[0]->grad;
    for (std::size_t r = 0; r < id_copy.size(); ++r)
      for (std::size_t i = 0; i < d; ++i) gt[id_copy[r] * d + i] += o.grad[r * d + i];
  });
}

Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::ptrdiff_t> index) {
  if (shape_numel(out_shape) != index.size())
    throw std::invalid_argument("gather index count does not match shape " + shape_str(out_shape));
  const auto xd = x.data();
  std::vector<double> out(index.size(), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<std::size_t>(index[i]) >= xd.size()) throw std::out_of_range("gather index out of range");
    out[i] = xd[static_cast<std::size_t>(index[i])];
  }
  return make_op(std::move(out_shape), std::move(out), {x}, [index = std::move(index)](Node& o) {
    auto& gx = o.parents[0]->grad;
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) gx[static_cast<std::size_t>(index[i])] += o.grad[i];
  });
}

namespace {

std::vector<std::ptrdiff_t> patch_order(std::size_t size, std::size_t patch) {
  if (patch == 0 || size % patch != 0)
    throw std::invalid_argument("patch size " + std::to_string(patch) + " does not divide image size " + std::to_string(size));
  const std::size_t g = size / patch;
  std::vector<std::ptrdiff_t> idx;
  idx.reserve(size * size);
  for (std::size_t pr = 0; pr < g; ++pr)
    for (std::size_t pc = 0; pc < g; ++pc)
      for (std::size_t i = 0; i < patch; ++i)
        for (std::size_t j = 0; j < patch; ++j)
          idx.push_back(static_cast<std::ptrdiff_t>((pr * patch + i) * size + pc * patch + j));
  return idx;
}

}  // namespace

Tensor patchify(const Tensor& image, std::size_t size, std::size_t patch) {
  if (image.numel() != size * size)
    throw std::invalid_argument("patchify expects " + std::to_string(size) + "x" + std::to_string(size) + " pixels, got " +
                                shape_str(image.shape()));
  const std::size_t g = size / (patch ? patch : 1);
  return gather(image, {g * g, patch * patch}, patch_order(size, patch));
}

Tensor unpatchify(const Tensor& patches, std::size_t size, std::size_t patch) {
  if (patches.numel() != size * size)
    throw std::invalid_argument("unpatchify: " + shape_str(patches.shape()) + " does not hold a " + std::to_string(size) +
                                "x" + std::to_string(size) + " image");
  const auto order = patch_order(size, patch);
  std::vector<std::ptrdiff_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[static_cast<std::size_t>(order[i])] = static_cast<std::ptrdiff_t>(i);
  return gather(patches, {size * size}, std::move(inverse));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape())
    throw std::invalid_argument("mse_loss shape mismatch: prediction " + shape_str(prediction.shape()) + " vs target " +
                                shape_str(target.shape()));
  return mean(square(sub(prediction, target)));
}

}  // namespace duet
