#include <doctest.h>

#include <cstring>
#include <vector>

#include "duet/kernels.hpp"
#include "duet/ops.hpp"
#include "duet/random.hpp"
#include "helpers.hpp"

using namespace duet;

namespace {

std::vector<double> noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct KernelGuard {
  ~KernelGuard() { kernels::select("auto"); }
};

}  // namespace

TEST_CASE("scalar and SIMD kernels agree") {
  const kernels::KernelTable* simd = kernels::avx2();
  if (!simd) {
    MESSAGE("SIMD kernels unavailable on this machine; only the scalar table is exercised");
    return;
  }
  const kernels::KernelTable& ref = kernels::scalar();
  Rng rng(42);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 31u, 64u, 1001u}) {
    CAPTURE(n);
    const auto a = noise(n, rng);
    auto b = noise(n, rng);
    for (double& x : b)
      if (x == 0.0) x = 1.0;
    for (auto op : {&kernels::KernelTable::add, &kernels::KernelTable::sub, &kernels::KernelTable::mul,
                    &kernels::KernelTable::div}) {
      std::vector<double> o1(n), o2(n);
      (ref.*op)(n, a.data(), b.data(), o1.data());
      (simd->*op)(n, a.data(), b.data(), o2.data());
      CHECK(same_bits(o1, o2));
    }
    std::vector<double> y1 = b, y2 = b;
    ref.axpy(n, 0.37, a.data(), y1.data());
    simd->axpy(n, 0.37, a.data(), y2.data());
    CHECK(same_bits(y1, y2));

    const double d1 = ref.dot(n, a.data(), b.data()), d2 = simd->dot(n, a.data(), b.data());
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));

    std::vector<double> p1 = a, p2 = a, m1(n, 0.1), m2(n, 0.1), v1(n, 0.2), v2(n, 0.2);
    const kernels::AdamArgs args{1e-3, 0.9, 0.95, 1e-15, 0.01, 0.1, 0.05, 0.5};
    ref.adamw(n, p1.data(), b.data(), m1.data(), v1.data(), args);
    simd->adamw(n, p2.data(), b.data(), m2.data(), v2.data(), args);
    CHECK(same_bits(p1, p2));
    CHECK(same_bits(m1, m2));
    CHECK(same_bits(v1, v2));
  }
}

TEST_CASE("gemm variants are bitwise identical and row-independent") {
  const kernels::KernelTable* simd = kernels::avx2();
  const kernels::KernelTable& ref = kernels::scalar();
  Rng rng(7);
  for (auto [m, n, k] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 17, 33}, {64, 32, 128}}) {
    CAPTURE(m);
    CAPTURE(n);
    CAPTURE(k);
    const auto a = noise(m * k, rng), b = noise(k * n, rng);
    std::vector<double> c1(m * n), c2(m * n);
    ref.gemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n, false);
    if (simd) {
      simd->gemm(m, n, k, a.data(), k, b.data(), n, c2.data(), n, false);
      CHECK(same_bits(c1, c2));
    }
    // row r computed alone equals row r of the full product
    for (std::size_t r = 0; r < m; ++r) {
      std::vector<double> row(n);
      (simd ? simd : &ref)->gemm(1, n, k, a.data() + r * k, k, b.data(), n, row.data(), n, false);
      CHECK(std::memcmp(row.data(), c1.data() + r * n, n * sizeof(double)) == 0);
    }
    // accumulate mode adds onto existing values
    std::vector<double> acc(m * n, 1.0);
    ref.gemm(m, n, k, a.data(), k, b.data(), n, acc.data(), n, true);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(acc[i] == doctest::Approx(c1[i] + 1.0).epsilon(1e-12));
  }
}

TEST_CASE("tensor ops give identical results under both kernel tables") {
  if (!kernels::avx2()) return;
  KernelGuard guard;
  auto compute = [] {
    Rng rng(3);
    Tensor a = testing::randn({6, 9}, rng, true), b = testing::randn({9, 5}, rng);
    const Tensor y = softmax(matmul(a, b));
    const Tensor loss = sum(mul(y, add(y, 1.0)));
    backward(loss);
    std::vector<double> out = testing::values(y);
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  kernels::select("scalar");
  const auto s = compute();
  kernels::select("avx2");
  const auto v = compute();
  CHECK(same_bits(s, v));
}

TEST_CASE("kernel selection") {
  KernelGuard guard;
  kernels::select("scalar");
  CHECK(kernels::active().name == "scalar");
  CHECK_THROWS_AS(kernels::select("neon-but-not-here"), std::invalid_argument);
}
