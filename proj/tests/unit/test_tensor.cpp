#include <doctest.h>

#include <cmath>
#include <numeric>

#include "../common/op_catalog.hpp"
#include "duet/grad_check.hpp"
#include "duet/optim.hpp"
#include "helpers.hpp"

using namespace duet;
using testing::values;

TEST_CASE("elementwise add and mul") {
  const Tensor a({2}, {1, 2}), b({2}, {3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});

  Tensor x({3}, {0.5, -2.0, 7.0}, true);
  const Tensor y = mul(x, 1.0);
  CHECK(values(y) == values(x));
  backward(sum(y));
  CHECK(values(Tensor({3}, std::vector<double>(x.grad().begin(), x.grad().end()))) == std::vector<double>{1, 1, 1});
}

TEST_CASE("sub gradient with respect to the right operand is -1") {
  Rng rng(3);
  const Tensor a = testing::randn({2, 3}, rng);
  Tensor b = testing::randn({2, 3}, rng, true);
  backward(sum(sub(a, b)));
  for (double g : b.grad()) CHECK(g == -1.0);
  CHECK(grad_check([&](const Tensor& t) { return sum(sub(a, t)); }, b) < 1e-8);
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a({2, 3}, std::vector<double>(6, 1.0)), b({4}, std::vector<double>(4, 1.0));
  try {
    add(a, b);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("broadcasting equals explicit tiling") {
  Rng rng(11);
  const std::vector<std::pair<Shape, Shape>> cases = {
      {{3, 4}, {4}}, {{3, 4}, {1, 4}}, {{3, 1}, {1, 4}}, {{2, 3, 4}, {3, 1}}, {{2, 1, 4}, {3, 4}}};
  for (const auto& [sa, sb] : cases) {
    const Tensor a = testing::randn(sa, rng), b = testing::randn(sb, rng);
    const Shape out = broadcast_shape(sa, sb);
    const Tensor r = mul(a, b);
    REQUIRE(r.shape() == out);
    // explicit tiling by index arithmetic
    auto at = [](const Tensor& t, const Shape& full, std::size_t flat) {
      const Shape& s = t.shape();
      std::size_t idx = 0, stride = 1;
      for (std::size_t ax = 0; ax < full.size(); ++ax) {
        const std::size_t fa = full.size() - 1 - ax;
        const std::size_t coord = (flat / stride) % full[fa];
        stride *= full[fa];
        if (ax < s.size()) {
          const std::size_t sa_ = s.size() - 1 - ax;
          std::size_t inner = 1;
          for (std::size_t j = sa_ + 1; j < s.size(); ++j) inner *= s[j];
          idx += (s[sa_] == 1 ? 0 : coord) * inner;
        }
      }
      return t.data()[idx];
    };
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == at(a, out, i) * at(b, out, i));
  }
}

TEST_CASE("matmul") {
  const Tensor I({2, 2}, {1, 0, 0, 1}), M({2, 2}, {1.5, -2, 3, 4.25});
  CHECK(values(matmul(I, M)) == values(M));
  CHECK(values(matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}))) == std::vector<double>{3, 7});
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);

  Rng rng(5);
  const Tensor b = testing::randn({4, 2}, rng);
  Tensor a = testing::randn({3, 4}, rng, true);
  CHECK(grad_check([&](const Tensor& x) { return sum(square(matmul(x, b))); }, a) < 1e-4);
  const Tensor a2 = testing::randn({3, 4}, rng);
  Tensor b2 = testing::randn({4, 2}, rng, true);
  CHECK(grad_check([&](const Tensor& x) { return sum(square(matmul(a2, x))); }, b2) < 1e-4);
}

TEST_CASE("softmax") {
  const auto u = values(softmax(Tensor({3}, {0, 0, 0})));
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto s = values(softmax(Tensor({2}, {1000, 0})));
  CHECK(std::isfinite(s[0]));
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(0.0));

  Rng rng(7);
  Tensor x = testing::randn({2, 5}, rng, true, 3.0);
  const auto p = values(softmax(x));
  for (int r = 0; r < 2; ++r) {
    double total = 0.0;
    for (int j = 0; j < 5; ++j) {
      CHECK(p[r * 5 + j] >= 0.0);
      total += p[r * 5 + j];
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  CHECK(grad_check([](const Tensor& t) { return testing::probe_sum(softmax(t), 4); }, x) < 1e-4);
}

TEST_CASE("rms_norm") {
  CHECK(values(rms_norm(Tensor({2}, {3, -3}), Tensor({2}, {1, 1}), 0.0)) == std::vector<double>{1, -1});
  Rng rng(9);
  const Tensor x = testing::randn({3, 6}, rng);
  const auto y = values(rms_norm(x, Tensor::full({6}, 1.0), 0.0));
  for (int r = 0; r < 3; ++r) {
    double ss = 0.0;
    for (int j = 0; j < 6; ++j) ss += y[r * 6 + j] * y[r * 6 + j];
    CHECK(std::sqrt(ss / 6.0) == doctest::Approx(1.0).epsilon(1e-12));
    const double ratio = y[r * 6] / x.data()[r * 6];
    for (int j = 0; j < 6; ++j) CHECK(y[r * 6 + j] == doctest::Approx(ratio * x.data()[r * 6 + j]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(rms_norm(x, Tensor::full({5}, 1.0)), std::invalid_argument);
  Tensor xg = testing::randn({3, 6}, rng, true);
  const Tensor w = testing::randn({6}, rng);
  CHECK(grad_check([&](const Tensor& t) { return testing::probe_sum(rms_norm(t, w), 3); }, xg) < 1e-4);
}

TEST_CASE("cross entropy") {
  const std::vector<std::size_t> t1 = {5};
  CHECK(cross_entropy(Tensor::zeros({1, 8}), t1).item() == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK(cross_entropy(Tensor::zeros({1, 8}), t1).item() == doctest::Approx(2.07944).epsilon(1e-5));

  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    std::vector<double> l(4, 0.0);
    l[2] = margin;
    const std::vector<std::size_t> t = {2};
    const double v = cross_entropy(Tensor({1, 4}, l), t).item();
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-20);

  Rng rng(13);
  const Tensor logits = testing::randn({4, 10}, rng, false, 2.0);
  const std::vector<std::size_t> targets = {3, 0, 9, 3};
  double expect = 0.0;
  for (int r = 0; r < 4; ++r) {
    double mx = -1e300;
    for (int j = 0; j < 10; ++j) mx = std::max(mx, logits.data()[r * 10 + j]);
    double z = 0.0;
    for (int j = 0; j < 10; ++j) z += std::exp(logits.data()[r * 10 + j] - mx);
    expect += -(logits.data()[r * 10 + targets[r]] - mx - std::log(z));
  }
  CHECK(cross_entropy(logits, targets).item() == doctest::Approx(expect / 4.0).epsilon(1e-13));
  const std::vector<std::size_t> bad = {10};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 10}), bad), std::out_of_range);
}

TEST_CASE("backward") {
  CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), std::invalid_argument);
  Tensor x({2}, {1.0, 2.0}, true);
  backward(sum(square(x)));
  backward(sum(square(x)));
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == 8.0);
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0);

  NoGradGuard ng;
  const Tensor y = square(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check sanity cases") {
  Rng rng(17);
  Tensor x = testing::randn({4, 3}, rng, true);
  CHECK(grad_check([](const Tensor& t) { return sum(square(t)); }, x) < 1e-6);
  x.zero_grad();
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("every differentiable operation passes grad_check") {
  for (auto& c : testing::op_catalog(2024)) {
    CAPTURE(c.name);
    CHECK(grad_check(c.f, c.input) < 1e-4);
  }
}

TEST_CASE("adamw") {
  SUBCASE("zero gradients leave parameters unchanged") {
    ParamTree p;
    p.add("a", Tensor({3}, {1, -2, 3}, true), Branch::understanding);
    AdamW opt;
    opt.step(p, {"a"}, 1e-3);
    CHECK(values(p.at("a")) == std::vector<double>{1, -2, 3});
  }
  SUBCASE("first step with g = 1 moves by about -lr") {
    ParamTree p;
    p.add("a", Tensor({1}, {0.5}, true), Branch::understanding);
    p.at("a").mutable_grad()[0] = 1.0;
    AdamW opt(AdamWConfig{0.9, 0.95, 1e-15, 0.0, 0.0});
    opt.step(p, {"a"}, 1e-3);
    CHECK(p.at("a").data()[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-12));
  }
  SUBCASE("gradient norm 10 is clipped to 1 before the moments") {
    ParamTree p;
    p.add("a", Tensor({2}, {0.0, 0.0}, true), Branch::understanding);
    p.at("a").mutable_grad()[0] = 6.0;
    p.at("a").mutable_grad()[1] = 8.0;
    AdamW opt;
    const double norm = opt.step(p, {"a"}, 1e-3);
    CHECK(norm == doctest::Approx(10.0));
    const auto& m = opt.moments().at("a").m;
    CHECK(m[0] == doctest::Approx(0.1 * 0.6).epsilon(1e-12));
    CHECK(m[1] == doctest::Approx(0.1 * 0.8).epsilon(1e-12));
  }
  SUBCASE("defaults follow the reference optimizer") {
    const AdamWConfig c;
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.95);
    CHECK(c.eps == 1e-15);
    CHECK(c.weight_decay == 0.0);
    CHECK(c.clip_norm == 1.0);
  }
  SUBCASE("deterministic") {
    auto run = [] {
      Rng rng(1);
      ParamTree p;
      p.add("w", testing::randn({5, 3}, rng, true), Branch::generation);
      AdamW opt;
      for (int s = 0; s < 3; ++s) {
        auto g = p.at("w").mutable_grad();
        for (double& v : g) v = rng.normal();
        opt.step(p, {"w"}, 1e-2);
      }
      return values(p.at("w"));
    };
    CHECK(run() == run());
  }
  SUBCASE("missing gradient on a trainable parameter") {
    ParamTree p;
    p.add("a", Tensor({1}, {0.5}, false), Branch::understanding);
    AdamW opt;
    CHECK_THROWS_AS(opt.step(p, {"a"}, 1e-3), std::logic_error);
  }
  SUBCASE("frozen parameters are untouched and get no state") {
    ParamTree p;
    p.add("a", Tensor({1}, {0.5}, true), Branch::understanding);
    p.add("b", Tensor({1}, {0.25}, true), Branch::generation);
    p.at("a").mutable_grad()[0] = 1.0;
    p.at("b").mutable_grad()[0] = 1.0;
    AdamW opt;
    opt.step(p, {"a"}, 1e-2);
    CHECK(p.at("b").data()[0] == 0.25);
    CHECK(opt.moments().count("b") == 0);
  }
}
