#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "maskfuse/errors.hpp"
#include "maskfuse/gradcheck.hpp"
#include "maskfuse/parameters.hpp"
#include "maskfuse/tensor.hpp"
#include "support.hpp"

using namespace maskfuse;
using namespace testing_support;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor leaf(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), v, true);
}

}  // namespace

TEST_CASE("matmul and relu basics") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {3, 4, 5, 6});
  CHECK(vals(matmul(eye, m)) == std::vector<double>{3, 4, 5, 6});
  CHECK(vals(relu(Tensor::row({-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  auto r = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  CHECK(r.item() == 11.0);
}

TEST_CASE("shape mismatch names both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("safe softmax") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(vals(safe_softmax(Tensor::row({0, 0}))) == std::vector<double>{0.5, 0.5});
  CHECK(vals(safe_softmax(Tensor::row({-inf, -inf}))) == std::vector<double>{0, 0});
  auto s = vals(safe_softmax(Tensor::row({1, 2})));
  const double z = std::exp(1.0) + std::exp(2.0);
  CHECK(s[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-14));
  CHECK(s[0] == doctest::Approx(0.26894).epsilon(1e-4));

  auto p = vals(safe_softmax(Tensor::row({3.0, -inf, 1.0})));
  CHECK(p[1] == 0.0);
  CHECK(p[0] + p[2] == doctest::Approx(1.0).epsilon(1e-15));

  // Column axis.
  auto c = safe_softmax(Tensor::from({2, 2}, {0, -inf, 0, -inf}), 0);
  CHECK(vals(c) == std::vector<double>{0.5, 0, 0.5, 0});
}

TEST_CASE("backward basics") {
  auto x = Tensor::scalar(3.0, true);
  auto g = backward(mul(x, x));
  CHECK(g.of(x).item() == 6.0);

  auto y = Tensor::scalar(2.0, true);
  auto gy = backward(relu(scale(y, -1.0)));
  CHECK(gy.of(y).item() == 0.0);

  CHECK_THROWS_AS(backward(Tensor::zeros({2, 2}, true)), PreconditionError);
}

TEST_CASE("gradient shapes match leaves and unreached leaves are absent") {
  Rng rng(3);
  auto w = leaf({3, 2}, rng);
  auto unused = leaf({4}, rng);
  auto x = Tensor::from({1, 3}, {1, 2, 3});
  auto g = backward(sum(matmul(x, w)));
  CHECK(g.of(w).shape() == w.shape());
  CHECK_FALSE(g.reached(unused));
}

TEST_CASE("mean(sigmoid(Wx)) matches central differences") {
  Rng rng(11);
  std::vector<Tensor> params{leaf({3, 3}, rng)};
  auto x = Tensor::from({3, 1}, {0.3, -0.7, 1.1});
  auto report = finite_diff_check([&] { return mean(sigmoid(matmul(params[0], x))); }, params, 1e-5);
  CHECK(report.coordinates == 9);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("finite difference checker on closed forms") {
  std::vector<Tensor> p{Tensor::row({0.4, -1.3, 2.0}, true)};
  auto linear = [&] { return sum(scale(p[0], 2.5)); };
  for (double eps : {1e-1, 1e-3, 1e-5}) CHECK(finite_diff_check(linear, p, eps).max_rel_error < 1e-9);

  std::vector<Tensor> x{Tensor::scalar(1.0, true)};
  auto cube = [&] { return mul(mul(x[0], x[0]), x[0]); };
  // The central difference of x^3 has truncation error eps^2 exactly.
  auto rep = finite_diff_check(cube, x, 1e-4);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("finite difference checker reports non-finite evaluations") {
  std::vector<Tensor> x{Tensor::row({1.0, 1e-6}, true)};
  auto f = [&] { return sum(log(x[0])); };
  try {
    finite_diff_check(f, x, 1e-3);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("param 0 coordinate 1") != std::string::npos);
  }
}

TEST_CASE("every differentiable op passes a gradient check") {
  Rng rng(5);
  auto check = [](const std::function<Tensor()>& f, std::vector<Tensor>& params) {
    auto rep = finite_diff_check(f, params, 1e-5);
    CHECK(rep.max_rel_error < 1e-5);
    CHECK(rep.kink_crossings * 20 <= rep.coordinates);
  };
  std::vector<Tensor> ab{leaf({3, 4}, rng), leaf({4, 2}, rng)};
  check([&] { return sum(mul(matmul(ab[0], ab[1]), matmul(ab[0], ab[1]))); }, ab);

  std::vector<Tensor> u{leaf({2, 3}, rng), leaf({2, 3}, rng)};
  check([&] { return sum(mul(add(u[0], u[1]), sub(u[0], scale(u[1], 0.5)))); }, u);
  check([&] { return mean(exp(add_scalar(u[0], 0.1))); }, u);
  check([&] { return sum(mul(relu(u[0]), u[1])); }, u);
  check([&] { return sum(mul(clamp(u[0], -0.5, 0.5), u[1])); }, u);
  check([&] { return sum(mul(maximum(u[0], u[1]), u[0])); }, u);
  check([&] { return sum(mul(transpose(u[0]), transpose(u[1]))); }, u);
  check([&] { return sum(mul(reshape(u[0], {3, 2}), reshape(u[1], {3, 2}))); }, u);

  std::vector<Tensor> pos{Tensor::from({1, 3}, {0.5, 1.5, 2.5}, true)};
  check([&] { return sum(log(pos[0])); }, pos);

  std::vector<Tensor> cat{leaf({2, 2}, rng), leaf({2, 3}, rng), leaf({1, 2}, rng)};
  check([&] {
    std::vector<Tensor> cols{cat[0], cat[1]};
    auto c = concat(cols, 1);
    std::vector<Tensor> rows{cat[0], cat[2]};
    auto r = concat(rows, 0);
    return add(sum(mul(c, c)), sum(mul(r, sigmoid(r))));
  }, cat);

  std::vector<Tensor> bc{leaf({3, 4}, rng), leaf({1, 4}, rng)};
  check([&] {
    auto a = add_row_broadcast(bc[0], bc[1]);
    auto m = mul_row_broadcast(bc[0], bc[1]);
    return sum(mul(a, m));
  }, bc);
  const std::vector<double> factors{1.0, 0.0, 2.0};
  check([&] { return sum(mul(scale_rows(bc[0], factors), bc[0])); }, bc);

  std::vector<Tensor> ln{leaf({3, 4}, rng), leaf({1, 4}, rng), leaf({1, 4}, rng)};
  auto target = Tensor::from({3, 4}, std::vector<double>(12, 0.3));
  check([&] { return sum(mul(layer_norm(ln[0], ln[1], ln[2]), add(ln[0], target))); }, ln);

  std::vector<Tensor> sm{leaf({3, 3}, rng)};
  auto w = Tensor::from({3, 3}, {1, 2, 3, -1, 0, 4, 2, 2, -3});
  check([&] { return sum(mul(safe_softmax(sm[0]), w)); }, sm);
  check([&] { return sum(mul(safe_softmax(sm[0], 0), w)); }, sm);

  std::vector<Tensor> conv{leaf({2, 5, 5}, rng), leaf({3, 2, 3, 3}, rng, 0.5), leaf({3}, rng)};
  check([&] {
    auto y = conv2d(conv[0], conv[1], conv[2]);
    return sum(mul(y, y));
  }, conv);
  std::vector<Tensor> pool{leaf({2, 4, 4}, rng)};
  check([&] {
    auto y = max_pool2d(pool[0]);
    return add(sum(mul(y, y)), sum(mul(global_avg_pool(pool[0]), global_avg_pool(pool[0]))));
  }, pool);

  std::vector<Tensor> table{leaf({4, 3}, rng)};
  check([&] {
    auto r = embedding_row(table[0], 2);
    return sum(mul(r, r));
  }, table);
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(21);
  auto x = leaf({2, 4, 5}, rng);
  auto w = leaf({3, 2, 3, 3}, rng);
  auto b = leaf({3}, rng);
  auto y = conv2d(x, w, b);
  REQUIRE(y.shape() == Shape{3, 4, 5});
  const auto xv = x.values(), wv = w.values(), bv = b.values(), yv = y.values();
  for (std::size_t o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) {
        double acc = bv[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int ii = i + di, jj = j + dj;
              if (ii < 0 || jj < 0 || ii >= 4 || jj >= 5) continue;
              acc += xv[(c * 4 + ii) * 5 + jj] * wv[((o * 2 + c) * 3 + (di + 1)) * 3 + (dj + 1)];
            }
        CHECK(yv[(o * 4 + i) * 5 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("max pool and global average pool") {
  auto x = Tensor::from({1, 3, 4}, {1, 5, 2, 0, 3, 4, 8, 1, 9, 9, 9, 9});
  auto p = max_pool2d(x);
  CHECK(p.shape() == Shape{1, 1, 2});
  CHECK(vals(p) == std::vector<double>{5, 8});
  auto g = global_avg_pool(Tensor::from({2, 1, 2}, {1, 3, -2, 2}));
  CHECK(vals(g) == std::vector<double>{2, 0});
}

TEST_CASE("layer norm with unit gain and zero offset standardizes rows") {
  auto x = Tensor::from({1, 4}, {1, 2, 3, 4});
  auto y = vals(layer_norm(x, Tensor::full({1, 4}, 1.0), Tensor::zeros({1, 4})));
  const double var = 1.25;
  CHECK(y[0] == doctest::Approx(-1.5 / std::sqrt(var + 1e-5)).epsilon(1e-12));
  CHECK(y[0] + y[1] + y[2] + y[3] == doctest::Approx(0.0));
}

TEST_CASE("global-norm helpers on gradients") {
  auto a = Tensor::row({3.0}, true);
  auto b = Tensor::row({4.0}, true);
  auto g = backward(add(sum(scale(a, 3.0)), sum(scale(b, 4.0))));
  CHECK(g.squared_norm() == 25.0);
  g.scale_all(0.5);
  CHECK(g.of(a).item() == 1.5);
  CHECK(g.of(b).item() == 2.0);
}

TEST_CASE("linear layer and parameter snapshots") {
  Rng rng(2);
  auto lin = Linear::init(3, 2, rng);
  ParameterList params;
  lin.append(params, "lin", ParamGroup::head);
  REQUIRE(params.size() == 2);
  auto snap = snapshot(params);
  params[0].tensor.mutable_values()[0] += 1.0;
  CHECK(params[0].tensor.values()[0] != snap[0].tensor.values()[0]);
  restore(params, snap);
  CHECK(params[0].tensor.values()[0] == snap[0].tensor.values()[0]);
}
