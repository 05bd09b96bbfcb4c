#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace attenlab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  std::vector<double> v(shape_volume(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Independent O(mnk) reference.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("matmul identity and hand sums") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {3.5, -1.25, 2, 7});
  CHECK(max_abs_diff(matmul(eye, m).values(), m.values()) == 0.0);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor ones = Tensor::from_data({2, 1}, {1, 1});
  Tensor c = matmul(a, ones);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.values()[0] == 3.0);
  CHECK(c.values()[1] == 7.0);
}

TEST_CASE("matmul matches the loop oracle on random input") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 5, k = 4, n = 3;
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    auto expect = matmul_oracle(a.values(), b.values(), m, k, n);
    CHECK(max_abs_diff(matmul(a, b).values(), expect) <= 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  Tensor a = Tensor::zeros({5, 4});
  Tensor b = Tensor::zeros({3, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(5,4)") != std::string::npos);
    CHECK(msg.find("(3,2)") != std::string::npos);
  }
}

TEST_CASE("elementwise identities") {
  Rng rng(5);
  Tensor t = random_tensor({3, 4}, rng);
  CHECK(max_abs_diff(add(t, Tensor::zeros({3, 4})).values(), t.values()) == 0.0);
  CHECK(max_abs_diff(mul(t, 1.0).values(), t.values()) == 0.0);

  Tensor map = random_tensor({4, 5, 3}, rng);
  Tensor gate = Tensor::full({3}, 1.0);
  CHECK(max_abs_diff(mul(map, gate).values(), map.values()) == 0.0);

  CHECK_THROWS_AS(add(t, Tensor::zeros({4, 3})), DimensionError);
  CHECK_THROWS_AS(mul(map, Tensor::zeros({4})), DimensionError);
}

TEST_CASE("broadcast backward sums over the leading axes") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from_data({3}, {10, 20, 30}, true);
  backward(sum(mul(a, b)));
  const std::vector<double> da_expect{10, 20, 30, 10, 20, 30};
  const std::vector<double> db_expect{1 + 4, 2 + 5, 3 + 6};
  CHECK(max_abs_diff(a.grad(), da_expect) == 0.0);
  CHECK(max_abs_diff(b.grad(), db_expect) == 0.0);
}

TEST_CASE("reshape round trip is the identity") {
  Rng rng(7);
  Tensor map = random_tensor({4, 5, 3}, rng);
  Tensor back = reshape(reshape(map, {20, 3}), {4, 5, 3});
  CHECK(back.shape() == map.shape());
  CHECK(max_abs_diff(back.values(), map.values()) == 0.0);
  CHECK_THROWS_AS(reshape(map, {7, 3}), DimensionError);
}

TEST_CASE("concat stitches along the requested axis") {
  Rng rng(9);
  Tensor m1 = random_tensor({4, 5, 2}, rng);
  Tensor m2 = random_tensor({4, 5, 2}, rng);
  Tensor m3 = random_tensor({4, 5, 2}, rng);
  Tensor big = concat({m1, m2, m3}, 2);
  CHECK(big.shape() == Shape{4, 5, 6});
  CHECK(big.at({2, 3, 0}) == m1.at({2, 3, 0}));
  CHECK(big.at({2, 3, 3}) == m2.at({2, 3, 1}));
  CHECK(big.at({2, 3, 5}) == m3.at({2, 3, 1}));

  Tensor v1 = Tensor::from_data({2}, {1, 2});
  Tensor v2 = Tensor::from_data({3}, {3, 4, 5});
  Tensor v = concat({v1, v2}, 0);
  CHECK(v.shape() == Shape{5});
  CHECK(v.values() == std::vector<double>{1, 2, 3, 4, 5});

  CHECK_THROWS_AS(concat({m1, random_tensor({3, 5, 2}, rng)}, 2), DimensionError);
}

TEST_CASE("concat backward splits gradients to the originals") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from_data({2, 1}, {5, 6}, true);
  Tensor joined = concat({a, b}, 1);
  backward(sum(mul(joined, joined)));
  CHECK(max_abs_diff(a.grad(), {2, 4, 6, 8}) == 0.0);
  CHECK(max_abs_diff(b.grad(), {10, 12}) == 0.0);
}

TEST_CASE("select and stack are inverse-ish and differentiable") {
  Rng rng(13);
  Tensor batch = random_tensor({3, 2, 2}, rng, -1, 1, true);
  Tensor s1 = select(batch, 1);
  CHECK(s1.shape() == Shape{2, 2});
  Tensor rebuilt = stack({select(batch, 0), select(batch, 1), select(batch, 2)});
  CHECK(max_abs_diff(rebuilt.values(), batch.values()) == 0.0);
  backward(sum(rebuilt));
  CHECK(max_abs_diff(batch.grad(), std::vector<double>(12, 1.0)) == 0.0);
  CHECK_THROWS_AS(select(batch, 3), DimensionError);
}

TEST_CASE("backward of sum gives ones; of sum of squares gives 2x") {
  Tensor x = Tensor::from_data({2, 3}, {1, -2, 3, 0.5, -0.25, 4}, true);
  backward(sum(x));
  CHECK(max_abs_diff(x.grad(), std::vector<double>(6, 1.0)) == 0.0);

  Tensor y = Tensor::from_data({2, 3}, {1, -2, 3, 0.5, -0.25, 4}, true);
  backward(sum(mul(y, y)));
  std::vector<double> expect;
  for (double v : y.values()) expect.push_back(2 * v);
  CHECK(max_abs_diff(y.grad(), expect) <= 1e-15);
}

TEST_CASE("backward visits shared nodes once (diamond graph)") {
  Tensor x = Tensor::from_data({3}, {1.5, -0.5, 2.0}, true);
  Tensor sq = mul(x, x);
  backward(sum(add(sq, x)));  // d/dx (x^2 + x) = 2x + 1
  std::vector<double> expect;
  for (double v : x.values()) expect.push_back(2 * v + 1);
  CHECK(max_abs_diff(x.grad(), expect) <= 1e-15);
}

TEST_CASE("repeated backward accumulates leaf gradients") {
  Tensor x = Tensor::from_data({2}, {3, 4}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(max_abs_diff(x.grad(), {12, 16}) <= 1e-15);
  x.zero_grad();
  backward(loss);
  CHECK(max_abs_diff(x.grad(), {6, 8}) <= 1e-15);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("ops do not mutate their inputs") {
  Rng rng(17);
  Tensor a = random_tensor({3, 3}, rng, -1, 1, true);
  Tensor b = random_tensor({3, 3}, rng, -1, 1, true);
  const std::vector<double> a_before = a.values();
  const std::vector<double> b_before = b.values();
  Tensor c = add(matmul(a, b), mul(a, b));
  backward(sum(relu(c)));
  CHECK(max_abs_diff(a.values(), a_before) == 0.0);
  CHECK(max_abs_diff(b.values(), b_before) == 0.0);
}

TEST_CASE("NoGradGuard suppresses recording") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("softmax slices sum to one and shifting logits changes nothing") {
  Rng rng(23);
  Tensor x = random_tensor({6, 5}, rng, -4, 4);
  Tensor y = softmax(x, 1);
  for (int i = 0; i < 6; ++i) {
    double row = 0.0;
    for (int j = 0; j < 5; ++j) {
      const double p = y.at({i, j});
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      row += p;
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
  Tensor shifted = softmax(add(x, 1234.5), 1);
  CHECK(max_abs_diff(shifted.values(), y.values()) <= 1e-12);

  Tensor flat = softmax(Tensor::full({4}, 2.5), 0);
  for (double v : flat.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Tensor two = softmax(Tensor::from_data({2}, {0.0, std::log(3.0)}), 0);
  CHECK(two.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(two.values()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("grad_check baseline: sum is exact") {
  Rng rng(29);
  Tensor x = random_tensor({3, 4}, rng);
  CHECK(grad_check([](const Tensor& t) { return sum(t); }, x) <= 1e-10);
}

TEST_CASE("grad_check over core op compositions") {
  Rng rng(31);
  Tensor x = random_tensor({4, 3}, rng, 0.2, 1.5);  // keep relu away from ties
  auto f = [](const Tensor& t) {
    Tensor w = Tensor::from_data({3, 2}, {0.3, -0.2, 0.7, 0.1, -0.5, 0.4});
    return sum(sigmoid(matmul(relu(t), w)));
  };
  CHECK(grad_check(f, x) <= 1e-4);

  Tensor y = random_tensor({5, 4}, rng, -2, 2);
  CHECK(grad_check([](const Tensor& t) { return sum(mul(softmax(t, 1), softmax(t, 1))); }, y) <=
        1e-4);

  Tensor z = random_tensor({2, 6}, rng, -1, 1);
  CHECK(grad_check([](const Tensor& t) { return sum(mul(transpose(t), transpose(t))); }, z) <=
        1e-4);
}

TEST_CASE("transpose flips indices") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor at = transpose(a);
  CHECK(at.shape() == Shape{3, 2});
  CHECK(at.values() == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("finite checks reject NaN produced by matmul") {
  Tensor a = Tensor::from_data({1, 2}, {1e308, 1e308});
  Tensor b = Tensor::from_data({2, 1}, {1e308, 1e308});
  CHECK_THROWS_AS(matmul(a, b), NumericError);
}
