#include <doctest.h>

#include <cmath>

#include "rifle/errors.hpp"
#include "rifle/rng.hpp"
#include "rifle/tensor.hpp"

using namespace rifle;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) { return gaussian_init({r, c}, 0.0, 1.0, rng); }

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      c.at(i, j) = static_cast<double>(s);
    }
  return c;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(Tensor(Shape{}), InvalidArgument);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), InvalidArgument);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), InvalidArgument);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5);
}

TEST_CASE("gaussian_init") {
  Rng rng(7);
  SUBCASE("zero std gives the mean") {
    const Tensor t = gaussian_init({2, 2}, 0.0, 0.0, rng);
    for (double v : t.data()) CHECK(v == 0.0);
  }
  SUBCASE("sample moments") {
    const Tensor t = gaussian_init({100000}, 0.0, 1.0, rng);
    double mean = 0.0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (double v : t.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(t.size() - 1));
    CHECK(std::abs(mean) <= 0.02);
    CHECK(sd >= 0.98);
    CHECK(sd <= 1.02);
  }
  SUBCASE("tail bound at small delta") {
    const double delta = 0.01;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng r(seed);
      const Tensor t = gaussian_init({50, 1}, 0.0, delta, r);
      for (double v : t.data()) CHECK(std::abs(v) < 6 * delta);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(gaussian_init({2}, 0.0, -1.0, rng), InvalidArgument);
    CHECK_THROWS_AS(gaussian_init({}, 0.0, 1.0, rng), InvalidArgument);
  }
  SUBCASE("bitwise reproducible") {
    Rng a(99), b(99);
    CHECK(bitwise_equal(gaussian_init({13, 4}, 0.5, 2.0, a), gaussian_init({13, 4}, 0.5, 2.0, b)));
  }
}

TEST_CASE("matmul") {
  CHECK(matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{5, 6}, {7, 8}})) ==
        Tensor::matrix({{5, 6}, {7, 8}}));
  CHECK(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})) == Tensor::matrix({{11}}));

  Rng rng(3);
  const Tensor a = random_matrix(7, 5, rng);
  const Tensor b = random_matrix(5, 3, rng);
  CHECK(max_rel_err(matmul(a, b), naive_matmul(a, b)) < 1e-12);

  SUBCASE("large product against the naive oracle") {
    const Tensor x = random_matrix(67, 129, rng);
    const Tensor y = random_matrix(129, 45, rng);
    CHECK(max_rel_err(matmul(x, y), naive_matmul(x, y)) < 1e-10);
  }
  SUBCASE("associativity") {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor p = random_matrix(6, 4, rng), q = random_matrix(4, 5, rng), r = random_matrix(5, 3, rng);
      const Tensor lhs = matmul(matmul(p, q), r);
      const Tensor rhs = matmul(p, matmul(q, r));
      CHECK(frobenius_norm(lhs - rhs) <= 1e-9 * frobenius_norm(lhs));
    }
  }
  SUBCASE("shape error names both shapes") {
    try {
      matmul(Tensor({2, 3}), Tensor({4, 5}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x5]") != std::string::npos);
    }
  }
}

TEST_CASE("frobenius_norm") {
  CHECK(frobenius_norm(Tensor({3, 3})) == 0.0);
  CHECK(frobenius_norm(Tensor::matrix({{3, 4}})) == 5.0);
  for (std::size_t n : {1u, 4u, 9u, 17u}) {
    Tensor eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
    CHECK(frobenius_norm(eye) == doctest::Approx(std::sqrt(static_cast<double>(n))).epsilon(1e-15));
  }
  Rng rng(5);
  const Tensor t = random_matrix(8, 9, rng);
  for (double c : {-3.5, 0.25, 1e6}) {
    const double lhs = frobenius_norm(c * t);
    const double rhs = std::abs(c) * frobenius_norm(t);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * rhs);
  }
}

TEST_CASE("elementwise arithmetic and transpose") {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK((a + a) == a * 2.0);
  CHECK((a - a) == Tensor({2, 3}));
  CHECK(transpose(a) == Tensor::matrix({{1, 4}, {2, 5}, {3, 6}}));
  Tensor b = a;
  CHECK_THROWS_AS(b += Tensor({3, 2}), ShapeError);
  CHECK(a.reshaped({3, 2}).values() == a.values());
  CHECK_THROWS_AS(a.reshaped({4}), ShapeError);
}

TEST_CASE("rng stream") {
  SUBCASE("fixed reference values") {
    // splitmix64 reference outputs for state 0.
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xE220A8397B1DCDAFull);
    CHECK(splitmix64(s) == 0x6E789E6AA1B965F4ull);
  }
  SUBCASE("same seed same stream, derived streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).derive(1), d = Rng(42).derive(2);
    CHECK(c.next_u64() != d.next_u64());
  }
  SUBCASE("uniform_index is unbiased") {
    Rng r(1);
    std::vector<int> counts(7, 0);
    const int n = 700000;
    for (int i = 0; i < n; ++i) ++counts[r.uniform_index(7)];
    for (int c : counts) CHECK(std::abs(c - n / 7) < 5 * std::sqrt(n / 7.0));
  }
  SUBCASE("uniform lies in [0, 1)") {
    Rng r(2);
    for (int i = 0; i < 100000; ++i) {
      const double u = r.uniform();
      CHECK_UNARY(u >= 0.0);
      CHECK_UNARY(u < 1.0);
    }
  }
}
