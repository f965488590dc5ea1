#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "rifle/assignment.hpp"
#include "rifle/errors.hpp"
#include "rifle/oracle.hpp"

using namespace rifle;

namespace {

double column_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j, GroundCost cost) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.dim(0); ++r) {
    const double d = a.at(r, i) - b.at(r, j);
    s += d * d;
  }
  return cost == GroundCost::kEuclidean ? std::sqrt(s) : s;
}

/// Minimum mean matched cost over every permutation.
double brute_force_ot(const Tensor& a, const Tensor& b, GroundCost cost = GroundCost::kEuclidean) {
  const std::size_t h = a.dim(1);
  std::vector<std::size_t> perm(h);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < h; ++i) s += column_distance(a, i, b, perm[i], cost);
    best = std::min(best, s / static_cast<double>(h));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor permute_columns(const Tensor& a, const std::vector<std::size_t>& perm) {
  Tensor out(a.shape());
  for (std::size_t r = 0; r < a.dim(0); ++r)
    for (std::size_t c = 0; c < a.dim(1); ++c) out.at(r, c) = a.at(r, perm[c]);
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_index(i)]);
  return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_CASE("make_oracles") {
  const OracleSpec spec;
  const OracleWeights w = make_oracles(spec);
  CHECK(w.w1.shape() == Shape{100, 50});
  CHECK(w.w2.shape() == Shape{50, 1});
  CHECK(w.w3.shape() == Shape{50, 1});
  const OracleWeights again = make_oracles(spec);
  CHECK(bitwise_equal(w.w1, again.w1));
  CHECK(bitwise_equal(w.w2, again.w2));
  CHECK(bitwise_equal(w.w3, again.w3));
  CHECK_FALSE(bitwise_equal(w.w2, w.w3));

  double mean = 0.0, sq = 0.0;
  for (double v : w.w1.data()) mean += v, sq += v * v;
  mean /= 5000.0;
  CHECK(std::abs(mean) < 0.06);
  CHECK(std::abs(std::sqrt(sq / 5000.0) - 1.0) < 0.05);

  // Both teachers see the identical first-layer activations.
  Rng rng(1);
  const Tensor x = gaussian_init({10, 100}, 0.0, 1.0, rng);
  const Tensor h = oracle_hidden(w.w1, x);
  CHECK(bitwise_equal(oracle_output(w.w1, w.w2, x), matmul(h, w.w2)));
  CHECK(bitwise_equal(oracle_output(w.w1, w.w3, x), matmul(h, w.w3)));
}

TEST_CASE("synth_dataset") {
  const OracleSpec spec;
  const OracleWeights w = make_oracles(spec);
  SUBCASE("zero noise gives the oracle output") {
    Rng rng(2);
    const Dataset d = synth_dataset(w.w1, w.w2, 200, 0.0, rng);
    CHECK(bitwise_equal(d.targets, oracle_output(w.w1, w.w2, d.features)));
  }
  SUBCASE("noise variance") {
    Rng rng(3);
    const Dataset d = synth_dataset(w.w1, w.w3, 100000, 0.01, rng);
    const Tensor clean = oracle_output(w.w1, w.w3, d.features);
    double s = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) s += (d.targets[i] - clean[i]) * (d.targets[i] - clean[i]);
    CHECK(std::abs(s / 100000.0 - 0.01) < 0.03 * 0.01);
  }
  SUBCASE("default size") {
    Rng rng(4);
    const Dataset d = synth_dataset(w.w1, w.w2, spec, rng);
    CHECK(d.size() == 1000);
    CHECK(d.features.shape() == Shape{1000, 100});
  }
}

TEST_CASE("ot_distance") {
  Rng rng(5);
  SUBCASE("identical inputs") {
    const Tensor a = gaussian_init({8, 6}, 0.0, 1.0, rng);
    const auto plan = ot_distance(a, a);
    CHECK(plan.total == 0.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(plan.matching[i] == i);
  }
  SUBCASE("column permutation") {
    const Tensor a = gaussian_init({8, 7}, 0.0, 1.0, rng);
    CHECK(ot_distance(a, permute_columns(a, random_permutation(7, rng))).total == 0.0);
  }
  SUBCASE("brute force over 5! on 8 x 5") {
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor a = gaussian_init({8, 5}, 0.0, 1.0, rng);
      const Tensor b = gaussian_init({8, 5}, 0.0, 1.0, rng);
      CHECK(rel(ot_distance(a, b).total, brute_force_ot(a, b)) < 1e-12);
      CHECK(rel(ot_distance(a, b, GroundCost::kSquaredEuclidean).total,
                brute_force_ot(a, b, GroundCost::kSquaredEuclidean)) < 1e-12);
    }
  }
  SUBCASE("plan is consistent") {
    const Tensor a = gaussian_init({4, 9}, 0.0, 1.0, rng);
    const Tensor b = gaussian_init({4, 9}, 0.0, 1.0, rng);
    const auto plan = ot_distance(a, b);
    std::vector<std::size_t> sorted = plan.matching;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 9; ++i) CHECK(sorted[i] == i);
    double mean = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(plan.costs[i] == column_distance(a, i, b, plan.matching[i], GroundCost::kEuclidean));
      mean += plan.costs[i];
    }
    CHECK(rel(plan.total, mean / 9.0) < 1e-15);
  }
  SUBCASE("metric properties") {
    for (int trial = 0; trial < 30; ++trial) {
      const Tensor a = gaussian_init({6, 6}, 0.0, 1.0, rng);
      const Tensor b = gaussian_init({6, 6}, 0.0, 1.0, rng);
      const Tensor c = gaussian_init({6, 6}, 0.0, 1.0, rng);
      const double ab = ot_distance(a, b).total, ba = ot_distance(b, a).total;
      CHECK(std::abs(ab - ba) < 1e-12);
      CHECK(ab <= ot_distance(a, c).total + ot_distance(c, b).total + 1e-9);
      const auto perm = random_permutation(6, rng);
      CHECK(std::abs(ot_distance(permute_columns(a, perm), permute_columns(b, perm)).total - ab) < 1e-12);
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ot_distance(Tensor({3, 4}), Tensor({4, 3})), InvalidArgument);
  }
}

TEST_CASE("solve_assignment") {
  const Tensor cost = Tensor::matrix({{4, 1, 3}, {2, 0, 5}, {3, 2, 2}});
  const Assignment a = solve_assignment(cost);
  CHECK(a.total_cost == 5.0);  // (0,1) + (1,0) + (2,2)
  CHECK(a.column_for_row == std::vector<std::size_t>{1, 0, 2});
  CHECK_THROWS_AS(solve_assignment(Tensor({2, 3})), ShapeError);
  Tensor bad({2, 2});
  bad[1] = std::nan("");
  CHECK_THROWS_AS(solve_assignment(bad), InvalidArgument);
}

TEST_CASE("run_transfer with zero fine-tuning epochs") {
  OracleSpec spec;
  spec.n_samples = 200;
  spec.n_test = 200;
  spec = spec.with_seed(3);
  TransferConfig cfg;
  cfg.source_epochs = 3;
  cfg.target.epochs = 0;
  const TransferReport r = run_transfer(spec, cfg);
  CHECK(r.mse_l2 == r.mse_rifle);
  CHECK(r.ot_l2 == r.ot_rifle);
  CHECK(r.ot_l2 == r.ot_source);
  CHECK(std::isfinite(r.mse_scratch_source));
}

TEST_CASE("run_transfer is deterministic") {
  OracleSpec spec;
  spec.n_samples = 100;
  spec.n_test = 100;
  spec = spec.with_seed(4);
  TransferConfig cfg;
  cfg.source_epochs = 2;
  cfg.target.epochs = 4;
  const TransferReport a = run_transfer(spec, cfg);
  const TransferReport b = run_transfer(spec, cfg);
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}
