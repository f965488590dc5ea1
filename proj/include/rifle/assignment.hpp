#pragma once

#include <cstddef>
#include <vector>

#include "rifle/tensor.hpp"

namespace rifle {

struct Assignment {
  std::vector<std::size_t> column_for_row;  // a permutation of 0..n-1
  double total_cost = 0.0;
};

/// Exact minimum-cost perfect matching on a square [n x n] cost matrix
/// (shortest augmenting paths with dual potentials, O(n^3)).
/// Throws ShapeError for a non-square matrix and InvalidArgument for
/// non-finite costs.
Assignment solve_assignment(const Tensor& cost);

}  // namespace rifle
