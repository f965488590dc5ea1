#include "rifle/assignment.hpp"

#include <limits>

#include "rifle/errors.hpp"

namespace rifle {

Assignment solve_assignment(const Tensor& cost) {
  if (cost.rank() != 2 || cost.dim(0) != cost.dim(1)) {
    throw ShapeError("solve_assignment: expected a square matrix, got " + to_string(cost.shape()));
  }
  if (!cost.all_finite()) throw InvalidArgument("solve_assignment: non-finite cost");
  const std::size_t n = cost.dim(0);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // 1-based arrays; index 0 is the virtual root of each augmenting path.
  std::vector<double> row_pot(n + 1, 0.0), col_pot(n + 1, 0.0);
  std::vector<std::size_t> row_of_col(n + 1, 0), prev_col(n + 1, 0);

  for (std::size_t row = 1; row <= n; ++row) {
    row_of_col[0] = row;
    std::size_t col = 0;
    std::vector<double> min_slack(n + 1, kInf);
    std::vector<bool> visited(n + 1, false);
    do {
      visited[col] = true;
      const std::size_t r = row_of_col[col];
      double delta = kInf;
      std::size_t next = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (visited[j]) continue;
        const double slack = cost.at(r - 1, j - 1) - row_pot[r] - col_pot[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          prev_col[j] = col;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          next = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (visited[j]) {
          row_pot[row_of_col[j]] += delta;
          col_pot[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      col = next;
    } while (row_of_col[col] != 0);
    // Flip the augmenting path.
    do {
      const std::size_t p = prev_col[col];
      row_of_col[col] = row_of_col[p];
      col = p;
    } while (col != 0);
  }

  Assignment result;
  result.column_for_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result.column_for_row[row_of_col[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) result.total_cost += cost.at(i, result.column_for_row[i]);
  return result;
}

}  // namespace rifle
