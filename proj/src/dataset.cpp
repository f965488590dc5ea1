#include "rifle/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "rifle/errors.hpp"

namespace rifle {

namespace {

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t width = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<double> data(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = t.data().subspan(rows[r] * width, width);
    std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Dataset Dataset::gather(std::span<const std::size_t> rows) const {
  for (auto r : rows) {
    if (r >= size()) throw InvalidArgument("Dataset::gather: row " + std::to_string(r) + " out of range");
  }
  return {gather_rows(features, rows), gather_rows(targets, rows), num_classes};
}

void Dataset::validate() const {
  if (features.empty()) throw InvalidArgument("dataset is empty");
  if (targets.empty() || targets.dim(0) != features.dim(0)) {
    throw InvalidArgument("dataset has " + std::to_string(features.dim(0)) + " feature rows but targets " +
                          to_string(targets.shape()));
  }
  if (!is_classification()) return;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double y = targets[i];
    if (!(y >= 0.0) || y != std::floor(y) || y >= static_cast<double>(num_classes)) {
      throw InvalidArgument("label " + std::to_string(y) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace rifle
