#pragma once

#include <cstddef>
#include <span>

#include "rifle/tensor.hpp"

namespace rifle {

/// Rows of features with either class-index labels (num_classes > 0) or
/// real-valued regression targets (num_classes == 0).
struct Dataset {
  Tensor features;  // [n, d...]
  Tensor targets;   // [n] class indices, or [n, k] regression targets
  std::size_t num_classes = 0;

  std::size_t size() const { return features.empty() ? 0 : features.dim(0); }
  bool is_classification() const { return num_classes > 0; }
  std::size_t feature_size() const { return size() ? features.size() / size() : 0; }

  /// Rows `rows` of features and targets, in the given order.
  Dataset gather(std::span<const std::size_t> rows) const;
  /// Throws InvalidArgument when features/targets disagree or labels are out of range.
  void validate() const;
};

}  // namespace rifle
