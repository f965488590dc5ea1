#pragma once

#include <cstddef>
#include <cstdint>

#include "rifle/dataset.hpp"

namespace rifle {

/// Source and target classification tasks over shared Gaussian blobs.
///
/// There are 2*num_classes blobs with centers separation * u_k (u_k random
/// unit vectors in R^dim) and unit-variance isotropic noise. The source task
/// labels blob k as class k mod num_classes, the target task as k / 2, so the
/// two tasks share every blob direction but partition the blobs differently.
struct SynthTransferData {
  Dataset source_train;
  Dataset source_test;
  Dataset target_train;
  Dataset target_test;
};

/// per_class training and test_per_class test examples per class, split
/// evenly over the class's two blobs. Throws InvalidArgument unless
/// separation >= 0, num_classes >= 2 and the counts are positive.
SynthTransferData make_synth_classification(std::size_t num_classes, std::size_t per_class,
                                            std::size_t dim, double separation,
                                            std::uint64_t seed, std::size_t test_per_class = 0);

}  // namespace rifle
