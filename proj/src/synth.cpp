#include "rifle/synth.hpp"

#include <cmath>
#include <vector>

#include "rifle/errors.hpp"
#include "rifle/rng.hpp"

namespace rifle {

namespace {

std::vector<Tensor> blob_centers(std::size_t blobs, std::size_t dim, double separation, Rng& rng) {
  std::vector<Tensor> centers;
  centers.reserve(blobs);
  for (std::size_t k = 0; k < blobs; ++k) {
    Tensor u = gaussian_init({dim}, 0.0, 1.0, rng);
    u *= separation / frobenius_norm(u);
    centers.push_back(std::move(u));
  }
  return centers;
}

// `per_class` examples of every class; class c draws alternately from its two blobs.
Dataset sample(const std::vector<Tensor>& centers, std::size_t num_classes, std::size_t per_class,
               bool target_partition, Rng& rng) {
  const std::size_t dim = centers.front().size();
  const std::size_t n = num_classes * per_class;
  Tensor x({n, dim});
  Tensor y({n});
  std::size_t row = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t blob_a = target_partition ? 2 * c : c;
    const std::size_t blob_b = target_partition ? 2 * c + 1 : c + num_classes;
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      const Tensor& center = centers[i % 2 == 0 ? blob_a : blob_b];
      for (std::size_t d = 0; d < dim; ++d) x.at(row, d) = center[d] + rng.normal();
      y[row] = static_cast<double>(c);
    }
  }
  return {std::move(x), std::move(y), num_classes};
}

}  // namespace

SynthTransferData make_synth_classification(std::size_t num_classes, std::size_t per_class,
                                            std::size_t dim, double separation,
                                            std::uint64_t seed, std::size_t test_per_class) {
  if (num_classes < 2) throw InvalidArgument("make_synth_classification: num_classes must be >= 2");
  if (per_class == 0 || dim == 0) {
    throw InvalidArgument("make_synth_classification: per_class and dim must be positive");
  }
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw InvalidArgument("make_synth_classification: separation must be finite and >= 0");
  }
  if (test_per_class == 0) test_per_class = per_class;
  const Rng root(seed);
  Rng center_rng = root.derive(1);
  const auto centers = blob_centers(2 * num_classes, dim, separation, center_rng);
  Rng r_src_train = root.derive(2), r_src_test = root.derive(3);
  Rng r_tgt_train = root.derive(4), r_tgt_test = root.derive(5);
  return {sample(centers, num_classes, per_class, false, r_src_train),
          sample(centers, num_classes, test_per_class, false, r_src_test),
          sample(centers, num_classes, per_class, true, r_tgt_train),
          sample(centers, num_classes, test_per_class, true, r_tgt_test)};
}

}  // namespace rifle
