#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rifle/network.hpp"
#include "rifle/param_store.hpp"
#include "rifle/regularizers.hpp"
#include "rifle/rng.hpp"
#include "rifle/tensor.hpp"

namespace rifle::testing {

/// A small network plus a batch to differentiate it on.
struct GradCase {
  std::string label;
  Model model;
  ParamStore params;
  Tensor batch;
  Tensor labels;
  std::optional<RegularizerKind> reg;
};

inline Model mlp3(std::size_t in, std::size_t classes) {
  Model m;
  m.input_shape = {in};
  m.layers = {LayerSpec::dense(in, 8, "fc1"), LayerSpec::relu(), LayerSpec::dense(8, 6, "fc2"), LayerSpec::relu(),
              LayerSpec::dense(6, classes, "head"), LayerSpec::softmax_ce()};
  return m;
}

/// Architectures covering every differentiable layer kind and both losses.
inline std::vector<Model> gradient_architectures() {
  std::vector<Model> out;
  {
    Model m;  // linear regression
    m.input_shape = {5};
    m.layers = {LayerSpec::dense(5, 1, "head"), LayerSpec::mse()};
    out.push_back(m);
  }
  out.push_back(mlp3(6, 3));
  {
    Model m;  // conv3x3 + relu + dense on an 8x8 input
    m.input_shape = {1, 8, 8};
    m.layers = {LayerSpec::conv3x3(1, 2, 1, "conv"), LayerSpec::relu(), LayerSpec::dense(128, 3, "head"),
                LayerSpec::softmax_ce()};
    out.push_back(m);
  }
  {
    Model m;  // residual stages with projection, pooling, and identity shortcut
    m.input_shape = {2, 6, 6};
    m.layers = {LayerSpec::residual(2, 3, 2, "stage1"), LayerSpec::relu(),
                LayerSpec::residual(3, 3, 1, "stage2"), LayerSpec::relu(),
                LayerSpec::global_avg_pool(),          LayerSpec::dense(3, 4, "head"),
                LayerSpec::softmax_ce()};
    out.push_back(m);
  }
  {
    Model m;  // dropout with a frozen mask
    m.input_shape = {6};
    m.layers = {LayerSpec::dense(6, 10, "fc1"), LayerSpec::relu(), LayerSpec::dropout(0.3),
                LayerSpec::dense(10, 3, "head"), LayerSpec::softmax_ce()};
    out.push_back(m);
  }
  {
    Model m;  // dropconnect head, regression loss with two outputs
    m.input_shape = {4};
    m.layers = {LayerSpec::dense(4, 7, "fc1"), LayerSpec::relu(), LayerSpec::dropconnect(7, 2, 0.4, "head"),
                LayerSpec::mse()};
    out.push_back(m);
  }
  {
    Model m;  // stochastic-depth residual block with frozen gates
    m.input_shape = {2, 5, 5};
    m.layers = {LayerSpec::conv3x3(2, 3, 1, "stem"), LayerSpec::relu(),
                LayerSpec::residual(3, 3, 1, "stage1", 0.6), LayerSpec::relu(),
                LayerSpec::residual(3, 4, 2, "stage2", 0.5), LayerSpec::relu(),
                LayerSpec::global_avg_pool(), LayerSpec::dense(4, 3, "head"), LayerSpec::softmax_ce()};
    out.push_back(m);
  }
  for (auto& m : out) m.validate();
  return out;
}

/// Parameters with nonzero biases and an unsaturated head of std
/// 1/sqrt(fan_in), so gradients sit well above the finite-difference noise
/// floor (about 1e-11 absolute at epsilon 1e-5).
inline ParamStore randomized_params(const Model& model, Rng& rng) {
  const double head_std = 1.0 / std::sqrt(static_cast<double>(model.layers[model.head_index()].in));
  ParamStore p = init_params(model, rng, head_std);
  for (auto& e : p) {
    if (e.name.size() >= 5 && e.name.compare(e.name.size() - 5, 5, ".bias") == 0) {
      e.value = gaussian_init(e.value.shape(), 0.0, 0.1, rng);
    }
  }
  return p;
}

inline GradCase make_grad_case(const Model& model, std::uint64_t seed, std::size_t batch = 4) {
  Rng rng(seed);
  GradCase c;
  c.model = model;
  c.params = randomized_params(model, rng);
  Shape bshape = {batch};
  bshape.insert(bshape.end(), model.input_shape.begin(), model.input_shape.end());
  c.batch = gaussian_init(bshape, 0.0, 1.0, rng);
  if (model.loss_kind() == LayerKind::kSoftmaxCeLoss) {
    c.labels = Tensor({batch});
    for (std::size_t i = 0; i < batch; ++i) c.labels[i] = static_cast<double>(rng.uniform_index(model.num_classes()));
  } else {
    c.labels = gaussian_init({batch, model.num_classes()}, 0.0, 1.0, rng);
  }
  return c;
}

}  // namespace rifle::testing
