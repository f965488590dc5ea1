#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rifle/param_store.hpp"
#include "rifle/rng.hpp"
#include "rifle/tensor.hpp"

namespace rifle {

enum class LayerKind {
  kDense,
  kConv3x3,
  kRelu,
  kGlobalAvgPool,
  kResidualBlock,
  kDropout,
  kDropConnect,
  kSoftmaxCeLoss,
  kMseLoss,
};

const char* to_string(LayerKind kind);
/// Accepts the lower-case names used in config files ("dense", "conv3x3",
/// "relu", "global_avg_pool", "residual_block", "dropout", "dropconnect",
/// "softmax_ce_loss", "mse_loss"). Throws ConfigError otherwise.
LayerKind parse_layer_kind(const std::string& text);

enum class Mode { kTrain, kEval };

/// One layer of a feed-forward model.
///
/// `in`/`out` are features for DENSE and DROPCONNECT, channels for CONV3x3 and
/// RESIDUAL_BLOCK. A residual block is conv3x3(stride) -> relu -> conv3x3 on
/// the branch, with an identity shortcut when shapes allow and a strided
/// conv3x3 projection otherwise; output = shortcut + gate * branch.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t stride = 1;
  bool bias = true;
  std::optional<double> perturb;   // drop probability for DROPOUT / DROPCONNECT
  std::optional<double> survival;  // RESIDUAL_BLOCK branch survival probability

  static LayerSpec dense(std::size_t in, std::size_t out, std::string name = {}, bool bias = true);
  static LayerSpec conv3x3(std::size_t in, std::size_t out, std::size_t stride = 1,
                           std::string name = {});
  static LayerSpec relu();
  static LayerSpec global_avg_pool();
  static LayerSpec residual(std::size_t in, std::size_t out, std::size_t stride = 1,
                            std::string name = {}, double survival = 1.0);
  static LayerSpec dropout(double p);
  static LayerSpec dropconnect(std::size_t in, std::size_t out, double p, std::string name = {});
  static LayerSpec softmax_ce();
  static LayerSpec mse();

  bool has_params() const;
  bool is_loss() const { return kind == LayerKind::kSoftmaxCeLoss || kind == LayerKind::kMseLoss; }
};

/// Layer list plus the per-example input shape ({features} or {C, H, W}).
/// The last layer is a loss; the last DENSE/DROPCONNECT layer is the FC head.
struct Model {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  /// Checks the dim chain and probabilities, assigns default names
  /// ("layer<i>") and returns the per-example output shape of every layer.
  /// Throws InvalidArgument on any inconsistency.
  std::vector<Shape> validate();
  std::vector<Shape> layer_shapes() const;

  /// Index of the FC head layer. Throws InvalidArgument if there is none.
  std::size_t head_index() const;
  std::size_t num_classes() const;
  LayerKind loss_kind() const { return layers.back().kind; }
};

/// Parameters for `model`: He-normal backbone weights, zero biases, and an FC
/// head drawn from N(0, head_std^2).
ParamStore init_params(const Model& model, Rng& rng, double head_std = 0.01);

/// Per-layer forward intermediates and drawn masks for one mini-batch.
/// Holds its own copy of the parameters so backward needs nothing else.
class Tape {
 public:
  struct Record {
    Tensor input;
    Tensor output;
    Tensor mask;          // dropout [N,...], dropconnect [in,out], residual gate [N]
    Tensor branch_pre;    // residual conv1 output
    Tensor branch_act;    // relu(branch_pre)
    Tensor branch_out;    // residual conv2 output
  };

  Mode mode() const { return mode_; }
  double loss() const { return loss_; }
  const Tensor& labels() const { return labels_; }
  const Model& model() const { return model_; }
  const std::vector<Record>& records() const { return records_; }
  /// Softmax probabilities for a SOFTMAX_CE_LOSS model, empty otherwise.
  const Tensor& probabilities() const { return probabilities_; }

  /// Masks in layer order (empty tensors for layers without randomness),
  /// suitable for forward_with_masks.
  std::vector<Tensor> masks() const;

  /// Name of the first layer whose output holds a NaN/Inf.
  std::optional<std::string> first_nonfinite_layer() const;

 private:
  friend struct TapeBuilder;
  Mode mode_ = Mode::kEval;
  double loss_ = 0.0;
  Model model_;
  ParamStore params_;
  Tensor labels_;
  Tensor probabilities_;
  std::vector<Record> records_;

  friend ParamStore backward(const Tape& tape);
};

struct ForwardResult {
  double loss = 0.0;
  Tensor outputs;  // pre-loss activations (logits or predictions)
  Tape tape;
};

/// Mean per-example loss over the batch. `batch` is [N, features...] with the
/// per-example part matching model.input_shape in element count; `labels` is
/// [N] class indices for SOFTMAX_CE_LOSS or [N] / [N, k] targets for MSE_LOSS.
/// EVAL draws nothing from `rng`.
ForwardResult forward(const Model& model, const ParamStore& params, const Tensor& batch,
                      const Tensor& labels, Mode mode, Rng& rng);

/// TRAIN-mode forward replaying masks recorded on an earlier tape.
ForwardResult forward_with_masks(const Model& model, const ParamStore& params,
                                 const Tensor& batch, const Tensor& labels,
                                 const std::vector<Tensor>& masks);

/// Masks that make a TRAIN-mode forward compute exactly the EVAL-mode
/// function: all-ones dropout/dropconnect masks, residual gates equal to the
/// survival rate. Used to backpropagate through a deterministic forward.
std::vector<Tensor> neutral_masks(const Model& model, std::size_t batch_size);

/// Gradient of the empirical loss for every parameter. Throws
/// ContractViolation for an EVAL-mode tape.
ParamStore backward(const Tape& tape);

/// Optional extra objective folded into check_gradients (e.g. a penalty).
struct ObjectiveTerm {
  std::function<double(const ParamStore&)> value;
  std::function<void(ParamStore& gradients, const ParamStore& params)> add_gradient;
};

/// Max over all parameter elements of |analytic - numeric| /
/// max(|analytic|, |numeric|, 1e-12), numeric by central differences with
/// step `epsilon`. Masks are drawn once and frozen for every evaluation.
double check_gradients(const Model& model, const ParamStore& params, const Tensor& batch,
                       const Tensor& labels, double epsilon, Rng& rng,
                       const ObjectiveTerm* extra = nullptr);

struct PerturbationResult {
  Tensor output;
  Tensor mask;
};

/// Standalone perturbation for one layer.
///
/// DROPOUT: `input` is an activation tensor. DROPCONNECT: `input` is the
/// wrapped dense layer's weight matrix. RESIDUAL_BLOCK: `input` is the branch
/// output [N, ...] and the gate is drawn per example.
/// TRAIN masks use inverted scaling for dropout/dropconnect (survivors scaled
/// by 1/(1-p)) and 0/1 gates for residual branches. EVAL applies no mask to
/// dropout/dropconnect and scales residual branches by the survival rate.
PerturbationResult apply_perturbation(const LayerSpec& layer, const Tensor& input, Mode mode,
                                      Rng& rng);

/// Linear stochastic-depth survival 1 - (block / last_block) * (1 - 0.5):
/// 1.0 for block 0 (nearest the input), 0.5 for the last block.
double stochastic_depth_survival(std::size_t block, std::size_t last_block);

}  // namespace rifle
