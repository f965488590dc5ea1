#include "rifle/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rifle/errors.hpp"
#include "rifle/kernels.hpp"

namespace rifle {

namespace {

namespace par = kernels::parallel;

std::string describe(const LayerSpec& layer, std::size_t index) {
  return std::string(to_string(layer.kind)) + " layer " + std::to_string(index) +
         (layer.name.empty() ? "" : " ('" + layer.name + "')");
}

void check_probability(const std::optional<double>& p, const char* what, bool allow_one,
                       const std::string& where) {
  if (!p) return;
  const bool ok = *p >= 0.0 && (allow_one ? *p <= 1.0 : *p < 1.0);
  if (!ok) {
    throw InvalidArgument(where + ": " + what + " " + std::to_string(*p) + " outside " +
                          (allow_one ? "[0, 1]" : "[0, 1)"));
  }
}

bool needs_projection(const LayerSpec& layer) {
  return layer.in != layer.out || layer.stride != 1;
}

// ---------------------------------------------------------------------------
// Layer primitives on batched tensors.

kernels::ConvShape conv_geometry(const Tensor& x, std::size_t out_channels, std::size_t stride) {
  kernels::ConvShape s;
  s.batch = x.dim(0);
  s.in_channels = x.dim(1);
  s.out_channels = out_channels;
  s.height = x.dim(2);
  s.width = x.dim(3);
  s.stride = stride;
  return s;
}

Tensor conv_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                    std::size_t stride) {
  const auto s = conv_geometry(x, weight.dim(0), stride);
  Tensor y({s.batch, s.out_channels, s.out_height(), s.out_width()});
  par::conv3x3_forward(s, x.data(), weight.data(),
                       bias ? bias->data() : std::span<const double>{}, y.data());
  return y;
}

// Gradients of conv_forward; grad_x may be null when the caller does not need it.
void conv_backward(const Tensor& x, const Tensor& weight, std::size_t stride,
                   const Tensor& grad_y, Tensor* grad_x, Tensor& grad_w, Tensor* grad_b) {
  const auto s = conv_geometry(x, weight.dim(0), stride);
  if (grad_x) *grad_x = Tensor(x.shape());
  par::conv3x3_backward(s, x.data(), weight.data(), grad_y.data(),
                        grad_x ? grad_x->data() : std::span<double>{}, grad_w.data(),
                        grad_b ? grad_b->data() : std::span<double>{});
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  const std::size_t n = x.dim(0);
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  Tensor y({n, out});
  par::gemm_nn(n, in, out, x.data(), weight.data(), y.data(), false);
  if (bias) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out; ++j) y.at(i, j) += (*bias)[j];
    }
  }
  return y;
}

void dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_x,
                    Tensor& grad_w, Tensor* grad_b) {
  const std::size_t n = x.dim(0);
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  par::gemm_tn(in, n, out, x.data(), grad_y.data(), grad_w.data(), false);
  if (grad_b) {
    grad_b->fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out; ++j) (*grad_b)[j] += grad_y.at(i, j);
    }
  }
  if (grad_x) {
    *grad_x = Tensor({n, in});
    par::gemm_nt(n, out, in, grad_y.data(), weight.data(), grad_x->data(), false);
  }
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, Tensor grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(x[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

Tensor gap_forward(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double sum = 0.0;
    for (std::size_t q = 0; q < hw; ++q) sum += x[i * hw + q];
    y[i] = sum / static_cast<double>(hw);
  }
  return y;
}

Tensor gap_backward(const Shape& x_shape, const Tensor& grad_y) {
  Tensor g(x_shape);
  const std::size_t hw = x_shape[2] * x_shape[3];
  for (std::size_t i = 0; i < grad_y.size(); ++i) {
    const double v = grad_y[i] / static_cast<double>(hw);
    for (std::size_t q = 0; q < hw; ++q) g[i * hw + q] = v;
  }
  return g;
}

// Scales each example's slice of `t` by gate[n].
void scale_examples(Tensor& t, const Tensor& gate) {
  const std::size_t per = t.size() / t.dim(0);
  for (std::size_t n = 0; n < t.dim(0); ++n) {
    for (std::size_t q = 0; q < per; ++q) t[n * per + q] *= gate[n];
  }
}

Tensor draw_inverted_mask(const Shape& shape, double p, Rng& rng) {
  if (p >= 1.0) throw InvalidArgument("drop probability 1 leaves nothing to rescale");
  Tensor mask(shape);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep_scale;
  return mask;
}

Tensor draw_gate(std::size_t n, double survival, Rng& rng) {
  Tensor gate({n});
  for (double& g : gate.data()) g = rng.uniform() < survival ? 1.0 : 0.0;
  return gate;
}

Tensor elementwise_product(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  return a;
}

std::size_t checked_label(double value, std::size_t classes, std::size_t row) {
  if (!(value >= 0.0) || value != std::floor(value) || value >= static_cast<double>(classes)) {
    throw InvalidArgument("label " + std::to_string(value) + " at row " + std::to_string(row) +
                          " is not a class index in [0, " + std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(value);
}

const Tensor* optional_param(const ParamStore& params, const std::string& name) {
  auto idx = params.find(name);
  return idx ? &params.entry(*idx).value : nullptr;
}

Tensor* optional_param(ParamStore& params, const std::string& name) {
  auto idx = params.find(name);
  return idx ? &params.entry(*idx).value : nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// LayerSpec / Model

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "DENSE";
    case LayerKind::kConv3x3: return "CONV3x3";
    case LayerKind::kRelu: return "RELU";
    case LayerKind::kGlobalAvgPool: return "GLOBAL_AVG_POOL";
    case LayerKind::kResidualBlock: return "RESIDUAL_BLOCK";
    case LayerKind::kDropout: return "DROPOUT";
    case LayerKind::kDropConnect: return "DROPCONNECT";
    case LayerKind::kSoftmaxCeLoss: return "SOFTMAX_CE_LOSS";
    case LayerKind::kMseLoss: return "MSE_LOSS";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& text) {
  static const std::pair<const char*, LayerKind> kNames[] = {
      {"dense", LayerKind::kDense},
      {"conv3x3", LayerKind::kConv3x3},
      {"relu", LayerKind::kRelu},
      {"global_avg_pool", LayerKind::kGlobalAvgPool},
      {"residual_block", LayerKind::kResidualBlock},
      {"dropout", LayerKind::kDropout},
      {"dropconnect", LayerKind::kDropConnect},
      {"softmax_ce_loss", LayerKind::kSoftmaxCeLoss},
      {"mse_loss", LayerKind::kMseLoss},
  };
  for (const auto& [name, kind] : kNames) {
    if (text == name) return kind;
  }
  throw ConfigError("unknown layer kind '" + text + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, std::string name, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::kDense;
  l.in = in;
  l.out = out;
  l.name = std::move(name);
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::conv3x3(std::size_t in, std::size_t out, std::size_t stride,
                             std::string name) {
  LayerSpec l;
  l.kind = LayerKind::kConv3x3;
  l.in = in;
  l.out = out;
  l.stride = stride;
  l.name = std::move(name);
  return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec l;
  l.kind = LayerKind::kGlobalAvgPool;
  return l;
}

LayerSpec LayerSpec::residual(std::size_t in, std::size_t out, std::size_t stride,
                              std::string name, double survival) {
  LayerSpec l;
  l.kind = LayerKind::kResidualBlock;
  l.in = in;
  l.out = out;
  l.stride = stride;
  l.name = std::move(name);
  l.survival = survival;
  return l;
}

LayerSpec LayerSpec::dropout(double p) {
  LayerSpec l;
  l.kind = LayerKind::kDropout;
  l.perturb = p;
  return l;
}

LayerSpec LayerSpec::dropconnect(std::size_t in, std::size_t out, double p, std::string name) {
  LayerSpec l = dense(in, out, std::move(name));
  l.kind = LayerKind::kDropConnect;
  l.perturb = p;
  return l;
}

LayerSpec LayerSpec::softmax_ce() {
  LayerSpec l;
  l.kind = LayerKind::kSoftmaxCeLoss;
  return l;
}

LayerSpec LayerSpec::mse() {
  LayerSpec l;
  l.kind = LayerKind::kMseLoss;
  return l;
}

bool LayerSpec::has_params() const {
  return kind == LayerKind::kDense || kind == LayerKind::kConv3x3 ||
         kind == LayerKind::kResidualBlock || kind == LayerKind::kDropConnect;
}

std::vector<Shape> Model::validate() {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name.empty() && layers[i].has_params()) layers[i].name = "layer" + std::to_string(i);
  }
  return layer_shapes();
}

std::vector<Shape> Model::layer_shapes() const {
  if (input_shape.empty() || element_count(input_shape) == 0) {
    throw InvalidArgument("model input shape must be nonempty with positive extents");
  }
  if (layers.empty() || !layers.back().is_loss()) {
    throw InvalidArgument("model must end with a loss layer");
  }
  std::vector<Shape> shapes;
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = describe(l, i);
    if (l.is_loss() && i + 1 != layers.size()) {
      throw InvalidArgument(where + ": a loss layer must be last");
    }
    check_probability(l.perturb, "drop probability", false, where);
    check_probability(l.survival, "survival", true, where);
    switch (l.kind) {
      case LayerKind::kDense:
      case LayerKind::kDropConnect:
        if (l.in == 0 || l.out == 0) throw InvalidArgument(where + ": zero width");
        if (element_count(current) != l.in) {
          throw InvalidArgument(where + ": expects " + std::to_string(l.in) +
                                " inputs, previous layer gives " + to_string(current));
        }
        if (l.kind == LayerKind::kDropConnect && !l.perturb) {
          throw InvalidArgument(where + ": missing drop probability");
        }
        current = {l.out};
        break;
      case LayerKind::kConv3x3:
      case LayerKind::kResidualBlock:
        if (l.in == 0 || l.out == 0) throw InvalidArgument(where + ": zero channel count");
        if (l.stride != 1 && l.stride != 2) throw InvalidArgument(where + ": stride must be 1 or 2");
        if (current.size() != 3 || current[0] != l.in) {
          throw InvalidArgument(where + ": expects [" + std::to_string(l.in) +
                                " x H x W] input, previous layer gives " + to_string(current));
        }
        current = {l.out, (current[1] - 1) / l.stride + 1, (current[2] - 1) / l.stride + 1};
        break;
      case LayerKind::kGlobalAvgPool:
        if (current.size() != 3) {
          throw InvalidArgument(where + ": expects [C x H x W] input, got " + to_string(current));
        }
        current = {current[0]};
        break;
      case LayerKind::kDropout:
        if (!l.perturb) throw InvalidArgument(where + ": missing drop probability");
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kSoftmaxCeLoss:
        if (current.size() != 1 || current[0] < 2) {
          throw InvalidArgument(where + ": needs a [C >= 2] logit vector, got " + to_string(current));
        }
        break;
      case LayerKind::kMseLoss:
        if (current.size() != 1) {
          throw InvalidArgument(where + ": needs a flat prediction vector, got " + to_string(current));
        }
        break;
    }
    shapes.push_back(current);
  }
  return shapes;
}

std::size_t Model::head_index() const {
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].kind == LayerKind::kDense || layers[i].kind == LayerKind::kDropConnect) return i;
  }
  throw InvalidArgument("model has no dense head layer");
}

std::size_t Model::num_classes() const { return layer_shapes().back()[0]; }

double stochastic_depth_survival(std::size_t block, std::size_t last_block) {
  if (block > last_block) throw InvalidArgument("stochastic depth: block index beyond last block");
  if (last_block == 0) return 1.0;
  return 1.0 - (static_cast<double>(block) / static_cast<double>(last_block)) * (1.0 - 0.5);
}

ParamStore init_params(const Model& input_model, Rng& rng, double head_std) {
  Model model = input_model;
  model.validate();
  const std::size_t head = model.head_index();
  ParamStore params;
  auto he = [&rng](const Shape& shape, std::size_t fan_in) {
    return gaussian_init(shape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    switch (l.kind) {
      case LayerKind::kDense:
      case LayerKind::kDropConnect: {
        const Role role = i == head ? Role::kFc : Role::kBackbone;
        Tensor w = role == Role::kFc ? gaussian_init({l.in, l.out}, 0.0, head_std, rng)
                                     : he({l.in, l.out}, l.in);
        params.add(l.name + ".weight", role, std::move(w));
        if (l.bias) params.add(l.name + ".bias", role, Tensor({l.out}));
        break;
      }
      case LayerKind::kConv3x3:
        params.add(l.name + ".weight", Role::kBackbone, he({l.out, l.in, 3, 3}, l.in * 9));
        params.add(l.name + ".bias", Role::kBackbone, Tensor({l.out}));
        break;
      case LayerKind::kResidualBlock:
        params.add(l.name + ".conv1.weight", Role::kBackbone, he({l.out, l.in, 3, 3}, l.in * 9));
        params.add(l.name + ".conv1.bias", Role::kBackbone, Tensor({l.out}));
        params.add(l.name + ".conv2.weight", Role::kBackbone, he({l.out, l.out, 3, 3}, l.out * 9));
        params.add(l.name + ".conv2.bias", Role::kBackbone, Tensor({l.out}));
        if (needs_projection(l)) {
          params.add(l.name + ".proj.weight", Role::kBackbone, he({l.out, l.in, 3, 3}, l.in * 9));
          params.add(l.name + ".proj.bias", Role::kBackbone, Tensor({l.out}));
        }
        break;
      default:
        break;
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Perturbations

PerturbationResult apply_perturbation(const LayerSpec& layer, const Tensor& input, Mode mode,
                                      Rng& rng) {
  switch (layer.kind) {
    case LayerKind::kDropout:
    case LayerKind::kDropConnect: {
      if (!layer.perturb) throw InvalidArgument("perturbation layer has no drop probability");
      const double p = *layer.perturb;
      if (!(p >= 0.0 && p < 1.0)) {
        throw InvalidArgument("drop probability " + std::to_string(p) + " outside [0, 1)");
      }
      if (mode == Mode::kEval) return {input, Tensor(input.shape(), 1.0)};
      Tensor mask = draw_inverted_mask(input.shape(), p, rng);
      return {elementwise_product(input, mask), std::move(mask)};
    }
    case LayerKind::kResidualBlock: {
      const double survival = layer.survival.value_or(1.0);
      if (!(survival >= 0.0 && survival <= 1.0)) {
        throw InvalidArgument("survival " + std::to_string(survival) + " outside [0, 1]");
      }
      Tensor out = input;
      if (mode == Mode::kEval) {
        out *= survival;
        return {std::move(out), Tensor({input.dim(0)}, survival)};
      }
      Tensor gate = draw_gate(input.dim(0), survival, rng);
      scale_examples(out, gate);
      return {std::move(out), std::move(gate)};
    }
    default:
      throw InvalidArgument(std::string("apply_perturbation: ") + to_string(layer.kind) +
                            " is not a perturbation layer");
  }
}

// ---------------------------------------------------------------------------
// Tape / forward / backward

struct TapeBuilder {
  static ForwardResult run(const Model& input_model, const ParamStore& params,
                           const Tensor& batch, const Tensor& labels, Mode mode, Rng* rng,
                           const std::vector<Tensor>* replay);
};

ForwardResult TapeBuilder::run(const Model& input_model, const ParamStore& params,
                               const Tensor& batch, const Tensor& labels, Mode mode, Rng* rng,
                               const std::vector<Tensor>* replay) {
  Model model = input_model;
  model.validate();
  if (batch.rank() < 1 || batch.empty()) throw InvalidArgument("forward: empty batch");
  const std::size_t n = batch.dim(0);
  if (labels.empty() || labels.dim(0) != n) {
    throw InvalidArgument("forward: batch has " + std::to_string(n) + " rows but labels " +
                          to_string(labels.shape()));
  }
  if (batch.size() / n != element_count(model.input_shape)) {
    throw InvalidArgument("forward: batch rows of shape " + to_string(batch.shape()) +
                          " do not match model input " + to_string(model.input_shape));
  }
  if (replay && replay->size() != model.layers.size()) {
    throw InvalidArgument("forward_with_masks: mask list does not match the layer count");
  }

  Shape batched = {n};
  batched.insert(batched.end(), model.input_shape.begin(), model.input_shape.end());

  ForwardResult result;
  Tape& tape = result.tape;
  tape.mode_ = mode;
  tape.model_ = model;
  tape.params_ = params;
  tape.labels_ = labels;
  tape.records_.resize(model.layers.size());

  auto mask_for = [&](std::size_t i, auto&& draw) -> Tensor {
    if (replay) return (*replay)[i];
    return draw();
  };

  Tensor x = batch.reshaped(batched);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    Tape::Record& rec = tape.records_[i];
    rec.input = x;
    switch (l.kind) {
      case LayerKind::kDense: {
        if (x.rank() != 2) x = std::move(x).reshaped({n, l.in});
        rec.input = x;
        x = dense_forward(x, params.value(l.name + ".weight"),
                          optional_param(params, l.name + ".bias"));
        break;
      }
      case LayerKind::kDropConnect: {
        if (x.rank() != 2) x = std::move(x).reshaped({n, l.in});
        rec.input = x;
        const Tensor& w = params.value(l.name + ".weight");
        const Tensor* b = optional_param(params, l.name + ".bias");
        if (mode == Mode::kTrain) {
          rec.mask = mask_for(i, [&] { return draw_inverted_mask(w.shape(), *l.perturb, *rng); });
          x = dense_forward(x, elementwise_product(w, rec.mask), b);
        } else {
          x = dense_forward(x, w, b);
        }
        break;
      }
      case LayerKind::kConv3x3:
        x = conv_forward(x, params.value(l.name + ".weight"),
                         &params.value(l.name + ".bias"), l.stride);
        break;
      case LayerKind::kRelu:
        x = relu_forward(x);
        break;
      case LayerKind::kGlobalAvgPool:
        x = gap_forward(x);
        break;
      case LayerKind::kDropout:
        if (mode == Mode::kTrain) {
          rec.mask = mask_for(i, [&] { return draw_inverted_mask(x.shape(), *l.perturb, *rng); });
          x = elementwise_product(std::move(x), rec.mask);
        }
        break;
      case LayerKind::kResidualBlock: {
        const std::string& p = l.name;
        rec.branch_pre = conv_forward(x, params.value(p + ".conv1.weight"),
                                      &params.value(p + ".conv1.bias"), l.stride);
        rec.branch_act = relu_forward(rec.branch_pre);
        rec.branch_out = conv_forward(rec.branch_act, params.value(p + ".conv2.weight"),
                                      &params.value(p + ".conv2.bias"), 1);
        Tensor branch = rec.branch_out;
        const double survival = l.survival.value_or(1.0);
        if (mode == Mode::kTrain) {
          rec.mask = mask_for(i, [&] { return draw_gate(n, survival, *rng); });
          scale_examples(branch, rec.mask);
        } else {
          branch *= survival;
        }
        Tensor shortcut = needs_projection(l)
                              ? conv_forward(x, params.value(p + ".proj.weight"),
                                             &params.value(p + ".proj.bias"), l.stride)
                              : x;
        x = std::move(shortcut) + branch;
        break;
      }
      case LayerKind::kSoftmaxCeLoss: {
        if (x.rank() != 2) x = std::move(x).reshaped({n, x.size() / n});
        rec.input = x;
        const std::size_t c = x.dim(1);
        if (labels.size() != n) {
          throw InvalidArgument("softmax loss expects one class index per row, labels are " +
                                to_string(labels.shape()));
        }
        tape.probabilities_ = Tensor({n, c});
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t y = checked_label(labels[r], c, r);
          double max_logit = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < c; ++j) max_logit = std::max(max_logit, x.at(r, j));
          double denom = 0.0;
          for (std::size_t j = 0; j < c; ++j) denom += std::exp(x.at(r, j) - max_logit);
          for (std::size_t j = 0; j < c; ++j) {
            tape.probabilities_.at(r, j) = std::exp(x.at(r, j) - max_logit) / denom;
          }
          total += (max_logit + std::log(denom)) - x.at(r, y);
        }
        tape.loss_ = total / static_cast<double>(n);
        rec.output = x;
        break;
      }
      case LayerKind::kMseLoss: {
        if (x.rank() != 2) x = std::move(x).reshaped({n, x.size() / n});
        rec.input = x;
        if (labels.size() != x.size()) {
          throw InvalidArgument("mse loss: predictions " + to_string(x.shape()) +
                                " vs targets " + to_string(labels.shape()));
        }
        double total = 0.0;
        for (std::size_t q = 0; q < x.size(); ++q) {
          const double d = x[q] - labels[q];
          total += d * d;
        }
        tape.loss_ = total / static_cast<double>(x.size());
        rec.output = x;
        break;
      }
    }
    if (!l.is_loss()) rec.output = x;
  }
  result.loss = tape.loss_;
  result.outputs = std::move(x);
  return result;
}

ForwardResult forward(const Model& model, const ParamStore& params, const Tensor& batch,
                      const Tensor& labels, Mode mode, Rng& rng) {
  return TapeBuilder::run(model, params, batch, labels, mode, &rng, nullptr);
}

ForwardResult forward_with_masks(const Model& model, const ParamStore& params,
                                 const Tensor& batch, const Tensor& labels,
                                 const std::vector<Tensor>& masks) {
  return TapeBuilder::run(model, params, batch, labels, Mode::kTrain, nullptr, &masks);
}

std::vector<Tensor> neutral_masks(const Model& input_model, std::size_t batch_size) {
  Model model = input_model;
  const auto shapes = model.validate();
  std::vector<Tensor> masks(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    switch (l.kind) {
      case LayerKind::kDropout: {
        Shape shape = {batch_size};
        shape.insert(shape.end(), shapes[i].begin(), shapes[i].end());
        masks[i] = Tensor(shape, 1.0);
        break;
      }
      case LayerKind::kDropConnect:
        masks[i] = Tensor({l.in, l.out}, 1.0);
        break;
      case LayerKind::kResidualBlock:
        masks[i] = Tensor({batch_size}, l.survival.value_or(1.0));
        break;
      default:
        break;
    }
  }
  return masks;
}

std::vector<Tensor> Tape::masks() const {
  std::vector<Tensor> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.mask);
  return out;
}

std::optional<std::string> Tape::first_nonfinite_layer() const {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!records_[i].output.all_finite()) {
      const auto& l = model_.layers[i];
      return l.name.empty() ? std::string(to_string(l.kind)) + "#" + std::to_string(i) : l.name;
    }
  }
  return std::nullopt;
}

ParamStore backward(const Tape& tape) {
  if (tape.mode_ != Mode::kTrain) {
    throw ContractViolation("backward requires a tape from a TRAIN-mode forward");
  }
  const Model& model = tape.model_;
  const ParamStore& params = tape.params_;
  ParamStore grads = params.zeros_like();
  const auto& recs = tape.records_;
  const std::size_t last = model.layers.size() - 1;

  // Gradient of the mean loss w.r.t. the loss layer's input.
  const Tensor& logits = recs[last].input;
  const std::size_t n = logits.dim(0);
  Tensor g(logits.shape());
  if (model.layers[last].kind == LayerKind::kSoftmaxCeLoss) {
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
      const auto y = static_cast<std::size_t>(tape.labels_[r]);
      for (std::size_t j = 0; j < c; ++j) {
        g.at(r, j) = (tape.probabilities_.at(r, j) - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
  } else {
    const double scale = 2.0 / static_cast<double>(logits.size());
    for (std::size_t q = 0; q < g.size(); ++q) g[q] = scale * (logits[q] - tape.labels_[q]);
  }

  for (std::size_t i = last; i-- > 0;) {
    const LayerSpec& l = model.layers[i];
    const auto& rec = recs[i];
    const bool need_input_grad = i > 0;
    if (g.shape() != rec.output.shape()) g = std::move(g).reshaped(rec.output.shape());
    switch (l.kind) {
      case LayerKind::kDense:
      case LayerKind::kDropConnect: {
        const std::string wname = l.name + ".weight";
        Tensor weight = params.value(wname);
        const bool masked = l.kind == LayerKind::kDropConnect;
        if (masked) weight = elementwise_product(std::move(weight), rec.mask);
        Tensor& gw = grads.value(wname);
        Tensor gx;
        dense_backward(rec.input, weight, g, need_input_grad ? &gx : nullptr, gw,
                       optional_param(grads, l.name + ".bias"));
        if (masked) gw = elementwise_product(std::move(gw), rec.mask);
        g = std::move(gx);
        break;
      }
      case LayerKind::kConv3x3: {
        Tensor gx;
        conv_backward(rec.input, params.value(l.name + ".weight"), l.stride, g,
                      need_input_grad ? &gx : nullptr, grads.value(l.name + ".weight"),
                      &grads.value(l.name + ".bias"));
        g = std::move(gx);
        break;
      }
      case LayerKind::kRelu:
        g = relu_backward(rec.input, std::move(g));
        break;
      case LayerKind::kGlobalAvgPool:
        g = gap_backward(rec.input.shape(), g);
        break;
      case LayerKind::kDropout:
        g = elementwise_product(std::move(g), rec.mask);
        break;
      case LayerKind::kResidualBlock: {
        const std::string& p = l.name;
        Tensor g_branch = g;
        scale_examples(g_branch, rec.mask);
        Tensor g_act;
        conv_backward(rec.branch_act, params.value(p + ".conv2.weight"), 1, g_branch, &g_act,
                      grads.value(p + ".conv2.weight"), &grads.value(p + ".conv2.bias"));
        Tensor g_pre = relu_backward(rec.branch_pre, std::move(g_act));
        Tensor gx_branch;
        conv_backward(rec.input, params.value(p + ".conv1.weight"), l.stride, g_pre,
                      need_input_grad ? &gx_branch : nullptr, grads.value(p + ".conv1.weight"),
                      &grads.value(p + ".conv1.bias"));
        Tensor gx_short;
        if (needs_projection(l)) {
          conv_backward(rec.input, params.value(p + ".proj.weight"), l.stride, g,
                        need_input_grad ? &gx_short : nullptr, grads.value(p + ".proj.weight"),
                        &grads.value(p + ".proj.bias"));
        } else {
          gx_short = std::move(g);
        }
        g = need_input_grad ? std::move(gx_short) + gx_branch : Tensor();
        break;
      }
      case LayerKind::kSoftmaxCeLoss:
      case LayerKind::kMseLoss:
        break;
    }
    if (!need_input_grad) break;
  }
  return grads;
}

double check_gradients(const Model& model, const ParamStore& params, const Tensor& batch,
                       const Tensor& labels, double epsilon, Rng& rng,
                       const ObjectiveTerm* extra) {
  if (!(epsilon > 0.0)) throw InvalidArgument("check_gradients: epsilon must be > 0");
  const auto base = forward(model, params, batch, labels, Mode::kTrain, rng);
  const auto masks = base.tape.masks();
  ParamStore analytic = backward(base.tape);
  if (extra && extra->add_gradient) extra->add_gradient(analytic, params);

  auto objective = [&](const ParamStore& p) {
    double value = forward_with_masks(model, p, batch, labels, masks).loss;
    if (extra && extra->value) value += extra->value(p);
    return value;
  };

  ParamStore probe = params;
  double worst = 0.0;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    Tensor& value = probe.entry(e).value;
    for (std::size_t q = 0; q < value.size(); ++q) {
      const double saved = value[q];
      value[q] = saved + epsilon;
      const double up = objective(probe);
      value[q] = saved - epsilon;
      const double down = objective(probe);
      value[q] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.entry(e).value[q];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace rifle
