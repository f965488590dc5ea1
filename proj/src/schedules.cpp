#include "rifle/schedules.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "rifle/errors.hpp"

namespace rifle {

namespace {

constexpr std::pair<const char*, Strategy> kStrategyNames[] = {
    {"none", Strategy::kNone},
    {"rifle", Strategy::kRifle},
    {"rifle_a", Strategy::kRifleA},
    {"rifle_b", Strategy::kRifleB},
    {"cyclic_lr", Strategy::kCyclicLr},
    {"disturb_label", Strategy::kDisturbLabel},
    {"dropout_fc", Strategy::kDropoutFc},
    {"dropout_cnn", Strategy::kDropoutCnn},
    {"dropconnect", Strategy::kDropConnect},
    {"stochastic_depth", Strategy::kStochasticDepth},
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

const char* to_string(Strategy s) {
  for (const auto& [name, value] : kStrategyNames) {
    if (value == s) return name;
  }
  return "?";
}

Strategy parse_strategy(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return c == '-' ? '_' : std::tolower(c); });
  for (const auto& [name, value] : kStrategyNames) {
    if (lower == name) return value;
  }
  throw ConfigError("unknown strategy '" + text + "'");
}

SchedulePolicy SchedulePolicy::for_run(Strategy strategy, std::size_t epochs,
                                       std::size_t steps_per_epoch, std::size_t num_periods,
                                       double eta_max) {
  SchedulePolicy p;
  p.strategy = strategy;
  p.eta_max = eta_max;
  p.num_periods = num_periods;
  p.total_iterations = epochs * steps_per_epoch;
  if (p.is_periodic()) {
    if (num_periods == 0 || epochs % num_periods != 0) {
      throw ConfigError("policy.num_periods (" + std::to_string(num_periods) +
                        ") must divide train.epochs (" + std::to_string(epochs) + ")");
    }
    p.period = (epochs / num_periods) * steps_per_epoch;
  } else {
    p.period = std::max<std::size_t>(p.total_iterations, 1);
  }
  return p;
}

bool SchedulePolicy::is_periodic() const {
  return strategy == Strategy::kRifle || strategy == Strategy::kRifleA ||
         strategy == Strategy::kRifleB || strategy == Strategy::kCyclicLr;
}

bool SchedulePolicy::cyclic() const {
  return strategy == Strategy::kRifle || strategy == Strategy::kRifleB ||
         strategy == Strategy::kCyclicLr;
}

void SchedulePolicy::validate() const {
  if (period == 0) throw InvalidArgument("policy period must be positive");
  if (num_periods == 0) throw InvalidArgument("policy num_periods must be positive");
  if (!(eta_max > 0.0)) throw InvalidArgument("policy eta_max must be > 0");
  if (!(delta >= 0.0)) throw InvalidArgument("policy delta must be >= 0");
  if (!(disturb_p >= 0.0 && disturb_p <= 1.0)) throw InvalidArgument("policy disturb_p outside [0, 1]");
  if (!(drop_p >= 0.0 && drop_p < 1.0)) throw InvalidArgument("policy drop_p outside [0, 1)");
  if (is_periodic() && period * num_periods != total_iterations) {
    throw InvalidArgument("policy period * num_periods must equal total iterations");
  }
}

double cyclic_lr(std::size_t t, const SchedulePolicy& policy) {
  constexpr double pi = std::numbers::pi;
  if (policy.cyclic()) {
    const double tau = static_cast<double>(t % policy.period);
    const double period = static_cast<double>(policy.period);
    const double phase = policy.cycle_shape == CycleShape::kFullCosine ? 2.0 * pi * tau / period
                                                                       : pi * tau / period;
    return 0.5 * policy.eta_max * std::cos(phase) + 0.5 * policy.eta_max;
  }
  const double total = static_cast<double>(std::max<std::size_t>(policy.total_iterations, 1));
  return 0.5 * policy.eta_max * (1.0 + std::cos(pi * static_cast<double>(t) / total));
}

bool rifle_reset(ParamStore& params, std::size_t t, const SchedulePolicy& policy, Rng& rng) {
  if (!policy.resets_head() || t % policy.period != 0) return false;
  const auto [first, last] = params.fc_range();
  for (std::size_t i = first; i < last; ++i) {
    auto& e = params.entry(i);
    if (ends_with(e.name, ".bias")) {
      e.value.fill(0.0);
    } else {
      e.value = gaussian_init(e.value.shape(), 0.0, policy.delta, rng);
    }
  }
  return true;
}

Tensor disturb_labels(const Tensor& labels, std::size_t num_classes, double disturb_p, Rng& rng) {
  if (num_classes < 2) throw InvalidArgument("disturb_labels: num_classes must be >= 2");
  if (!(disturb_p >= 0.0 && disturb_p <= 1.0)) {
    throw InvalidArgument("disturb_labels: disturb_p outside [0, 1]");
  }
  Tensor out = labels;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = out[i];
    if (!(y >= 0.0) || y != std::floor(y) || y >= static_cast<double>(num_classes)) {
      throw InvalidArgument("disturb_labels: label " + std::to_string(y) + " at index " +
                            std::to_string(i) + " out of range");
    }
    if (rng.uniform() < disturb_p) out[i] = static_cast<double>(rng.uniform_index(num_classes));
  }
  return out;
}

Model instrument_model(const Model& input, const SchedulePolicy& policy) {
  Model model = input;
  model.validate();
  switch (policy.strategy) {
    case Strategy::kDropoutFc: {
      const std::size_t head = model.head_index();
      model.layers.insert(model.layers.begin() + static_cast<std::ptrdiff_t>(head),
                          LayerSpec::dropout(policy.drop_p));
      break;
    }
    case Strategy::kDropConnect: {
      LayerSpec& head = model.layers[model.head_index()];
      head.kind = LayerKind::kDropConnect;
      head.perturb = policy.drop_p;
      break;
    }
    case Strategy::kDropoutCnn: {
      const bool has_blocks = std::any_of(model.layers.begin(), model.layers.end(), [](const auto& l) {
        return l.kind == LayerKind::kResidualBlock;
      });
      const LayerKind anchor = has_blocks ? LayerKind::kResidualBlock : LayerKind::kConv3x3;
      std::vector<LayerSpec> layers;
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        layers.push_back(model.layers[i]);
        // After the activation that follows an anchor layer, or right after the
        // anchor when no activation follows.
        const bool is_anchor = model.layers[i].kind == anchor;
        const bool relu_follows = i + 1 < model.layers.size() && model.layers[i + 1].kind == LayerKind::kRelu;
        const bool after_anchor_relu = model.layers[i].kind == LayerKind::kRelu && i > 0 &&
                                       model.layers[i - 1].kind == anchor;
        if ((is_anchor && !relu_follows) || after_anchor_relu) {
          layers.push_back(LayerSpec::dropout(policy.drop_p));
        }
      }
      model.layers = std::move(layers);
      break;
    }
    case Strategy::kStochasticDepth: {
      std::vector<LayerSpec*> blocks;
      for (auto& l : model.layers) {
        if (l.kind == LayerKind::kResidualBlock) blocks.push_back(&l);
      }
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        blocks[b]->survival = stochastic_depth_survival(b, blocks.size() - 1);
      }
      break;
    }
    default:
      break;
  }
  model.validate();
  return model;
}

}  // namespace rifle
