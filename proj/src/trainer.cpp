#include "rifle/trainer.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rifle/errors.hpp"

namespace rifle {

namespace {

// Independent streams derived from the run seed.
enum Stream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kMaskStream = 3,
  kResetStream = 4,
  kDisturbStream = 5,
  kProbeStream = 6,
};

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  }
  return best;
}

std::size_t count_correct(const Tensor& logits, const Tensor& labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    if (static_cast<double>(argmax_row(logits, r)) == labels[r]) ++correct;
  }
  return correct;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(eta_max > 0.0)) throw ConfigError("train.eta_max must be > 0");
  try {
    regularizer.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train.regularizer: ") + e.what());
  }
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

bool matches_pattern(const std::string& pattern, const std::string& name) {
  return ::fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

void sgd_momentum_step(ParamStore& params, ParamStore& velocity, const ParamStore& gradients,
                       double eta, double mu) {
  params.require_same_layout(velocity, "sgd_momentum_step(velocity)");
  params.require_same_layout(gradients, "sgd_momentum_step(gradients)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params.entry(i).value;
    Tensor& v = velocity.entry(i).value;
    const Tensor& g = gradients.entry(i).value;
    for (std::size_t q = 0; q < w.size(); ++q) {
      v[q] = mu * v[q] + g[q];
      w[q] -= eta * v[q];
    }
  }
}

Metrics evaluate(const Model& model, const ParamStore& params, const Dataset& data,
                 std::size_t chunk) {
  Metrics m;
  const std::size_t n = data.size();
  if (n == 0) return m;
  Rng unused(0);
  double loss_sum = 0.0;
  double sq_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const Dataset part = data.gather(rows);
    const auto fr = forward(model, params, part.features, part.targets, Mode::kEval, unused);
    loss_sum += fr.loss * static_cast<double>(rows.size());
    if (data.is_classification()) {
      correct += count_correct(fr.outputs, part.targets);
    } else {
      for (std::size_t q = 0; q < fr.outputs.size(); ++q) {
        const double d = fr.outputs[q] - part.targets[q];
        sq_sum += d * d;
      }
    }
  }
  m.loss = loss_sum / static_cast<double>(n);
  if (data.is_classification()) {
    m.top1 = static_cast<double>(correct) / static_cast<double>(n);
  } else {
    m.mse = sq_sum / static_cast<double>(data.targets.size());
  }
  return m;
}

std::vector<LayerNorm> grad_norm_probe(const Model& model, const ParamStore& params,
                                       const Dataset& probe_batch,
                                       const std::vector<std::string>& patterns) {
  std::vector<bool> used(patterns.size(), false);
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < params.size(); ++i) {
    bool hit = false;
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      if (matches_pattern(patterns[p], params.entry(i).name)) {
        used[p] = true;
        hit = true;
      }
    }
    if (hit) selected.push_back(i);
  }
  for (std::size_t p = 0; p < patterns.size(); ++p) {
    if (!used[p]) throw ConfigError("probe pattern '" + patterns[p] + "' matches no parameter");
  }
  if (selected.empty()) return {};

  const auto fr = forward_with_masks(model, params, probe_batch.features, probe_batch.targets,
                                     neutral_masks(model, probe_batch.size()));
  const ParamStore grads = backward(fr.tape);
  std::vector<LayerNorm> out;
  out.reserve(selected.size());
  for (auto i : selected) out.emplace_back(grads.entry(i).name, frobenius_norm(grads.entry(i).value));
  return out;
}

TrainResult train(const Model& model, ParamStore params, const Dataset& train_set,
                  const Dataset& test, const TrainConfig& config) {
  config.validate();
  train_set.validate();
  const std::size_t n = train_set.size();
  const std::size_t bs = std::min(config.batch_size, n);
  const std::size_t spe = steps_per_epoch(n, bs);

  SchedulePolicy policy = config.policy;
  {
    const SchedulePolicy derived = SchedulePolicy::for_run(policy.strategy, config.epochs, spe,
                                                           policy.num_periods, config.eta_max);
    policy.period = derived.period;
    policy.total_iterations = derived.total_iterations;
    policy.eta_max = config.eta_max;
  }
  policy.validate();

  const Rng root(config.seed);
  Rng shuffle_rng = root.derive(kShuffleStream);
  Rng mask_rng = root.derive(kMaskStream);
  Rng reset_rng = root.derive(kResetStream);
  Rng disturb_rng = root.derive(kDisturbStream);

  Dataset probe_batch;
  if (!config.probe_layers.empty()) {
    Rng probe_rng = root.derive(kProbeStream);
    auto order = shuffled_indices(n, probe_rng);
    order.resize(bs);
    probe_batch = train_set.gather(order);
  }

  ParamStore velocity = params.zeros_like();
  std::vector<TelemetryRecord> telemetry;
  telemetry.reserve(config.epochs);
  const bool classification = train_set.is_classification();
  std::size_t t = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    TelemetryRecord rec;
    rec.epoch = epoch;
    const auto order = shuffled_indices(n, shuffle_rng);
    double loss_sum = 0.0;
    double metric_sum = 0.0;

    for (std::size_t s = 0; s < spe; ++s, ++t) {
      if (rifle_reset(params, t, policy, reset_rng)) {
        rec.reset_event = true;
        if (config.reset_velocity_on_reinit) {
          const auto [first, last] = params.fc_range();
          for (std::size_t i = first; i < last; ++i) velocity.entry(i).value.fill(0.0);
        }
      }
      const double eta = cyclic_lr(t, policy);
      if (s == 0) {
        rec.eta = eta;
        if (!config.probe_layers.empty()) {
          rec.grad_norms = grad_norm_probe(model, params, probe_batch, config.probe_layers);
        }
      }

      const std::size_t begin = s * bs;
      const std::size_t end = std::min(n, begin + bs);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Dataset batch = train_set.gather(rows);
      Tensor labels = batch.targets;
      if (policy.strategy == Strategy::kDisturbLabel) {
        labels = disturb_labels(labels, train_set.num_classes, policy.disturb_p, disturb_rng);
      }

      auto fr = forward(model, params, batch.features, labels, Mode::kTrain, mask_rng);
      if (!std::isfinite(fr.loss)) {
        const auto layer = fr.tape.first_nonfinite_layer();
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                           std::to_string(t) + "; first non-finite layer: " +
                           layer.value_or(to_string(model.loss_kind())));
      }
      const double rows_d = static_cast<double>(rows.size());
      loss_sum += fr.loss * rows_d;
      metric_sum += classification ? static_cast<double>(count_correct(fr.outputs, batch.targets))
                                   : fr.loss * rows_d;

      ParamStore grads = backward(fr.tape);
      add_reg_gradients(grads, params, config.regularizer);
      sgd_momentum_step(params, velocity, grads, eta, config.momentum);
    }

    rec.step = t;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_top1 = metric_sum / static_cast<double>(n);
    if (test.size() > 0 && (config.eval_every_epoch || epoch == config.epochs)) {
      const Metrics m = evaluate(model, params, test);
      rec.test_loss = m.loss;
      rec.test_top1 = m.primary(classification);
    }
    telemetry.push_back(std::move(rec));
  }
  return {std::move(params), std::move(telemetry)};
}

}  // namespace rifle
