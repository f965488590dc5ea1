#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rifle/dataset.hpp"
#include "rifle/network.hpp"
#include "rifle/param_store.hpp"
#include "rifle/regularizers.hpp"
#include "rifle/schedules.hpp"

namespace rifle {

/// Fine-tuning hyperparameters. Defaults: batch 32, SGD momentum 0.9, initial
/// LR 0.01, 40 epochs.
struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double eta_max = 0.01;
  RegularizerKind regularizer = RegularizerKind::l2();
  /// Strategy and its knobs. period/total_iterations are derived by train()
  /// from epochs, the dataset size and num_periods.
  SchedulePolicy policy;
  std::uint64_t seed = 0;
  /// Glob patterns (fnmatch syntax) selecting parameters to probe each epoch.
  std::vector<std::string> probe_layers;
  /// Zero the head's momentum buffer whenever the head is re-initialized.
  bool reset_velocity_on_reinit = false;
  /// Evaluate the held-out set after every epoch (otherwise only the last).
  bool eval_every_epoch = true;

  void validate() const;
};

using LayerNorm = std::pair<std::string, double>;

struct TelemetryRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // iterations completed at the end of the epoch
  double eta = 0.0;       // learning rate at the epoch's first iteration
  double train_loss = 0.0;
  double train_top1 = 0.0;  // running mean over the epoch's batches; mse for regression
  double test_loss = 0.0;
  double test_top1 = 0.0;   // mse for regression
  bool reset_event = false;
  std::vector<LayerNorm> grad_norms;  // measured at the start of the epoch
};

struct Metrics {
  double loss = 0.0;
  double top1 = 0.0;  // classification only
  double mse = 0.0;   // regression only
  /// top1 for classification, mse for regression.
  double primary(bool classification) const { return classification ? top1 : mse; }
};

struct TrainResult {
  ParamStore params;
  std::vector<TelemetryRecord> telemetry;
};

/// v' = mu*v + g; w' = w - eta*v'. Throws ContractViolation on layout mismatch.
void sgd_momentum_step(ParamStore& params, ParamStore& velocity, const ParamStore& gradients,
                       double eta, double mu);

/// Deterministic metrics over the full dataset (EVAL mode). Argmax ties go to
/// the lowest class index.
Metrics evaluate(const Model& model, const ParamStore& params, const Dataset& data,
                 std::size_t chunk = 256);

/// Frobenius norm of the empirical-loss gradient for every parameter matching
/// one of `patterns`, in store order, with perturbation masks disabled.
/// Throws ConfigError naming any pattern that matches nothing.
std::vector<LayerNorm> grad_norm_probe(const Model& model, const ParamStore& params,
                                       const Dataset& probe_batch,
                                       const std::vector<std::string>& patterns);

/// Runs the fine-tuning loop. `params` should carry its frozen start point
/// when the regularizer is L2-SP. `model` is used as given; structural
/// baselines are applied by the caller through instrument_model. `test` may
/// be empty, in which case test metrics are reported as zero.
/// Throws NumericError naming the first non-finite layer if the loss blows up.
TrainResult train(const Model& model, ParamStore params, const Dataset& train_set,
                  const Dataset& test, const TrainConfig& config);

/// Iterations per epoch for n examples.
std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size);

/// True when fnmatch-style `pattern` matches `name`.
bool matches_pattern(const std::string& pattern, const std::string& name);

}  // namespace rifle
