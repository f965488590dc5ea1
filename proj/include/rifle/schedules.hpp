#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "rifle/network.hpp"
#include "rifle/param_store.hpp"
#include "rifle/rng.hpp"
#include "rifle/tensor.hpp"

namespace rifle {

enum class Strategy {
  kNone,
  kRifle,     // FC re-initialization + per-period cyclic LR
  kRifleA,    // re-initialization, global anneal
  kRifleB,    // per-period cyclic LR only
  kCyclicLr,  // same schedule as RIFLE_B
  kDisturbLabel,
  kDropoutFc,
  kDropoutCnn,
  kDropConnect,
  kStochasticDepth,
};

const char* to_string(Strategy s);
/// Accepts "none", "rifle", "rifle_a", "rifle_b", "cyclic_lr", "disturb_label",
/// "dropout_fc", "dropout_cnn", "dropconnect", "stochastic_depth"
/// (case-insensitive). Throws ConfigError otherwise.
Strategy parse_strategy(const std::string& text);

/// Within-period LR curve for periodic strategies.
enum class CycleShape {
  kFullCosine,  // 0.5*eta_max*(1 + cos(2*pi*tau/P)): returns to eta_max at tau -> P
  kHalfCosine,  // 0.5*eta_max*(1 + cos(pi*tau/P)): conventional warm restart
};

struct SchedulePolicy {
  Strategy strategy = Strategy::kNone;
  std::size_t period = 1;       // P, iterations per period
  std::size_t num_periods = 4;
  std::size_t total_iterations = 4;  // T; period * num_periods for periodic strategies
  double eta_max = 0.01;
  double delta = 0.01;          // FC re-initialization std
  double disturb_p = 0.1;
  double drop_p = 0.1;
  CycleShape cycle_shape = CycleShape::kFullCosine;

  /// Policy with P and T derived from the run length: T = epochs *
  /// steps_per_epoch, P = T / num_periods. Throws ConfigError when a periodic
  /// strategy's num_periods does not divide the epoch count.
  static SchedulePolicy for_run(Strategy strategy, std::size_t epochs, std::size_t steps_per_epoch,
                                std::size_t num_periods = 4, double eta_max = 0.01);

  bool is_periodic() const;
  bool resets_head() const { return strategy == Strategy::kRifle || strategy == Strategy::kRifleA; }
  bool cyclic() const;
  /// Throws InvalidArgument on out-of-range fields.
  void validate() const;
};

/// Learning rate at iteration t (t >= 0). Cyclic strategies (RIFLE, RIFLE_B,
/// CYCLIC_LR) follow the within-period curve at tau = t mod P; all others use
/// one global half-cosine anneal 0.5*eta_max*(1 + cos(pi*t/T)).
double cyclic_lr(std::size_t t, const SchedulePolicy& policy);

/// When the policy re-initializes the head and t mod P == 0, redraws every FC
/// weight from N(0, delta^2) and zeroes FC biases, leaving BACKBONE entries
/// untouched, and returns true. Otherwise leaves params alone and returns false.
/// Throws ContractViolation when a reset is due and the store has no FC group.
bool rifle_reset(ParamStore& params, std::size_t t, const SchedulePolicy& policy, Rng& rng);

/// Replaces each label, with probability disturb_p, by a uniform draw over all
/// classes (the correct one included). Throws InvalidArgument when
/// num_classes < 2 or a label is out of range.
Tensor disturb_labels(const Tensor& labels, std::size_t num_classes, double disturb_p, Rng& rng);

/// Copy of `model` with the structural baseline of `policy` inserted:
/// DROPOUT_FC puts dropout in front of the head, DROPCONNECT turns the head
/// into a dropconnect layer, DROPOUT_CNN adds dropout after every residual
/// block's activation (or after each conv when there are no blocks), and
/// STOCHASTIC_DEPTH assigns linearly decaying survival to residual blocks.
/// Other strategies return the model unchanged.
Model instrument_model(const Model& model, const SchedulePolicy& policy);

}  // namespace rifle
