#pragma once

#include "rifle/network.hpp"
#include "rifle/param_store.hpp"

namespace rifle {

enum class RegularizerType { kL2, kL2SP };

/// Explicit penalty and its weights.
///
/// L2:   lambda * ||w||^2 over every entry.
/// L2SP: lambda * ||w - w_s||^2 over BACKBONE entries plus
///       head_lambda * ||w_fc||^2 over the FC head, which has no pre-trained
///       counterpart.
struct RegularizerKind {
  RegularizerType type = RegularizerType::kL2;
  double lambda = 1e-4;
  double head_lambda = 1e-4;

  static RegularizerKind l2(double lambda = 1e-4) { return {RegularizerType::kL2, lambda, lambda}; }
  static RegularizerKind l2sp(double lambda = 1e-2, double head_lambda = 1e-4) {
    return {RegularizerType::kL2SP, lambda, head_lambda};
  }
  /// Throws InvalidArgument on a negative weight.
  void validate() const;
};

/// Sum over all entries of the squared Frobenius norm.
double l2_penalty(const ParamStore& params);

/// ||w - w_s||^2 over BACKBONE entries plus ||w||^2 over FC entries.
/// Throws ContractViolation when the start point is missing.
double l2sp_penalty(const ParamStore& params);

/// empirical_loss + the weighted penalty selected by `reg`.
double total_objective(double empirical_loss, const ParamStore& params, const RegularizerKind& reg);

/// Adds the penalty gradient (2*lambda*w, or 2*lambda*(w - w_s) on L2SP
/// backbone entries) onto backprop gradients in place.
void add_reg_gradients(ParamStore& gradients, const ParamStore& params, const RegularizerKind& reg);

/// The weighted penalty packaged for check_gradients.
ObjectiveTerm as_objective_term(const RegularizerKind& reg);

}  // namespace rifle
