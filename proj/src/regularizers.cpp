#include "rifle/regularizers.hpp"

#include "rifle/errors.hpp"

namespace rifle {

namespace {

double squared_distance(const Tensor& a, const Tensor& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

}  // namespace

void RegularizerKind::validate() const {
  if (!(lambda >= 0.0)) throw InvalidArgument("regularizer lambda must be >= 0");
  if (!(head_lambda >= 0.0)) throw InvalidArgument("regularizer head_lambda must be >= 0");
}

double l2_penalty(const ParamStore& params) {
  double sum = 0.0;
  for (const auto& e : params) sum += squared_norm(e.value);
  return sum;
}

double l2sp_penalty(const ParamStore& params) {
  if (!params.has_start_point()) {
    throw ContractViolation("l2sp_penalty: start point is not populated");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(i);
    sum += e.role == Role::kFc ? squared_norm(e.value) : squared_distance(e.value, params.start_point(i));
  }
  return sum;
}

double total_objective(double empirical_loss, const ParamStore& params, const RegularizerKind& reg) {
  if (reg.type == RegularizerType::kL2) {
    return reg.lambda == 0.0 ? empirical_loss : empirical_loss + reg.lambda * l2_penalty(params);
  }
  if (!params.has_start_point()) {
    throw ContractViolation("L2-SP objective: start point is not populated");
  }
  double backbone = 0.0;
  double head = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(i);
    if (e.role == Role::kFc) {
      head += squared_norm(e.value);
    } else {
      backbone += squared_distance(e.value, params.start_point(i));
    }
  }
  return empirical_loss + reg.lambda * backbone + reg.head_lambda * head;
}

void add_reg_gradients(ParamStore& gradients, const ParamStore& params, const RegularizerKind& reg) {
  params.require_same_layout(gradients, "add_reg_gradients");
  const bool sp = reg.type == RegularizerType::kL2SP;
  if (sp && !params.has_start_point()) {
    throw ContractViolation("L2-SP gradient: start point is not populated");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(i);
    Tensor& g = gradients.entry(i).value;
    if (!sp) {
      g.add_scaled(e.value, 2.0 * reg.lambda);
    } else if (e.role == Role::kFc) {
      g.add_scaled(e.value, 2.0 * reg.head_lambda);
    } else {
      const Tensor& start = params.start_point(i);
      const double scale = 2.0 * reg.lambda;
      for (std::size_t q = 0; q < g.size(); ++q) g[q] += scale * (e.value[q] - start[q]);
    }
  }
}

ObjectiveTerm as_objective_term(const RegularizerKind& reg) {
  ObjectiveTerm term;
  term.value = [reg](const ParamStore& p) { return total_objective(0.0, p, reg); };
  term.add_gradient = [reg](ParamStore& g, const ParamStore& p) { add_reg_gradients(g, p, reg); };
  return term;
}

}  // namespace rifle
