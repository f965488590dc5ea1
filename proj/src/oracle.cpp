#include "rifle/oracle.hpp"

#include <cmath>

#include "rifle/assignment.hpp"
#include "rifle/errors.hpp"

namespace rifle {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  return Rng(seed).derive(stream).next_u64();
}

double column_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j,
                       GroundCost cost) {
  double sum = 0.0;
  for (std::size_t r = 0; r < a.dim(0); ++r) {
    const double d = a.at(r, i) - b.at(r, j);
    sum += d * d;
  }
  return cost == GroundCost::kEuclidean ? std::sqrt(sum) : sum;
}

double test_mse(const Model& model, const ParamStore& params, const Dataset& test) {
  return evaluate(model, params, test).mse;
}

}  // namespace

OracleSpec OracleSpec::with_seed(std::uint64_t seed) const {
  OracleSpec s = *this;
  s.seed_w1 = mix(seed, 11);
  s.seed_w2 = mix(seed, 12);
  s.seed_w3 = mix(seed, 13);
  s.seed_data = mix(seed, 14);
  return s;
}

void OracleSpec::validate() const {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) {
    throw InvalidArgument("oracle dimensions must be positive");
  }
  if (n_samples == 0 || n_test == 0) throw InvalidArgument("oracle sample counts must be positive");
  if (!(noise_var >= 0.0)) throw InvalidArgument("oracle noise_var must be >= 0");
}

OracleWeights make_oracles(const OracleSpec& spec) {
  spec.validate();
  Rng r1(spec.seed_w1), r2(spec.seed_w2), r3(spec.seed_w3);
  return {gaussian_init({spec.input_dim, spec.hidden_dim}, 0.0, 1.0, r1),
          gaussian_init({spec.hidden_dim, spec.output_dim}, 0.0, 1.0, r2),
          gaussian_init({spec.hidden_dim, spec.output_dim}, 0.0, 1.0, r3)};
}

Tensor oracle_hidden(const Tensor& w1, const Tensor& x) {
  Tensor h = matmul(x, w1);
  for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
  return h;
}

Tensor oracle_output(const Tensor& w1, const Tensor& wout, const Tensor& x) {
  return matmul(oracle_hidden(w1, x), wout);
}

Dataset synth_dataset(const Tensor& w1, const Tensor& wout, std::size_t n, double noise_var,
                      Rng& rng) {
  if (w1.rank() != 2 || wout.rank() != 2 || w1.dim(1) != wout.dim(0)) {
    throw ShapeError("synth_dataset: W1 " + to_string(w1.shape()) + " and Wout " +
                     to_string(wout.shape()) + " do not conform");
  }
  if (!(noise_var >= 0.0)) throw InvalidArgument("synth_dataset: noise_var must be >= 0");
  Tensor x = gaussian_init({n, w1.dim(0)}, 0.0, 1.0, rng);
  Tensor y = oracle_output(w1, wout, x);
  const double noise_std = std::sqrt(noise_var);
  if (noise_std > 0.0) {
    for (double& v : y.data()) v += rng.normal(0.0, noise_std);
  }
  return {std::move(x), std::move(y), 0};
}

Dataset synth_dataset(const Tensor& w1, const Tensor& wout, const OracleSpec& spec, Rng& rng) {
  return synth_dataset(w1, wout, spec.n_samples, spec.noise_var, rng);
}

TransportPlan ot_distance(const Tensor& a, const Tensor& b, GroundCost cost) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw InvalidArgument("ot_distance: shapes " + to_string(a.shape()) + " and " +
                          to_string(b.shape()) + " must be equal rank-2");
  }
  const std::size_t h = a.dim(1);
  Tensor c({h, h});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < h; ++j) c.at(i, j) = column_distance(a, i, b, j, cost);
  }
  const Assignment assignment = solve_assignment(c);
  TransportPlan plan;
  plan.matching = assignment.column_for_row;
  plan.costs.reserve(h);
  double sum = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    plan.costs.push_back(c.at(i, plan.matching[i]));
    sum += plan.costs.back();
  }
  plan.total = sum / static_cast<double>(h);
  return plan;
}

TransferConfig::TransferConfig() {
  target.epochs = 40;
  target.batch_size = 32;
  target.momentum = 0.9;
  target.eta_max = 1e-3;
  target.regularizer = RegularizerKind::l2(1e-4);
}

Model oracle_student_model(const OracleSpec& spec) {
  Model m;
  m.input_shape = {spec.input_dim};
  m.layers = {LayerSpec::dense(spec.input_dim, spec.hidden_dim, "hidden", false), LayerSpec::relu(),
              LayerSpec::dense(spec.hidden_dim, spec.output_dim, "head", false), LayerSpec::mse()};
  m.validate();
  return m;
}

TransferReport run_transfer(const OracleSpec& spec, const TransferConfig& config) {
  const OracleWeights oracle = make_oracles(spec);
  Rng data_rng(spec.seed_data);
  const Dataset source_train = synth_dataset(oracle.w1, oracle.w2, spec, data_rng);
  const Dataset target_train = synth_dataset(oracle.w1, oracle.w3, spec, data_rng);
  const Dataset source_test = synth_dataset(oracle.w1, oracle.w2, spec.n_test, 0.0, data_rng);
  const Dataset target_test = synth_dataset(oracle.w1, oracle.w3, spec.n_test, 0.0, data_rng);

  const Model model = oracle_student_model(spec);
  const Rng root(config.train_seed);

  // Source model from scratch: plain SGD, no penalty, global anneal.
  Rng init_rng = root.derive(21);
  ParamStore source = init_params(model, init_rng,
                                  std::sqrt(1.0 / static_cast<double>(spec.hidden_dim)));
  TrainConfig source_cfg;
  source_cfg.epochs = config.source_epochs;
  source_cfg.batch_size = config.source_batch;
  source_cfg.momentum = 0.0;
  source_cfg.eta_max = config.source_lr;
  source_cfg.regularizer = RegularizerKind::l2(0.0);
  source_cfg.policy.strategy = Strategy::kNone;
  source_cfg.seed = root.derive(22).next_u64();
  source_cfg.eval_every_epoch = false;
  try {
    source = train(model, std::move(source), source_train, {}, source_cfg).params;
  } catch (const NumericError& e) {
    throw NumericError(std::string("source training diverged: ") + e.what());
  }
  for (const auto& e : source) {
    if (!e.value.all_finite()) throw NumericError("source training diverged: non-finite weights");
  }

  TransferReport report;
  report.mse_scratch_source = test_mse(model, source, source_test);
  report.ot_source = ot_distance(source.value("hidden.weight"), oracle.w1, config.ot_cost).total;

  // Transferred backbone plus one fresh head shared by both branches.
  ParamStore start = source;
  Rng head_rng = root.derive(23);
  Tensor& head = start.value("head.weight");
  head = gaussian_init(head.shape(), 0.0, config.head_std, head_rng);
  start.freeze_start_point();

  auto finetune = [&](Strategy strategy) {
    if (config.target.epochs == 0) return start;
    TrainConfig cfg = config.target;
    cfg.policy.strategy = strategy;
    cfg.policy.num_periods = config.rifle_periods;
    cfg.policy.delta = config.head_std;
    cfg.seed = root.derive(24).next_u64();
    cfg.eval_every_epoch = false;
    return train(model, start, target_train, {}, cfg).params;
  };
  const ParamStore l2 = finetune(Strategy::kNone);
  const ParamStore rifle = finetune(Strategy::kRifle);

  report.mse_l2 = test_mse(model, l2, target_test);
  report.mse_rifle = test_mse(model, rifle, target_test);
  report.ot_l2 = ot_distance(l2.value("hidden.weight"), oracle.w1, config.ot_cost).total;
  report.ot_rifle = ot_distance(rifle.value("hidden.weight"), oracle.w1, config.ot_cost).total;
  return report;
}

}  // namespace rifle
