#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rifle/dataset.hpp"
#include "rifle/network.hpp"
#include "rifle/rng.hpp"
#include "rifle/tensor.hpp"
#include "rifle/trainer.hpp"

namespace rifle {

/// Two-layer ReLU teachers sharing their first layer:
/// h1(x) = W2^T relu(W1^T x), h2(x) = W3^T relu(W1^T x).
struct OracleSpec {
  std::size_t input_dim = 100;
  std::size_t hidden_dim = 50;
  std::size_t output_dim = 1;
  std::size_t n_samples = 1000;
  std::size_t n_test = 1000;
  double noise_var = 0.01;  // variance of the additive label noise
  std::uint64_t seed_w1 = 1;
  std::uint64_t seed_w2 = 2;
  std::uint64_t seed_w3 = 3;
  std::uint64_t seed_data = 4;

  /// Copy with all four seeds derived from one run seed.
  OracleSpec with_seed(std::uint64_t seed) const;
  void validate() const;
};

struct OracleWeights {
  Tensor w1;  // [input_dim x hidden_dim]
  Tensor w2;  // [hidden_dim x output_dim]
  Tensor w3;  // [hidden_dim x output_dim]
};

/// Standard-Gaussian teacher weights.
OracleWeights make_oracles(const OracleSpec& spec);

/// relu(X W1) for rows X [n x input_dim].
Tensor oracle_hidden(const Tensor& w1, const Tensor& x);
/// relu(X W1) Wout, shape [n x output_dim].
Tensor oracle_output(const Tensor& w1, const Tensor& wout, const Tensor& x);

/// `n` pairs with x ~ N(0, I) and y = oracle(x) + eps, eps ~ N(0, noise_var).
Dataset synth_dataset(const Tensor& w1, const Tensor& wout, std::size_t n, double noise_var,
                      Rng& rng);
/// n_samples pairs at noise_var.
Dataset synth_dataset(const Tensor& w1, const Tensor& wout, const OracleSpec& spec, Rng& rng);

enum class GroundCost { kEuclidean, kSquaredEuclidean };

/// Optimal transport between the column sets of two [d x h] matrices under
/// uniform marginals. With equal-size uniform marginals an optimal plan is a
/// permutation, so this is the minimum-cost assignment between columns.
struct TransportPlan {
  std::vector<std::size_t> matching;  // column of b matched to column i of a
  std::vector<double> costs;          // ground cost of each matched pair
  double total = 0.0;                 // mean matched cost
};

/// Throws InvalidArgument when the shapes differ.
TransportPlan ot_distance(const Tensor& a, const Tensor& b,
                          GroundCost cost = GroundCost::kEuclidean);

/// Hyperparameters of the transfer experiment.
struct TransferConfig {
  // Source model trained from scratch with plain SGD on the h1 task.
  std::size_t source_epochs = 200;
  std::size_t source_batch = 32;
  double source_lr = 1e-3;
  // Fine-tuning of both target branches.
  TrainConfig target;
  std::size_t rifle_periods = 4;
  double head_std = 0.01;
  GroundCost ot_cost = GroundCost::kEuclidean;
  std::uint64_t train_seed = 0;

  TransferConfig();
};

struct TransferReport {
  double mse_scratch_source = 0.0;  // source model on a clean h1 test set
  double mse_l2 = 0.0;
  double mse_rifle = 0.0;
  double ot_l2 = 0.0;
  double ot_rifle = 0.0;
  double ot_source = 0.0;  // first layer of the source model vs W1
};

/// Student architecture: dense(input->hidden, no bias) -> relu -> dense head
/// (no bias) -> mse. The first layer is named "hidden", the head "head".
Model oracle_student_model(const OracleSpec& spec);

/// Source training, then L2 and L2+RIFLE fine-tuning on h2 from the same
/// transferred backbone and the same fresh head. Test MSE is measured on a
/// fresh noise-free h2 set. With target.epochs == 0 both branches are the
/// untrained transfer. Throws NumericError if source training diverges.
TransferReport run_transfer(const OracleSpec& spec, const TransferConfig& config);

}  // namespace rifle
