#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rifle/dataset.hpp"
#include "rifle/network.hpp"
#include "rifle/oracle.hpp"
#include "rifle/synth.hpp"
#include "rifle/trainer.hpp"

namespace rifle {

enum class TaskKind { kClassify, kOracle };

struct DatasetConfig {
  enum class Kind { kSynth, kCsv, kOracle } kind = Kind::kSynth;
  // synth
  std::size_t num_classes = 20;
  std::size_t per_class = 50;
  std::size_t test_per_class = 50;
  std::size_t dim = 32;
  double separation = 3.0;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  // csv
  std::filesystem::path source_train, source_test, target_train, target_test;
  // oracle
  OracleSpec oracle;
};

/// A fully parsed experiment file. Defaults follow the standard fine-tuning
/// settings (batch 32, momentum 0.9, LR 0.01, 40 epochs).
struct ExperimentConfig {
  TaskKind task = TaskKind::kClassify;
  nlohmann::json model_json = nlohmann::json::object();
  DatasetConfig dataset;
  TrainConfig train;
  // Source pre-training for the classification task.
  std::size_t pretrain_epochs = 20;
  double pretrain_eta = 0.01;
  // Oracle experiment knobs.
  TransferConfig transfer;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds;
  /// The input document, echoed into every summary file.
  nlohmann::json echo;
};

/// Validates keys and values; throws ConfigError with a "section.field: ..."
/// message. Unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& doc);
/// Reads and parses a config file; malformed JSON raises ConfigError carrying
/// the parse location.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Builds the model described by `spec` ("preset": "mlp" | "surrogate_cnn",
/// or an explicit "layers" list) for the given input size and class count.
Model build_model(const nlohmann::json& spec, std::size_t feature_size, std::size_t num_classes);

/// The surrogate CNN: stem conv, four single-block residual stages of widths
/// 8/16/32/64 (strides 1/2/2/2), global average pooling, one FC head.
/// Parameter names: stem.*, stage1..stage4.{conv1,conv2,proj}.*, fc.*.
Model surrogate_cnn(const Shape& input_shape, std::size_t num_classes);

/// Source/target splits for a classification experiment.
SynthTransferData load_classification_data(const DatasetConfig& cfg, std::uint64_t run_seed);

struct ClassificationRun {
  std::uint64_t seed = 0;
  TrainResult result;
  Metrics final_test;
};

/// One seed: (optional) source pre-training, fresh head, fine-tuning on the
/// target task under cfg.train.policy. Deterministic in (cfg, seed).
ClassificationRun run_classification_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Like run_classification_seed with preloaded data.
ClassificationRun run_classification_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                          const SynthTransferData& data);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::size_t jobs = 1;
  std::int64_t seed_offset = 0;  // from RIFLE_LAB_SEED_OFFSET
};

/// Reads RIFLE_LAB_SEED_OFFSET (default 0). Throws ConfigError if malformed.
std::int64_t seed_offset_from_env();

// Command entry points. Return the process exit code: 0 when every seed
// completed, 2 for configuration errors, 1 for run failures. Diagnostics go
// to `err`, progress lines to `log`.
int cmd_train(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& log,
              std::ostream& err);
int cmd_oracle(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& log,
               std::ostream& err);
int cmd_grad_probe(const std::filesystem::path& config_path, const RunOptions& opts,
                   std::ostream& log, std::ostream& err);
int cmd_make_data(const std::filesystem::path& config_path, const RunOptions& opts,
                  std::ostream& log, std::ostream& err);

}  // namespace rifle
