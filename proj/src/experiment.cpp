#include "rifle/experiment.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "rifle/errors.hpp"
#include "rifle/io.hpp"

namespace rifle {

using nlohmann::json;

namespace {

// Typed access to one JSON object with unknown-key rejection.
class Section {
 public:
  Section(const json& obj, std::string path, std::set<std::string> allowed)
      : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail("", "must be an object");
    for (const auto& [key, _] : obj_.items()) {
      if (!allowed.count(key)) fail(key, "unknown key");
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  const json& raw(const std::string& key) const { return obj_.at(key); }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return as<T>(key);
  }

  template <typename T>
  T require(const std::string& key) const {
    if (!has(key)) fail(key, "required");
    return as<T>(key);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    std::string where = path_;
    if (!key.empty()) where += where.empty() ? key : "." + key;
    throw ConfigError(where + ": " + message);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <typename T>
  T as(const std::string& key) const {
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) fail(key, "must be finite");
      return d;
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
        if (v.get<std::int64_t>() < 0) fail(key, "must be non-negative");
      }
      return static_cast<T>(v.get<std::int64_t>());
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  const json& obj_;
  std::string path_;
};

template <typename T>
std::vector<T> integer_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<T> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) throw ConfigError(where + ": expected integers");
    if (e.is_number_unsigned()) {
      out.push_back(static_cast<T>(e.get<std::uint64_t>()));
    } else {
      const auto s = e.get<std::int64_t>();
      if (s < 0) throw ConfigError(where + ": values must be non-negative");
      out.push_back(static_cast<T>(s));
    }
  }
  return out;
}

RegularizerKind parse_regularizer(const json& obj, const std::string& path) {
  Section s(obj, path, {"kind", "lambda", "head_lambda"});
  const std::string kind = s.get<std::string>("kind", "l2");
  RegularizerKind reg;
  if (kind == "l2") {
    reg = RegularizerKind::l2();
  } else if (kind == "l2sp" || kind == "l2_sp") {
    reg = RegularizerKind::l2sp();
  } else {
    s.fail("kind", "expected 'l2' or 'l2sp', got '" + kind + "'");
  }
  reg.lambda = s.get<double>("lambda", reg.lambda);
  reg.head_lambda = s.get<double>("head_lambda", reg.type == RegularizerType::kL2 ? reg.lambda : reg.head_lambda);
  if (reg.lambda < 0.0) s.fail("lambda", "must be >= 0");
  if (reg.head_lambda < 0.0) s.fail("head_lambda", "must be >= 0");
  return reg;
}

void parse_policy(const json& obj, SchedulePolicy& policy) {
  Section s(obj, "policy", {"strategy", "num_periods", "delta", "disturb_p", "drop_p", "cycle_shape"});
  try {
    policy.strategy = parse_strategy(s.get<std::string>("strategy", "none"));
  } catch (const ConfigError& e) {
    s.fail("strategy", e.what());
  }
  policy.num_periods = s.get<std::size_t>("num_periods", 4);
  policy.delta = s.get<double>("delta", 0.01);
  policy.disturb_p = s.get<double>("disturb_p", 0.1);
  policy.drop_p = s.get<double>("drop_p", 0.1);
  const std::string shape = s.get<std::string>("cycle_shape", "full_cosine");
  if (shape == "full_cosine") {
    policy.cycle_shape = CycleShape::kFullCosine;
  } else if (shape == "half_cosine") {
    policy.cycle_shape = CycleShape::kHalfCosine;
  } else {
    s.fail("cycle_shape", "expected 'full_cosine' or 'half_cosine'");
  }
  if (policy.num_periods == 0) s.fail("num_periods", "must be positive");
  if (policy.delta < 0.0) s.fail("delta", "must be >= 0");
  if (policy.disturb_p < 0.0 || policy.disturb_p > 1.0) s.fail("disturb_p", "must lie in [0, 1]");
  if (policy.drop_p < 0.0 || policy.drop_p >= 1.0) s.fail("drop_p", "must lie in [0, 1)");
}

void parse_dataset(const json& obj, TaskKind task, DatasetConfig& d) {
  Section kind_only(json::object(), "dataset", {});
  const std::string kind = obj.is_object() && obj.contains("kind") && obj["kind"].is_string()
                               ? obj["kind"].get<std::string>()
                               : (task == TaskKind::kOracle ? "oracle" : "synth");
  if (kind == "synth") {
    Section s(obj, "dataset",
              {"kind", "num_classes", "per_class", "test_per_class", "dim", "separation", "seed"});
    d.kind = DatasetConfig::Kind::kSynth;
    d.num_classes = s.get<std::size_t>("num_classes", d.num_classes);
    d.per_class = s.get<std::size_t>("per_class", d.per_class);
    d.test_per_class = s.get<std::size_t>("test_per_class", d.per_class);
    d.dim = s.get<std::size_t>("dim", d.dim);
    d.separation = s.get<double>("separation", d.separation);
    if (s.has("seed")) d.seed = s.get<std::uint64_t>("seed", 0);
    if (d.num_classes < 2) s.fail("num_classes", "must be >= 2");
    if (d.per_class == 0) s.fail("per_class", "must be positive");
    if (d.test_per_class == 0) s.fail("test_per_class", "must be positive");
    if (d.dim == 0) s.fail("dim", "must be positive");
    if (d.separation < 0.0) s.fail("separation", "must be >= 0");
  } else if (kind == "csv") {
    Section s(obj, "dataset", {"kind", "source_train", "source_test", "target_train", "target_test"});
    d.kind = DatasetConfig::Kind::kCsv;
    d.source_train = s.get<std::string>("source_train", "");
    d.source_test = s.get<std::string>("source_test", "");
    d.target_train = s.require<std::string>("target_train");
    d.target_test = s.require<std::string>("target_test");
  } else if (kind == "oracle") {
    Section s(obj, "dataset", {"kind", "input_dim", "hidden_dim", "n_samples", "n_test", "noise_var"});
    d.kind = DatasetConfig::Kind::kOracle;
    d.oracle.input_dim = s.get<std::size_t>("input_dim", 100);
    d.oracle.hidden_dim = s.get<std::size_t>("hidden_dim", 50);
    d.oracle.n_samples = s.get<std::size_t>("n_samples", 1000);
    d.oracle.n_test = s.get<std::size_t>("n_test", 1000);
    d.oracle.noise_var = s.get<double>("noise_var", 0.01);
    try {
      d.oracle.validate();
    } catch (const InvalidArgument& e) {
      s.fail("", e.what());
    }
  } else {
    throw ConfigError("dataset.kind: expected 'synth', 'csv' or 'oracle', got '" + kind + "'");
  }
  if ((task == TaskKind::kOracle) != (d.kind == DatasetConfig::Kind::kOracle)) {
    throw ConfigError("dataset.kind: '" + kind + "' does not fit the task");
  }
}

void parse_train(const json& obj, ExperimentConfig& cfg) {
  Section s(obj, "train",
            {"epochs", "batch_size", "momentum", "eta_max", "regularizer", "probe_layers",
             "reset_velocity_on_reinit", "pretrain_epochs", "pretrain_eta", "source_epochs",
             "source_batch", "source_lr"});
  TrainConfig& t = cfg.train;
  t.epochs = s.get<std::size_t>("epochs", 40);
  t.batch_size = s.get<std::size_t>("batch_size", 32);
  t.momentum = s.get<double>("momentum", 0.9);
  t.eta_max = s.get<double>("eta_max", cfg.task == TaskKind::kOracle ? cfg.transfer.target.eta_max : 0.01);
  t.regularizer = s.has("regularizer") ? parse_regularizer(s.raw("regularizer"), "train.regularizer")
                                       : RegularizerKind::l2();
  t.reset_velocity_on_reinit = s.get<bool>("reset_velocity_on_reinit", false);
  if (s.has("probe_layers")) {
    const json& p = s.raw("probe_layers");
    if (!p.is_array()) s.fail("probe_layers", "expected an array of strings");
    for (const auto& e : p) {
      if (!e.is_string()) s.fail("probe_layers", "expected an array of strings");
      t.probe_layers.push_back(e.get<std::string>());
    }
  }
  cfg.pretrain_epochs = s.get<std::size_t>("pretrain_epochs", cfg.pretrain_epochs);
  cfg.pretrain_eta = s.get<double>("pretrain_eta", cfg.pretrain_eta);
  cfg.transfer.source_epochs = s.get<std::size_t>("source_epochs", cfg.transfer.source_epochs);
  cfg.transfer.source_batch = s.get<std::size_t>("source_batch", cfg.transfer.source_batch);
  cfg.transfer.source_lr = s.get<double>("source_lr", cfg.transfer.source_lr);

  if (t.batch_size == 0) s.fail("batch_size", "must be positive");
  if (t.momentum < 0.0 || t.momentum >= 1.0) s.fail("momentum", "must lie in [0, 1)");
  if (t.eta_max <= 0.0) s.fail("eta_max", "must be > 0");
  if (cfg.pretrain_eta <= 0.0) s.fail("pretrain_eta", "must be > 0");
  if (cfg.transfer.source_lr <= 0.0) s.fail("source_lr", "must be > 0");
  if (cfg.transfer.source_batch == 0) s.fail("source_batch", "must be positive");
  // Zero fine-tuning epochs is only meaningful for the oracle experiment.
  if (t.epochs == 0 && cfg.task != TaskKind::kOracle) s.fail("epochs", "must be positive");
}

Model preset_mlp(const Section& s, std::size_t features, std::size_t classes) {
  std::vector<std::size_t> hidden = {64};
  if (s.has("hidden")) hidden = integer_list<std::size_t>(s.raw("hidden"), s.child("hidden"));
  Model m;
  m.input_shape = {features};
  std::size_t width = features;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == 0) s.fail("hidden", "widths must be positive");
    m.layers.push_back(LayerSpec::dense(width, hidden[i], "fc" + std::to_string(i + 1)));
    m.layers.push_back(LayerSpec::relu());
    width = hidden[i];
  }
  m.layers.push_back(LayerSpec::dense(width, classes, "head"));
  m.layers.push_back(LayerSpec::softmax_ce());
  return m;
}

LayerSpec parse_layer(const json& obj, const std::string& path) {
  Section s(obj, path, {"kind", "name", "in", "out", "stride", "bias", "p", "survival"});
  LayerSpec l;
  try {
    l.kind = parse_layer_kind(s.require<std::string>("kind"));
  } catch (const ConfigError& e) {
    s.fail("kind", e.what());
  }
  l.name = s.get<std::string>("name", "");
  l.in = s.get<std::size_t>("in", 0);
  l.out = s.get<std::size_t>("out", 0);
  l.stride = s.get<std::size_t>("stride", 1);
  l.bias = s.get<bool>("bias", true);
  if (s.has("p")) l.perturb = s.get<double>("p", 0.0);
  if (s.has("survival")) l.survival = s.get<double>("survival", 1.0);
  if (l.kind == LayerKind::kResidualBlock && !l.survival) l.survival = 1.0;
  return l;
}

std::string seed_label(std::uint64_t seed) { return std::to_string(seed); }

std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& cfg, std::int64_t offset) {
  std::vector<std::uint64_t> out;
  out.reserve(cfg.seeds.size());
  for (auto s : cfg.seeds) out.push_back(s + static_cast<std::uint64_t>(offset));
  return out;
}

std::filesystem::path output_dir(const ExperimentConfig& cfg, const RunOptions& opts) {
  return opts.out_dir ? *opts.out_dir : std::filesystem::path(cfg.output_dir);
}

// Runs job(i) for i in [0, count) on a bounded pool. Each worker owns one run
// at a time; OpenMP inside workers is pinned to one thread when jobs > 1.
template <typename Job>
void run_pool(std::size_t count, std::size_t jobs, Job&& job) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      omp_set_num_threads(1);
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : workers) t.join();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); 0 for a single value.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    err << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig parse_config(const json& doc) {
  Section top(doc, "", {"task", "model", "dataset", "train", "policy", "output_dir", "seeds"});
  ExperimentConfig cfg;
  cfg.echo = doc;
  const std::string task = top.get<std::string>("task", "classify");
  if (task == "classify") {
    cfg.task = TaskKind::kClassify;
  } else if (task == "oracle") {
    cfg.task = TaskKind::kOracle;
  } else {
    top.fail("task", "expected 'classify' or 'oracle', got '" + task + "'");
  }

  if (!top.has("seeds")) top.fail("seeds", "at least one required");
  cfg.seeds = integer_list<std::uint64_t>(top.raw("seeds"), "seeds");
  if (cfg.seeds.empty()) top.fail("seeds", "at least one required");

  parse_dataset(top.has("dataset") ? top.raw("dataset") : json::object(), cfg.task, cfg.dataset);
  parse_train(top.has("train") ? top.raw("train") : json::object(), cfg);
  parse_policy(top.has("policy") ? top.raw("policy") : json::object(), cfg.train.policy);
  cfg.output_dir = top.get<std::string>("output_dir", "out");

  if (top.has("model")) {
    if (cfg.task == TaskKind::kOracle) top.fail("model", "the oracle task uses a fixed student model");
    cfg.model_json = top.raw("model");
    if (!cfg.model_json.is_object()) top.fail("model", "must be an object");
  }

  if (cfg.task == TaskKind::kOracle) {
    cfg.transfer.target = cfg.train;
    cfg.transfer.rifle_periods = cfg.train.policy.num_periods;
    cfg.transfer.head_std = cfg.train.policy.delta;
    if (cfg.train.epochs > 0 && cfg.train.epochs % cfg.train.policy.num_periods != 0) {
      throw ConfigError("policy.num_periods: must divide train.epochs");
    }
  } else if (cfg.train.policy.is_periodic() && cfg.train.epochs % cfg.train.policy.num_periods != 0) {
    throw ConfigError("policy.num_periods: must divide train.epochs (" +
                      std::to_string(cfg.train.epochs) + ")");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_config(doc);
}

Model surrogate_cnn(const Shape& input_shape, std::size_t num_classes) {
  if (input_shape.size() != 3) {
    throw InvalidArgument("surrogate_cnn: input shape must be [C x H x W], got " + to_string(input_shape));
  }
  Model m;
  m.input_shape = input_shape;
  m.layers = {
      LayerSpec::conv3x3(input_shape[0], 8, 1, "stem"), LayerSpec::relu(),
      LayerSpec::residual(8, 8, 1, "stage1"),           LayerSpec::relu(),
      LayerSpec::residual(8, 16, 2, "stage2"),          LayerSpec::relu(),
      LayerSpec::residual(16, 32, 2, "stage3"),         LayerSpec::relu(),
      LayerSpec::residual(32, 64, 2, "stage4"),         LayerSpec::relu(),
      LayerSpec::global_avg_pool(),                     LayerSpec::dense(64, num_classes, "fc"),
      LayerSpec::softmax_ce(),
  };
  m.validate();
  return m;
}

Model build_model(const json& spec, std::size_t feature_size, std::size_t num_classes) {
  Section s(spec, "model", {"preset", "hidden", "input_shape", "layers"});
  Shape input_shape = {feature_size};
  if (s.has("input_shape")) {
    input_shape = integer_list<std::size_t>(s.raw("input_shape"), "model.input_shape");
    if (element_count(input_shape) != feature_size) {
      s.fail("input_shape", to_string(input_shape) + " does not hold " + std::to_string(feature_size) +
                                " features");
    }
  }
  Model m;
  if (s.has("layers")) {
    if (s.has("preset")) s.fail("preset", "give either a preset or a layer list");
    const json& layers = s.raw("layers");
    if (!layers.is_array() || layers.empty()) s.fail("layers", "expected a nonempty array");
    m.input_shape = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      m.layers.push_back(parse_layer(layers[i], "model.layers[" + std::to_string(i) + "]"));
    }
  } else {
    const std::string preset = s.get<std::string>("preset", "mlp");
    if (preset == "mlp") {
      m = preset_mlp(s, feature_size, num_classes);
    } else if (preset == "surrogate_cnn") {
      if (s.has("hidden")) s.fail("hidden", "not used by surrogate_cnn");
      if (!s.has("input_shape")) s.fail("input_shape", "required for surrogate_cnn");
      m = surrogate_cnn(input_shape, num_classes);
    } else {
      s.fail("preset", "expected 'mlp' or 'surrogate_cnn', got '" + preset + "'");
    }
  }
  try {
    m.validate();
    if (m.num_classes() != num_classes) {
      throw InvalidArgument("model emits " + std::to_string(m.num_classes()) + " logits for " +
                            std::to_string(num_classes) + " classes");
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return m;
}

SynthTransferData load_classification_data(const DatasetConfig& cfg, std::uint64_t run_seed) {
  if (cfg.kind == DatasetConfig::Kind::kSynth) {
    return make_synth_classification(cfg.num_classes, cfg.per_class, cfg.dim, cfg.separation,
                                     cfg.seed.value_or(run_seed), cfg.test_per_class);
  }
  if (cfg.kind != DatasetConfig::Kind::kCsv) throw ConfigError("dataset.kind: not a classification dataset");
  SynthTransferData d;
  d.target_train = io::read_csv(cfg.target_train, -1);
  d.target_test = io::read_csv(cfg.target_test, static_cast<int>(d.target_train.num_classes));
  if (!cfg.source_train.empty()) {
    d.source_train = io::read_csv(cfg.source_train, -1);
    if (!cfg.source_test.empty()) {
      d.source_test = io::read_csv(cfg.source_test, static_cast<int>(d.source_train.num_classes));
    }
  }
  return d;
}

ClassificationRun run_classification_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_classification_seed(cfg, seed, load_classification_data(cfg.dataset, seed));
}

ClassificationRun run_classification_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                          const SynthTransferData& data) {
  const Rng root(seed);
  const std::size_t features = data.target_train.feature_size();
  const Model target_model = build_model(cfg.model_json, features, data.target_train.num_classes);
  const double delta = cfg.train.policy.delta;

  Rng init_rng = root.derive(31);
  ParamStore params = init_params(target_model, init_rng, delta);

  if (cfg.pretrain_epochs > 0 && data.source_train.size() > 0) {
    if (data.source_train.feature_size() != features) {
      throw ConfigError("dataset: source and target feature counts differ");
    }
    const Model source_model = build_model(cfg.model_json, features, data.source_train.num_classes);
    Rng source_init = root.derive(32);
    ParamStore source = init_params(source_model, source_init, delta);
    TrainConfig pre;
    pre.epochs = cfg.pretrain_epochs;
    pre.batch_size = cfg.train.batch_size;
    pre.momentum = cfg.train.momentum;
    pre.eta_max = cfg.pretrain_eta;
    pre.regularizer = RegularizerKind::l2();
    pre.seed = root.derive(33).next_u64();
    pre.eval_every_epoch = false;
    source = train(source_model, std::move(source), data.source_train, {}, pre).params;
    // Transfer every backbone tensor; the head stays the fresh draw.
    for (auto& e : params) {
      if (e.role == Role::kBackbone) e.value = source.value(e.name);
    }
  }
  params.freeze_start_point();

  const Model model = instrument_model(target_model, cfg.train.policy);
  TrainConfig tc = cfg.train;
  tc.seed = root.derive(34).next_u64();
  ClassificationRun run;
  run.seed = seed;
  run.result = train(model, std::move(params), data.target_train, data.target_test, tc);
  run.final_test = evaluate(model, run.result.params, data.target_test);
  return run;
}

std::int64_t seed_offset_from_env() {
  const char* raw = std::getenv("RIFLE_LAB_SEED_OFFSET");
  if (!raw || !*raw) return 0;
  char* end = nullptr;
  const long long v = std::strtoll(raw, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("RIFLE_LAB_SEED_OFFSET: not an integer: '") + raw + "'");
  return v;
}

namespace {

struct SeedOutcome {
  bool ok = false;
  std::string error;
  json summary;
};

int run_classification_command(const std::filesystem::path& config_path, const RunOptions& opts,
                               std::ostream& log, std::ostream& err, bool probe_only) {
  return guarded(err, [&]() -> int {
    ExperimentConfig cfg = load_config(config_path);
    if (cfg.task != TaskKind::kClassify) {
      throw ConfigError(std::string("task: '") + (probe_only ? "grad-probe" : "train") +
                        "' needs task 'classify'");
    }
    if (probe_only && cfg.train.probe_layers.empty()) {
      throw ConfigError("train.probe_layers: at least one pattern required");
    }
    const auto seeds = effective_seeds(cfg, opts.seed_offset);
    const auto dir = output_dir(cfg, opts);

    // Fail fast on probe patterns before any training.
    if (!cfg.train.probe_layers.empty()) {
      const auto data = load_classification_data(cfg.dataset, seeds.front());
      const Model model = instrument_model(
          build_model(cfg.model_json, data.target_train.feature_size(), data.target_train.num_classes),
          cfg.train.policy);
      Rng r(0);
      const ParamStore params = init_params(model, r);
      for (const auto& pattern : cfg.train.probe_layers) {
        const bool hit = std::any_of(params.begin(), params.end(),
                                     [&](const ParamEntry& e) { return matches_pattern(pattern, e.name); });
        if (!hit) throw ConfigError("train.probe_layers: pattern '" + pattern + "' matches no parameter");
      }
    }

    std::vector<SeedOutcome> outcomes(seeds.size());
    std::mutex log_mutex;
    run_pool(seeds.size(), opts.jobs, [&](std::size_t i) {
      const auto seed = seeds[i];
      try {
        const ClassificationRun run = run_classification_seed(cfg, seed);
        const auto& tel = run.result.telemetry;
        if (!probe_only) io::write_file_atomic(dir / ("telemetry_" + seed_label(seed) + ".csv"), io::telemetry_csv(tel));
        io::write_file_atomic(dir / ("gradnorm_" + seed_label(seed) + ".csv"), io::gradnorm_csv(tel));
        outcomes[i].ok = true;
        outcomes[i].summary = {{"seed", seed},
                               {"test_top1", run.final_test.top1},
                               {"test_loss", run.final_test.loss},
                               {"train_top1", tel.back().train_top1},
                               {"train_loss", tel.back().train_loss},
                               {"reset_epochs", std::count_if(tel.begin(), tel.end(),
                                                              [](const auto& r) { return r.reset_event; })}};
        std::lock_guard lock(log_mutex);
        log << fmt::format("seed {}: test_top1 {:.4f} test_loss {:.4f}\n", seed, run.final_test.top1,
                           run.final_test.loss);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    });

    std::vector<double> top1, loss;
    json per_seed = json::array();
    json failed = json::array();
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (outcomes[i].ok) {
        per_seed.push_back(outcomes[i].summary);
        top1.push_back(outcomes[i].summary["test_top1"].get<double>());
        loss.push_back(outcomes[i].summary["test_loss"].get<double>());
      } else {
        failed.push_back({{"seed", seeds[i]}, {"error", outcomes[i].error}});
        err << "seed " << seeds[i] << " failed: " << outcomes[i].error << "\n";
      }
    }
    if (!probe_only) {
      json summary = {{"config", cfg.echo},
                      {"seed_offset", opts.seed_offset},
                      {"strategy", to_string(cfg.train.policy.strategy)},
                      {"seeds", per_seed},
                      {"failed_seeds", failed},
                      {"mean_test_top1", mean_of(top1)},
                      {"std_test_top1", std_of(top1)},
                      {"mean_test_loss", mean_of(loss)},
                      {"std_test_loss", std_of(loss)}};
      io::write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
    }
    return failed.empty() ? 0 : 1;
  });
}

}  // namespace

int cmd_train(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& log,
              std::ostream& err) {
  return run_classification_command(config_path, opts, log, err, false);
}

int cmd_grad_probe(const std::filesystem::path& config_path, const RunOptions& opts,
                   std::ostream& log, std::ostream& err) {
  return run_classification_command(config_path, opts, log, err, true);
}

int cmd_oracle(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& log,
               std::ostream& err) {
  return guarded(err, [&]() -> int {
    const ExperimentConfig cfg = load_config(config_path);
    if (cfg.task != TaskKind::kOracle) throw ConfigError("task: 'oracle' command needs task 'oracle'");
    const auto seeds = effective_seeds(cfg, opts.seed_offset);
    const auto dir = output_dir(cfg, opts);
    std::vector<SeedOutcome> outcomes(seeds.size());
    std::mutex log_mutex;
    run_pool(seeds.size(), opts.jobs, [&](std::size_t i) {
      const auto seed = seeds[i];
      try {
        const OracleSpec spec = cfg.dataset.oracle.with_seed(seed);
        TransferConfig tc = cfg.transfer;
        tc.train_seed = seed;
        const TransferReport r = run_transfer(spec, tc);
        json report = {{"seed", seed},
                       {"mse_scratch_source", r.mse_scratch_source},
                       {"mse_l2", r.mse_l2},
                       {"mse_rifle", r.mse_rifle},
                       {"ot_l2", r.ot_l2},
                       {"ot_rifle", r.ot_rifle},
                       {"ot_source", r.ot_source},
                       {"spec", {{"input_dim", spec.input_dim},
                                 {"hidden_dim", spec.hidden_dim},
                                 {"output_dim", spec.output_dim},
                                 {"n_samples", spec.n_samples},
                                 {"n_test", spec.n_test},
                                 {"noise_var", spec.noise_var}}},
                       {"config", cfg.echo}};
        io::write_file_atomic(dir / ("oracle_" + seed_label(seed) + ".json"), report.dump(2) + "\n");
        outcomes[i].ok = true;
        outcomes[i].summary = std::move(report);
        std::lock_guard lock(log_mutex);
        log << fmt::format("seed {}: mse_l2 {:.4g} mse_rifle {:.4g} ot_l2 {:.4g} ot_rifle {:.4g}\n", seed,
                           r.mse_l2, r.mse_rifle, r.ot_l2, r.ot_rifle);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    });

    std::map<std::string, std::vector<double>> columns;
    json failed = json::array();
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (!outcomes[i].ok) {
        failed.push_back({{"seed", seeds[i]}, {"error", outcomes[i].error}});
        err << "seed " << seeds[i] << " failed: " << outcomes[i].error << "\n";
        continue;
      }
      for (const char* key : {"mse_scratch_source", "mse_l2", "mse_rifle", "ot_l2", "ot_rifle", "ot_source"}) {
        columns[key].push_back(outcomes[i].summary[key].get<double>());
      }
    }
    json aggregate = {{"config", cfg.echo}, {"seed_offset", opts.seed_offset}, {"failed_seeds", failed}};
    json seed_list = json::array();
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (outcomes[i].ok) seed_list.push_back(seeds[i]);
    }
    aggregate["seeds"] = seed_list;
    for (const auto& [key, values] : columns) aggregate["median_" + key] = median_of(values);
    io::write_file_atomic(dir / "aggregate.json", aggregate.dump(2) + "\n");
    return failed.empty() ? 0 : 1;
  });
}

int cmd_make_data(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& log,
                  std::ostream& err) {
  return guarded(err, [&]() -> int {
    const ExperimentConfig cfg = load_config(config_path);
    if (cfg.dataset.kind != DatasetConfig::Kind::kSynth) {
      throw ConfigError("dataset.kind: make-data needs a 'synth' dataset");
    }
    const auto seeds = effective_seeds(cfg, opts.seed_offset);
    const auto dir = output_dir(cfg, opts);
    const std::uint64_t seed = cfg.dataset.seed.value_or(seeds.front());
    const auto d = load_classification_data(cfg.dataset, seed);
    io::write_file_atomic(dir / "source_train.csv", io::to_csv(d.source_train));
    io::write_file_atomic(dir / "source_test.csv", io::to_csv(d.source_test));
    io::write_file_atomic(dir / "target_train.csv", io::to_csv(d.target_train));
    io::write_file_atomic(dir / "target_test.csv", io::to_csv(d.target_test));
    log << fmt::format("wrote {} train / {} test rows per task to {}\n", d.target_train.size(),
                       d.target_test.size(), dir.string());
    return 0;
  });
}

}  // namespace rifle
