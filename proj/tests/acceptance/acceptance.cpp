// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance                 run all criteria
//   acceptance --criterion N   run one criterion (exit 1 if it fails)

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "architectures.hpp"
#include "json.hpp"
#include "rifle/experiment.hpp"
#include "rifle/io.hpp"
#include "rifle/oracle.hpp"
#include "rifle/regularizers.hpp"
#include "rifle/schedules.hpp"
#include "rifle/trainer.hpp"

using namespace rifle;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

bool within_factor(double value, double reference, double factor) {
  return value >= reference / factor && value <= reference * factor;
}

// 1. Oracle experiment over 10 seeds at the default settings.
Outcome oracle_direction() {
  const OracleSpec base;
  const TransferConfig cfg;
  std::vector<double> mse_l2, mse_rifle, ot_l2, ot_rifle;
  int rifle_better = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TransferConfig c = cfg;
    c.train_seed = seed;
    const TransferReport r = run_transfer(base.with_seed(seed), c);
    mse_l2.push_back(r.mse_l2);
    mse_rifle.push_back(r.mse_rifle);
    ot_l2.push_back(r.ot_l2);
    ot_rifle.push_back(r.ot_rifle);
    rifle_better += r.mse_rifle < r.mse_l2;
  }
  const double m_l2 = median(mse_l2), m_rifle = median(mse_rifle);
  const double o_l2 = median(ot_l2), o_rifle = median(ot_rifle);
  const bool direction = m_rifle < m_l2 && o_rifle <= o_l2;
  const bool magnitude = within_factor(m_rifle, 3.98e-3, 5.0) && within_factor(m_l2, 1.16e-2, 5.0) &&
                         within_factor(o_rifle, 0.1198, 5.0) && within_factor(o_l2, 0.1397, 5.0);
  return {direction && magnitude,
          fmt::format("median mse rifle {:.4g} vs l2 {:.4g} (ref 3.98e-3 vs 1.16e-2); median ot rifle {:.4g} vs "
                      "l2 {:.4g} (ref 0.1198 vs 0.1397); direction {}, magnitude {}; rifle better in {}/10 seeds",
                      m_rifle, m_l2, o_rifle, o_l2, direction ? "ok" : "wrong", magnitude ? "ok" : "off",
                      rifle_better)};
}

json synth_task_config(const std::string& strategy) {
  return {{"task", "classify"},
          {"seeds", {0, 1, 2, 3, 4}},
          {"dataset", {{"kind", "synth"}, {"num_classes", 20}, {"per_class", 50}, {"dim", 32}, {"separation", 3.0}}},
          {"model", {{"preset", "mlp"}, {"hidden", {64}}}},
          {"train", {{"epochs", 40}, {"pretrain_epochs", 20}}},
          {"policy", {{"strategy", strategy}, {"num_periods", 4}}}};
}

// 2. Paired seeds on the synthetic transfer task: RIFLE >= L2 and RIFLE >= RIFLE-B.
Outcome synthetic_ordering() {
  std::map<std::string, std::vector<double>> top1;
  for (const char* s : {"none", "rifle", "rifle_a", "rifle_b"}) {
    const ExperimentConfig cfg = parse_config(synth_task_config(s));
    for (auto seed : cfg.seeds) top1[s].push_back(run_classification_seed(cfg, seed).final_test.top1);
  }
  const double none = mean(top1["none"]), rifle = mean(top1["rifle"]);
  const double rifle_a = mean(top1["rifle_a"]), rifle_b = mean(top1["rifle_b"]);
  return {rifle >= none && rifle >= rifle_b,
          fmt::format("mean test top-1 over 5 seeds: rifle {:.4f}, l2 {:.4f}, rifle-a {:.4f}, rifle-b {:.4f}", rifle,
                      none, rifle_a, rifle_b)};
}

json cnn_probe_config(const std::string& strategy) {
  return {{"task", "classify"},
          {"seeds", {0}},
          {"dataset", {{"kind", "synth"}, {"num_classes", 20}, {"per_class", 50}, {"dim", 64}, {"separation", 3.0}}},
          {"model", {{"preset", "surrogate_cnn"}, {"input_shape", {1, 8, 8}}}},
          {"train", {{"epochs", 40}, {"pretrain_epochs", 20}, {"probe_layers", {"stage*.conv2.weight"}}}},
          {"policy", {{"strategy", strategy}, {"num_periods", 4}}}};
}

std::map<std::string, std::vector<double>> norms_by_layer(const std::vector<TelemetryRecord>& tel) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& rec : tel)
    for (const auto& [name, norm] : rec.grad_norms) out[name].push_back(norm);
  return out;
}

// 3. Gradient re-activation under RIFLE-A and decay under vanilla L2.
Outcome gradient_reactivation() {
  const ExperimentConfig a_cfg = parse_config(cnn_probe_config("rifle_a"));
  const auto a_run = run_classification_seed(a_cfg, a_cfg.seeds.front());
  const auto& tel = a_run.result.telemetry;
  const auto a_norms = norms_by_layer(tel);
  bool spikes = true;
  std::string worst;
  double worst_ratio = std::numeric_limits<double>::infinity();
  std::size_t reset_epochs = 0;
  for (const auto& rec : tel) {
    if (!rec.reset_event) continue;
    ++reset_epochs;
    if (rec.epoch == 1) continue;  // no preceding epoch
    for (const auto& [layer, series] : a_norms) {
      const double ratio = series[rec.epoch - 1] / series[rec.epoch - 2];
      if (ratio < worst_ratio) {
        worst_ratio = ratio;
        worst = fmt::format("{} at epoch {}", layer, rec.epoch);
      }
      spikes = spikes && ratio >= 2.0;
    }
  }
  spikes = spikes && reset_epochs == 4;

  const ExperimentConfig n_cfg = parse_config(cnn_probe_config("none"));
  const auto n_norms = norms_by_layer(run_classification_seed(n_cfg, n_cfg.seeds.front()).result.telemetry);
  const auto& deepest = n_norms.at("stage4.conv2.weight");
  const double decay = deepest.back() / deepest.front();
  return {spikes && decay < 0.1,
          fmt::format("rifle-a: {} resets, smallest reset/previous norm ratio {:.3g} ({}); l2: stage4 final/epoch-1 "
                      "norm ratio {:.3g}",
                      reset_epochs, worst_ratio, worst, decay)};
}

// 4. Finite-difference agreement on 20 (architecture, seed) pairs.
Outcome autodiff_correctness() {
  const auto archs = rifle::testing::gradient_architectures();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const std::size_t a = i % archs.size();
    auto c = rifle::testing::make_grad_case(archs[a], 7000 + i);
    std::optional<RegularizerKind> reg;
    if (i >= 14) {
      reg = RegularizerKind::l2sp(0.05, 0.01);
    } else if (i >= 7) {
      reg = RegularizerKind::l2(0.05);
    }
    if (reg) {
      c.params.freeze_start_point();
      Rng jitter(i);
      for (auto& e : c.params) e.value.add_scaled(gaussian_init(e.value.shape(), 0.0, 0.1, jitter), 1.0);
    }
    const ObjectiveTerm term = reg ? as_objective_term(*reg) : ObjectiveTerm{};
    Rng rng(i);
    const double err = check_gradients(c.model, c.params, c.batch, c.labels, 1e-5, rng, reg ? &term : nullptr);
    if (err > worst) {
      worst = err;
      where = fmt::format("architecture {} seed {}", a, 7000 + i);
    }
  }
  return {worst < 1e-5, fmt::format("max relative error {:.3g} over 20 pairs (worst: {})", worst, where)};
}

// 5. Cyclic LR quarter points and reset counts.
Outcome schedule_exactness() {
  bool ok = true;
  double lr_err = 0.0;
  for (std::size_t P : {4u, 100u, 124u, 1000u}) {
    SchedulePolicy p;
    p.strategy = Strategy::kRifle;
    p.period = P;
    p.total_iterations = 4 * P;
    p.eta_max = 0.01;
    const double expected[] = {0.01, 0.005, 0.0, 0.01};
    const std::size_t taus[] = {0, P / 4, P / 2, P};
    for (int k = 0; k < 4; ++k) lr_err = std::max(lr_err, std::abs(cyclic_lr(taus[k], p) - expected[k]));
  }
  ok = ok && lr_err <= 1e-15;

  // Reset count and backbone integrity over full training runs.
  const auto data = make_synth_classification(5, 20, 8, 3.0, 1);
  Model m;
  m.input_shape = {8};
  m.layers = {LayerSpec::dense(8, 16, "fc1"), LayerSpec::relu(), LayerSpec::dense(16, 5, "head"),
              LayerSpec::softmax_ce()};
  std::string counts;
  for (Strategy s : {Strategy::kRifle, Strategy::kRifleA}) {
    for (std::size_t k : {2u, 4u, 8u}) {
      TrainConfig cfg;
      cfg.epochs = 16;
      cfg.seed = k;
      cfg.policy.strategy = s;
      cfg.policy.num_periods = k;
      Rng r(k);
      const auto res = train(m, init_params(m, r), data.target_train, {}, cfg);
      const auto fired = std::count_if(res.telemetry.begin(), res.telemetry.end(),
                                       [](const TelemetryRecord& t) { return t.reset_event; });
      ok = ok && static_cast<std::size_t>(fired) == k;
      counts += fmt::format("{}{}", counts.empty() ? "" : ",", fired);
    }
  }
  bool backbone_intact = true;
  Rng rng(3);
  ParamStore p = init_params(m, rng);
  const ParamStore before = p;
  SchedulePolicy pol;
  pol.strategy = Strategy::kRifle;
  pol.period = 10;
  pol.num_periods = 4;
  pol.total_iterations = 40;
  std::size_t fired = 0;
  for (std::size_t t = 0; t < 40; ++t) fired += rifle_reset(p, t, pol, rng);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.entry(i).role == Role::kBackbone)
      backbone_intact = backbone_intact && bitwise_equal(p.entry(i).value, before.entry(i).value);
  }
  ok = ok && backbone_intact && fired == 4;
  return {ok, fmt::format("max lr error {:.3g}; resets per run (expected 2,4,8 twice) {}; standalone scan {} resets, "
                          "backbone {}",
                          lr_err, counts, fired, backbone_intact ? "bitwise unchanged" : "MODIFIED")};
}

double brute_force_ot(const Tensor& a, const Tensor& b) {
  const std::size_t h = a.dim(1), d = a.dim(0);
  std::vector<std::size_t> perm(h);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      double q = 0.0;
      for (std::size_t r = 0; r < d; ++r) q += (a.at(r, i) - b.at(r, perm[i])) * (a.at(r, i) - b.at(r, perm[i]));
      s += std::sqrt(q);
    }
    best = std::min(best, s / static_cast<double>(h));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor permute_columns(const Tensor& a, const std::vector<std::size_t>& perm) {
  Tensor out(a.shape());
  for (std::size_t r = 0; r < a.dim(0); ++r)
    for (std::size_t c = 0; c < a.dim(1); ++c) out.at(r, c) = a.at(r, perm[c]);
  return out;
}

// 6. Exact OT against brute force, and metric properties.
Outcome ot_equivalence() {
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.uniform_index(6);
    const std::size_t d = 1 + rng.uniform_index(8);
    const Tensor a = gaussian_init({d, h}, 0.0, 1.0, rng);
    const Tensor b = gaussian_init({d, h}, 0.0, 1.0, rng);
    const double got = ot_distance(a, b).total, ref = brute_force_ot(a, b);
    worst = std::max(worst, std::abs(got - ref) / std::max({std::abs(got), std::abs(ref), 1e-300}));
  }
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.uniform_index(6);
    const Tensor a = gaussian_init({5, h}, 0.0, 1.0, rng);
    const Tensor b = gaussian_init({5, h}, 0.0, 1.0, rng);
    const Tensor c = gaussian_init({5, h}, 0.0, 1.0, rng);
    std::vector<std::size_t> perm(h);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = h; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    const double ab = ot_distance(a, b).total;
    const bool symmetric = std::abs(ab - ot_distance(b, a).total) <= 1e-12 * std::max(ab, 1.0);
    const bool invariant =
        std::abs(ot_distance(permute_columns(a, perm), permute_columns(b, perm)).total - ab) <= 1e-12 * std::max(ab, 1.0);
    const bool triangle = ab <= ot_distance(a, c).total + ot_distance(c, b).total + 1e-9;
    const bool identity = ot_distance(a, permute_columns(a, perm)).total == 0.0;
    violations += !(symmetric && invariant && triangle && identity);
  }
  return {worst < 1e-12 && violations == 0,
          fmt::format("max relative error vs brute force {:.3g} over 100 instances (h <= 6); metric violations {}/100",
                      worst, violations)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = io::read_file(e.path());
  return out;
}

// 7. Byte-identical outputs across repeated invocations.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "rifle_lab_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  json train_doc = synth_task_config("rifle");
  train_doc["seeds"] = {0, 1};
  train_doc["train"]["epochs"] = 8;
  train_doc["train"]["pretrain_epochs"] = 4;
  train_doc["train"]["probe_layers"] = {"*.weight"};
  json oracle_doc = {{"task", "oracle"},
                     {"seeds", {0, 1}},
                     {"dataset", {{"kind", "oracle"}}},
                     {"train", {{"epochs", 8}, {"source_epochs", 20}}}};
  io::write_file_atomic(root / "train.json", train_doc.dump());
  io::write_file_atomic(root / "oracle.json", oracle_doc.dump());

  std::ostringstream sink;
  std::size_t files = 0;
  bool identical = true;
  std::string mismatch;
  using Cmd = int (*)(const fs::path&, const RunOptions&, std::ostream&, std::ostream&);
  for (auto [name, cmd] : {std::pair<const char*, Cmd>{"train", cmd_train}, {"oracle", cmd_oracle}}) {
    std::vector<std::map<std::string, std::string>> runs;
    for (std::size_t jobs : {1u, 1u, 2u}) {
      RunOptions opts;
      opts.out_dir = root / fmt::format("{}_{}", name, runs.size());
      opts.jobs = jobs;
      if (cmd(root / (std::string(name) + ".json"), opts, sink, sink) != 0) {
        return {false, fmt::format("{} command failed: {}", name, sink.str())};
      }
      runs.push_back(snapshot(*opts.out_dir));
    }
    files += runs[0].size();
    for (std::size_t r = 1; r < runs.size(); ++r) {
      if (runs[r] != runs[0]) {
        identical = false;
        mismatch = name;
      }
    }
  }
  fs::remove_all(root);
  return {identical, fmt::format("{} output files compared across 3 invocations each (jobs 1, 1, 2): {}", files,
                                 identical ? "byte-identical" : "DIFFER in " + mismatch)};
}

// 8. Baseline sanity: DisturbLabel p=0, deterministic mask-free EVAL, survival endpoints.
Outcome baseline_sanity() {
  Rng rng(8);
  Tensor labels({10000});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(rng.uniform_index(10));
  const bool disturb_noop = bitwise_equal(disturb_labels(labels, 10, 0.0, rng), labels);

  // EVAL through dropout / dropconnect equals the unperturbed network, bitwise and repeatably.
  Model plain;
  plain.input_shape = {12};
  plain.layers = {LayerSpec::dense(12, 16, "fc1"), LayerSpec::relu(), LayerSpec::dense(16, 4, "head"),
                  LayerSpec::softmax_ce()};
  plain.validate();
  const ParamStore params = init_params(plain, rng, 0.3);
  const Tensor x = gaussian_init({32, 12}, 0.0, 1.0, rng);
  Tensor y({32});
  for (std::size_t i = 0; i < 32; ++i) y[i] = static_cast<double>(i % 4);
  Rng untouched(0);
  const auto ref = forward(plain, params, x, y, Mode::kEval, untouched);
  bool eval_ok = true;
  for (Strategy s : {Strategy::kDropoutFc, Strategy::kDropConnect}) {
    SchedulePolicy pol;
    pol.strategy = s;
    pol.drop_p = 0.5;
    const Model m = instrument_model(plain, pol);
    Rng r1(1), r2(2);
    const auto a = forward(m, params, x, y, Mode::kEval, r1);
    const auto b = forward(m, params, x, y, Mode::kEval, r2);
    eval_ok = eval_ok && bitwise_equal(a.outputs, b.outputs) && bitwise_equal(a.outputs, ref.outputs) &&
              a.loss == ref.loss;
    for (const Tensor& mask : a.tape.masks())
      for (double v : mask.data()) eval_ok = eval_ok && v == 1.0;
    Rng fresh1(1);
    eval_ok = eval_ok && r1.next_u64() == fresh1.next_u64();  // EVAL drew nothing
  }

  SchedulePolicy sd;
  sd.strategy = Strategy::kStochasticDepth;
  const Model cnn = instrument_model(surrogate_cnn({1, 8, 8}, 20), sd);
  std::vector<double> survival;
  for (const auto& l : cnn.layers)
    if (l.kind == LayerKind::kResidualBlock) survival.push_back(*l.survival);
  const bool endpoints = survival.size() == 4 && survival.front() == 1.0 && survival.back() == 0.5;
  return {disturb_noop && eval_ok && endpoints,
          fmt::format("disturb p=0 {}; eval dropout/dropconnect {}; survival endpoints ({}, {})",
                      disturb_noop ? "no-op" : "CHANGED LABELS", eval_ok ? "deterministic and mask-free" : "FAILED",
                      survival.empty() ? -1.0 : survival.front(), survival.empty() ? -1.0 : survival.back())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"oracle experiment direction and magnitude", oracle_direction},
      {"synthetic transfer ordering", synthetic_ordering},
      {"gradient re-activation", gradient_reactivation},
      {"autodiff correctness", autodiff_correctness},
      {"schedule exactness", schedule_exactness},
      {"OT oracle equivalence", ot_equivalence},
      {"determinism", determinism},
      {"baseline sanity", baseline_sanity},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fmt::print("{} criterion {}: {} | {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail,
               secs);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
