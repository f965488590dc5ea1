#include <CLI11.hpp>

#include <iostream>

#include "rifle/errors.hpp"
#include "rifle/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"rifle_lab: fine-tuning experiments with periodic head re-initialization"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::size_t jobs = 1;

  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Experiment JSON file")->required();
    sub->add_option("--out", out, "Output directory (overrides output_dir)");
    sub->add_option("--jobs", jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);
    return sub;
  };
  auto* train = add("train", "Fine-tune on a classification task");
  auto* oracle = add("oracle", "Run the oracle transfer experiment");
  auto* probe = add("grad-probe", "Record per-epoch gradient norms only");
  auto* make_data = add("make-data", "Write the synthetic source/target CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  rifle::RunOptions opts;
  if (!out.empty()) opts.out_dir = out;
  opts.jobs = jobs;
  try {
    opts.seed_offset = rifle::seed_offset_from_env();
  } catch (const rifle::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  if (*train) return rifle::cmd_train(config, opts, std::cout, std::cerr);
  if (*oracle) return rifle::cmd_oracle(config, opts, std::cout, std::cerr);
  if (*probe) return rifle::cmd_grad_probe(config, opts, std::cout, std::cerr);
  if (*make_data) return rifle::cmd_make_data(config, opts, std::cout, std::cerr);
  return 2;
}
