#include "cyclic_em/bench.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

// Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.
int main(int argc, char** argv) {
  using namespace cyclic_em;
  CLI::App app{"Cyclic causal discovery from incomplete interventional data"};
  app.require_subcommand(1);

  std::string config, out, data, method = "missnodags", runs;
  std::uint64_t seed = 0;
  int jobs = 0;

  auto* generate = app.add_subcommand("generate", "Simulate a dataset manifest");
  generate->add_option("--config", config, "Experiment config")->required();
  generate->add_option("--seed", seed, "Random seed")->required();
  generate->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one method on a manifest");
  train->add_option("--data", data, "Manifest directory")->required();
  train->add_option("--config", config, "Experiment config")->required();
  train->add_option("--method", method, "missnodags | mean_impute_then_learn | clean");
  train->add_option("--out", out, "Run directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Run the (rate, method, seed) grid");
  sweep->add_option("--config", config, "Experiment config")->required();
  sweep->add_option("--out", out, "Output directory")->required();
  sweep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Aggregate sweep summaries");
  report->add_option("--runs", runs, "Directory holding summary.csv files")->required();
  report->add_option("--out", out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*generate) {
      cmd_generate(config, seed, out);
    } else if (*train) {
      cmd_train(data, config, method, out);
    } else if (*sweep) {
      cmd_sweep(config, out, jobs > 0 ? std::optional<int>(jobs) : std::nullopt);
    } else if (*report) {
      cmd_report(runs, out);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
