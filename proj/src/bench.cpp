#include "cyclic_em/bench.hpp"

#include "cyclic_em/csv.hpp"
#include "cyclic_em/imputer.hpp"
#include "cyclic_em/missingness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <thread>

namespace cyclic_em {

namespace fs = std::filesystem;

SyntheticProblem make_problem(const DataSection& data, std::uint64_t seed) {
  SyntheticProblem p;
  Rng graph_rng = make_stream(seed, 1);
  Rng weight_rng = make_stream(seed, 2);
  p.truth = data.d >= 2 ? sample_erdos_renyi(data.d, data.density, graph_rng)
                        : GraphStructure(data.d);
  p.sem.kind = data.sem;
  p.sem.weights = assign_weights_and_project(p.truth, data.weight_low, data.weight_high,
                                             data.lipschitz, weight_rng);
  p.sem.noise_std = Vector::Constant(data.d, data.sigma);
  p.sem.lipschitz = data.lipschitz;
  p.sem.contractive = data.contractive;
  p.complete = simulate_dataset(p.sem, make_single_node_plan(data.d, data.n_per_intervention),
                                mix64(seed) ^ 3);
  if (data.n_test_per_intervention > 0) {
    p.heldout = simulate_dataset(
        p.sem, make_single_node_plan(data.d, data.n_test_per_intervention), mix64(seed) ^ 4);
  } else {
    p.heldout.values.resize(0, data.d);
    p.heldout.observed.resize(0, data.d);
  }
  return p;
}

std::uint64_t mask_seed(std::uint64_t base, std::uint64_t seed, double rate) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &rate, sizeof(bits));
  return mix64(base) ^ mix64(seed + 0x5eedULL) ^ mix64(bits);
}

MethodRun run_method(const std::string& method, const MethodInputs& inputs,
                     const TrainConfig& config) {
  if (!inputs.masked) throw ParameterError("run_method: no training data");
  const auto start = std::chrono::steady_clock::now();
  MethodRun run;
  TrainConfig cfg = config;
  if (method == "missnodags") {
    cfg.impute = true;
    run.fit = fit(*inputs.masked, cfg, inputs.truth);
  } else if (method == "mean_impute_then_learn") {
    cfg.impute = false;
    run.fit = fit(mean_impute(*inputs.masked), cfg, inputs.truth);
  } else if (method == "clean") {
    const InterventionalDataset* data = inputs.complete;
    if (!data && inputs.masked->complete()) data = inputs.masked;
    if (!data) throw ValidationError("method clean needs the complete (unmasked) data");
    if (!data->complete()) throw ValidationError("method clean was given masked data");
    run.fit = fit(*data, cfg, inputs.truth);
  } else {
    throw UsageError("unknown method '" + method + "'");
  }
  if (inputs.heldout && inputs.heldout->rows() > 0)
    run.fit.metrics.test_nll = evaluate_nll(run.fit.model, *inputs.heldout, cfg.seed);
  run.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

void write_run_artifacts(const fs::path& dir, const std::string& method, const MethodRun& run,
                         const TrainConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create " + dir.string() + ": " + ec.message());
  const auto& model = run.fit.model;
  const auto& structure = run.fit.metrics.structure;
  write_metrics_csv(dir / "metrics.csv", run.fit.metrics);
  write_checkpoint(dir / "checkpoint.csv", model);
  const Matrix weights = effective_adjacency(model).cwiseProduct(structure.as_real());
  write_adjacency_csv(dir / "adjacency_est.csv", weights);
  write_edges_csv(dir / "edges_est.csv", structure, weights);

  csv::Table meta;
  meta.header = {"key", "value"};
  const double final_shd =
      run.fit.metrics.epochs.empty() ? std::nan("") : run.fit.metrics.epochs.back().shd;
  meta.rows = {{"method", method},
               {"model", kind_name(model.function)},
               {"d", std::to_string(model.d())},
               {"epochs", std::to_string(config.epochs)},
               {"seed", std::to_string(config.seed)},
               {"edges", std::to_string(structure.edge_count())},
               {"shd", csv::format_double(final_shd)},
               {"test_nll", csv::format_double(run.fit.metrics.test_nll)},
               {"wall_time_s", csv::format_double(run.wall_time_s)}};
  csv::write(dir / "run_meta.csv", meta);
}

void cmd_generate(const fs::path& config_path, std::uint64_t seed, const fs::path& out_dir) {
  const ExperimentConfig config = load_experiment_config(config_path);
  const SyntheticProblem problem = make_problem(config.data, seed);
  const double rate = config.missing.rates.front();
  const InterventionalDataset masked =
      apply_mcar(problem.complete, {rate, mask_seed(config.missing.seed, seed, rate)});

  DatasetMeta meta{config.data.d, to_string(config.data.sem), config.data.sigma, seed};
  write_manifest(out_dir, masked, meta);
  write_adjacency_csv(out_dir / "adjacency.csv", problem.sem.weights.weights);
  write_edges_csv(out_dir / "edges.csv", problem.truth, problem.sem.weights.weights);
  write_manifest(out_dir / "complete", problem.complete, meta);
  if (problem.heldout.rows() > 0) write_manifest(out_dir / "heldout", problem.heldout, meta);
}

namespace {

// Last ceil(fraction * count) rows of every regime.
std::pair<InterventionalDataset, InterventionalDataset> split_holdout(
    const InterventionalDataset& data, double fraction) {
  std::vector<Index> train_rows, test_rows;
  for (Index k = 0; k < Index(data.regimes.size()); ++k) {
    const auto rows = data.rows_of_regime(k);
    const auto n_test = std::size_t(std::ceil(fraction * double(rows.size())));
    for (std::size_t r = 0; r < rows.size(); ++r)
      (r + n_test < rows.size() ? train_rows : test_rows).push_back(rows[r]);
  }
  return {data.select_rows(train_rows), data.select_rows(test_rows)};
}

}  // namespace

void cmd_train(const fs::path& data_dir, const fs::path& config_path, const std::string& method,
               const fs::path& out_dir) {
  const ExperimentConfig config = load_experiment_config(config_path);
  Manifest manifest = read_manifest(data_dir);
  const Index d = manifest.data.d();

  std::optional<GraphStructure> truth;
  if (fs::exists(data_dir / "adjacency.csv")) {
    WeightedAdjacency adj{read_adjacency_csv(data_dir / "adjacency.csv")};
    if (adj.d() != d)
      throw ValidationError("adjacency.csv has d=" + std::to_string(adj.d()) +
                            " but the manifest has d=" + std::to_string(d));
    truth = adj.structure();
  }
  std::optional<Manifest> complete, heldout;
  if (fs::exists(data_dir / "complete" / "samples.csv")) {
    complete = read_manifest(data_dir / "complete");
    if (complete->data.d() != d) throw ValidationError("complete/ manifest dimension mismatch");
  }
  InterventionalDataset train_data = manifest.data;
  InterventionalDataset heldout_data;
  if (fs::exists(data_dir / "heldout" / "samples.csv")) {
    heldout = read_manifest(data_dir / "heldout");
    if (heldout->data.d() != d) throw ValidationError("heldout/ manifest dimension mismatch");
    heldout_data = heldout->data;
  } else if (config.holdout_fraction > 0.0) {
    auto [tr, te] = split_holdout(manifest.data, config.holdout_fraction);
    train_data = std::move(tr);
    heldout_data = std::move(te);
    if (complete) complete->data = split_holdout(complete->data, config.holdout_fraction).first;
  }

  MethodInputs inputs;
  inputs.masked = &train_data;
  inputs.complete = complete ? &complete->data : nullptr;
  inputs.heldout = heldout_data.rows() > 0 ? &heldout_data : nullptr;
  inputs.truth = truth;
  const MethodRun run = run_method(method, inputs, config.train);
  write_run_artifacts(out_dir, method, run, config.train);
}

namespace {

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::string rate_label(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", rate);
  return buf;
}

}  // namespace

std::vector<SummaryRow> run_sweep(const ExperimentConfig& config, int jobs,
                                  const std::optional<fs::path>& runs_dir) {
  const auto& seeds = config.sweep.seeds;
  const auto& rates = config.missing.rates;
  const auto& methods = config.methods;

  std::vector<SyntheticProblem> problems;
  for (auto s : seeds) problems.push_back(make_problem(config.data, s));
  // masked[seed][rate]
  std::vector<std::vector<InterventionalDataset>> masked(seeds.size());
  for (std::size_t si = 0; si < seeds.size(); ++si)
    for (double r : rates)
      masked[si].push_back(
          apply_mcar(problems[si].complete, {r, mask_seed(config.missing.seed, seeds[si], r)}));

  struct Cell {
    std::size_t rate, method, seed;
  };
  // `clean` does not depend on the rate: it runs once per seed and is copied.
  std::vector<Cell> cells;
  for (std::size_t ri = 0; ri < rates.size(); ++ri)
    for (std::size_t mi = 0; mi < methods.size(); ++mi)
      for (std::size_t si = 0; si < seeds.size(); ++si)
        if (methods[mi] != "clean" || ri == 0) cells.push_back({ri, mi, si});

  auto grid_index = [&](std::size_t ri, std::size_t mi, std::size_t si) {
    return (ri * methods.size() + mi) * seeds.size() + si;
  };
  std::vector<SummaryRow> rows(rates.size() * methods.size() * seeds.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      const Cell cell = cells[c];
      SummaryRow row;
      row.missing_rate = rates[cell.rate];
      row.method = methods[cell.method];
      row.seed = seeds[cell.seed];
      try {
        TrainConfig train = config.train;
        train.seed = config.train.seed ^ mix64(row.seed);
        MethodInputs inputs;
        inputs.masked = &masked[cell.seed][cell.rate];
        inputs.complete = &problems[cell.seed].complete;
        inputs.heldout = &problems[cell.seed].heldout;
        inputs.truth = problems[cell.seed].truth;
        const MethodRun run = run_method(row.method, inputs, train);
        row.shd = double(shd(run.fit.metrics.structure, problems[cell.seed].truth));
        row.nll_test = run.fit.metrics.test_nll;
        row.wall_time_s = run.wall_time_s;
        if (runs_dir)
          write_run_artifacts(*runs_dir / ("rate_" + rate_label(row.missing_rate)) / row.method /
                                  ("seed_" + std::to_string(row.seed)),
                              row.method, run, train);
      } catch (const std::exception& e) {
        row.status = sanitize(std::string("error: ") + e.what());
      }
      rows[grid_index(cell.rate, cell.method, cell.seed)] = row;
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, int(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    if (methods[mi] != "clean") continue;
    for (std::size_t ri = 1; ri < rates.size(); ++ri)
      for (std::size_t si = 0; si < seeds.size(); ++si) {
        SummaryRow row = rows[grid_index(0, mi, si)];
        row.missing_rate = rates[ri];
        rows[grid_index(ri, mi, si)] = row;
      }
  }
  return rows;
}

namespace {

std::pair<double, double> mean_stderr(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  if (v.size() < 2) return {mean, std::nan("")};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / double(v.size() - 1));
  return {mean, sd / std::sqrt(double(v.size()))};
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<SummaryRow>& rows) {
  struct Acc {
    std::vector<double> shd, nll, wall;
  };
  std::map<std::pair<double, std::string>, Acc> groups;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    auto& g = groups[{r.missing_rate, r.method}];
    g.shd.push_back(r.shd);
    if (std::isfinite(r.nll_test)) g.nll.push_back(r.nll_test);
    g.wall.push_back(r.wall_time_s);
  }
  std::vector<AggregateRow> out;
  for (const auto& [key, acc] : groups) {
    AggregateRow a;
    a.missing_rate = key.first;
    a.method = key.second;
    a.n = Index(acc.shd.size());
    std::tie(a.shd_mean, a.shd_stderr) = mean_stderr(acc.shd);
    std::tie(a.nll_mean, a.nll_stderr) = mean_stderr(acc.nll);
    a.wall_time_mean = mean_stderr(acc.wall).first;
    out.push_back(a);
  }
  return out;
}

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  csv::Table t;
  t.header = {"missing_rate", "method", "seed", "shd", "nll_test", "wall_time_s", "status"};
  for (const auto& r : rows)
    t.rows.push_back({csv::format_double(r.missing_rate), r.method, std::to_string(r.seed),
                      csv::format_double(r.shd), csv::format_double(r.nll_test),
                      csv::format_double(r.wall_time_s), r.status});
  csv::write(path, t);
}

std::vector<SummaryRow> read_summary_csv(const fs::path& path) {
  const csv::Table t = csv::read(path, true);
  if (t.header.size() < 6 || t.header[0] != "missing_rate" || t.header[1] != "method")
    throw ValidationError(path.string() + " is not a summary file");
  std::vector<SummaryRow> out;
  for (const auto& f : t.rows) {
    if (f.size() < 6) throw ValidationError(path.string() + ": short row");
    SummaryRow r;
    r.missing_rate = csv::parse_double(f[0]);
    r.method = f[1];
    r.seed = std::stoull(f[2]);
    r.shd = csv::parse_double(f[3]);
    r.nll_test = csv::parse_double(f[4]);
    r.wall_time_s = csv::parse_double(f[5]);
    r.status = f.size() > 6 ? f[6] : "ok";
    out.push_back(r);
  }
  return out;
}

void write_aggregate_csv(const fs::path& path, const std::vector<AggregateRow>& rows) {
  csv::Table t;
  t.header = {"missing_rate", "method",     "n",         "shd_mean",
              "shd_stderr",   "nll_mean",   "nll_stderr", "wall_time_mean"};
  for (const auto& a : rows)
    t.rows.push_back({csv::format_double(a.missing_rate), a.method, std::to_string(a.n),
                      csv::format_double(a.shd_mean), csv::format_double(a.shd_stderr),
                      csv::format_double(a.nll_mean), csv::format_double(a.nll_stderr),
                      csv::format_double(a.wall_time_mean)});
  csv::write(path, t);
}

void cmd_sweep(const fs::path& config_path, const fs::path& out_dir, std::optional<int> jobs) {
  const ExperimentConfig config = load_experiment_config(config_path);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw UsageError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto rows = run_sweep(config, jobs.value_or(config.sweep.jobs), out_dir / "runs");
  write_summary_csv(out_dir / "summary.csv", rows);
  write_aggregate_csv(out_dir / "summary_agg.csv", aggregate(rows));
}

void cmd_report(const fs::path& runs_dir, const fs::path& out_path) {
  if (!fs::is_directory(runs_dir)) throw UsageError(runs_dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir))
    if (entry.is_regular_file() && entry.path().filename() == "summary.csv")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<SummaryRow> rows;
  for (const auto& f : files) {
    auto part = read_summary_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw UsageError("no runs found under " + runs_dir.string());
  write_aggregate_csv(out_path, aggregate(rows));
}

}  // namespace cyclic_em
