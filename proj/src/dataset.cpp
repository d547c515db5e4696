#include "cyclic_em/dataset.hpp"

#include "cyclic_em/csv.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace cyclic_em {

namespace fs = std::filesystem;

std::vector<Index> InterventionalDataset::rows_of_regime(Index regime) const {
  std::vector<Index> out;
  for (std::size_t r = 0; r < regime_of_row.size(); ++r)
    if (regime_of_row[r] == regime) out.push_back(static_cast<Index>(r));
  return out;
}

double InterventionalDataset::missing_fraction() const {
  if (observed.size() == 0) return 0.0;
  return 1.0 - observed.cast<double>().mean();
}

Index InterventionalDataset::regime_index(const InterventionExperiment& experiment) {
  for (std::size_t k = 0; k < regimes.size(); ++k)
    if (regimes[k] == experiment) return static_cast<Index>(k);
  regimes.push_back(experiment);
  return static_cast<Index>(regimes.size()) - 1;
}

InterventionalDataset InterventionalDataset::select_rows(const std::vector<Index>& rows) const {
  InterventionalDataset out;
  out.values.resize(static_cast<Index>(rows.size()), d());
  out.observed.resize(static_cast<Index>(rows.size()), d());
  out.regimes = regimes;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.values.row(static_cast<Index>(k)) = values.row(rows[k]);
    out.observed.row(static_cast<Index>(k)) = observed.row(rows[k]);
    out.regime_of_row.push_back(regime_of_row[static_cast<std::size_t>(rows[k])]);
  }
  return out;
}

InterventionalDataset InterventionalDataset::unmasked() const {
  InterventionalDataset out = *this;
  out.observed.setOnes();
  return out;
}

void InterventionalDataset::validate() const {
  if (observed.rows() != values.rows() || observed.cols() != values.cols())
    throw ValidationError("mask shape does not match samples");
  if (static_cast<Index>(regime_of_row.size()) != rows())
    throw ValidationError("regime count does not match sample count");
  for (const auto& e : regimes)
    if (e.d() != d()) throw ValidationError("regime dimension does not match samples");
  for (Index r = 0; r < rows(); ++r) {
    const Index k = regime_of_row[static_cast<std::size_t>(r)];
    if (k < 0 || k >= static_cast<Index>(regimes.size()))
      throw ValidationError("row " + std::to_string(r) + " references an unknown regime");
    for (Index i = 0; i < d(); ++i) {
      const std::uint8_t m = observed(r, i);
      if (m > 1) throw ValidationError("mask entries must be 0/1");
      if (m == 1 && !std::isfinite(values(r, i)))
        throw ValidationError("observed entry (" + std::to_string(r) + ", " + std::to_string(i) +
                              ") is not finite");
      if (m == 0 && experiment(r).is_intervened(i))
        throw ValidationError("intervened entry (" + std::to_string(r) + ", " +
                              std::to_string(i) + ") is marked missing");
    }
  }
}

InterventionalDataset simulate_dataset(const GroundTruthSEM& sem,
                                       const std::vector<PlannedExperiment>& plan,
                                       std::uint64_t seed) {
  const Index d = sem.d();
  Index total = 0;
  for (const auto& p : plan) total += p.count;
  InterventionalDataset data;
  data.values.resize(total, d);
  data.observed = ObservedMask::Ones(total, d);
  Index row = 0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const auto& p = plan[k];
    const Index regime = data.regime_index(p.experiment);
    data.values.middleRows(row, p.count) =
        simulate(sem, p.experiment, p.count, mix64(seed) ^ mix64(k + 1));
    for (Index r = 0; r < p.count; ++r) data.regime_of_row.push_back(regime);
    row += p.count;
  }
  return data;
}

namespace {

std::vector<std::string> column_header(Index d) {
  std::vector<std::string> h;
  for (Index i = 0; i < d; ++i) h.push_back("x_" + std::to_string(i));
  return h;
}

std::string format_targets(const InterventionExperiment& e) {
  std::string out;
  for (std::size_t k = 0; k < e.intervened().size(); ++k) {
    if (k) out += ';';
    out += std::to_string(e.intervened()[k]);
  }
  return out;
}

}  // namespace

void write_manifest(const fs::path& dir, const InterventionalDataset& data,
                    const DatasetMeta& meta) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create " + dir.string() + ": " + ec.message());

  csv::Table samples, mask, regimes, meta_table;
  samples.header = mask.header = column_header(data.d());
  for (Index r = 0; r < data.rows(); ++r) {
    std::vector<std::string> s, m;
    for (Index i = 0; i < data.d(); ++i) {
      const bool obs = data.observed(r, i) != 0;
      s.push_back(csv::format_double(obs ? data.values(r, i) : std::nan("")));
      m.push_back(obs ? "1" : "0");
    }
    samples.rows.push_back(std::move(s));
    mask.rows.push_back(std::move(m));
    regimes.rows.push_back({format_targets(data.experiment(r))});
  }
  regimes.header = {"targets"};
  meta_table.header = {"key", "value"};
  meta_table.rows = {{"d", std::to_string(meta.d)},
                     {"sem_kind", meta.sem_kind},
                     {"sigma", csv::format_double(meta.sigma)},
                     {"seed", std::to_string(meta.seed)}};
  csv::write(dir / "samples.csv", samples);
  csv::write(dir / "mask.csv", mask);
  csv::write(dir / "regimes.csv", regimes);
  csv::write(dir / "meta.csv", meta_table);
}

Manifest read_manifest(const fs::path& dir) {
  for (const char* name : {"samples.csv", "mask.csv", "regimes.csv", "meta.csv"})
    if (!fs::exists(dir / name))
      throw ValidationError("manifest " + dir.string() + " is missing " + name);

  Manifest out;
  const csv::Table meta = csv::read(dir / "meta.csv", true);
  std::map<std::string, std::string> kv;
  for (const auto& row : meta.rows)
    if (row.size() >= 2) kv[row[0]] = row[1];
  if (!kv.count("d")) throw ValidationError("meta.csv lacks key d");
  out.meta.d = std::stol(kv["d"]);
  if (kv.count("sem_kind")) out.meta.sem_kind = kv["sem_kind"];
  if (kv.count("sigma")) out.meta.sigma = csv::parse_double(kv["sigma"]);
  if (kv.count("seed")) out.meta.seed = std::stoull(kv["seed"]);

  auto& data = out.data;
  const csv::Table samples_table = csv::read(dir / "samples.csv", true);
  const Index d = static_cast<Index>(samples_table.header.size());
  if (d != out.meta.d)
    throw ValidationError("meta.csv says d=" + std::to_string(out.meta.d) + " but samples.csv has " +
                          std::to_string(d) + " columns");
  data.values = csv::read_matrix(dir / "samples.csv", true);
  const Matrix mask = csv::read_matrix(dir / "mask.csv", true);
  if (mask.rows() != data.values.rows() || mask.cols() != d)
    throw ValidationError("mask.csv shape does not match samples.csv");
  data.observed = mask.cast<std::uint8_t>();

  const csv::Table regimes = csv::read(dir / "regimes.csv", true);
  if (regimes.header != std::vector<std::string>{"targets"})
    throw ValidationError("regimes.csv: expected header 'targets'");
  if (static_cast<Index>(regimes.rows.size()) != data.values.rows())
    throw ValidationError("regimes.csv row count does not match samples.csv");
  for (const auto& row : regimes.rows) {
    std::vector<Index> targets;
    if (!row.empty() && !row[0].empty())
      for (const auto& t : csv::split(row[0], ';')) targets.push_back(std::stol(t));
    for (Index t : targets)
      if (t < 0 || t >= d) throw ValidationError("regimes.csv: target out of range");
    data.regime_of_row.push_back(data.regime_index(InterventionExperiment(d, std::move(targets))));
  }
  data.validate();
  return out;
}

}  // namespace cyclic_em
