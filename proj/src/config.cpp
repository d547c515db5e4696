#include "cyclic_em/config.hpp"

#include "cyclic_em/csv.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace cyclic_em {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::set<std::string> kMethods{"missnodags", "mean_impute_then_learn", "clean"};

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
      throw UsageError(origin + ":" + std::to_string(lineno) + ": key '" + key +
                       "' is not of the form section.key");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError(origin_ + ": missing key " + key);
  return it->second;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    return csv::parse_double(v);
  } catch (const std::exception&) {
    throw UsageError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw UsageError("config key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& item : csv::split(v, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.d < 1) throw UsageError("config key data.d: must be positive");
  if (data.n_per_intervention < 1) throw UsageError("config key data.n_per_intervention: must be positive");
  if (data.n_test_per_intervention < 0)
    throw UsageError("config key data.n_test_per_intervention: must be non-negative");
  if (!(data.sigma > 0.0)) throw UsageError("config key data.sigma: must be positive");
  if (!(data.lipschitz > 0.0)) throw UsageError("config key data.lipschitz: must be positive");
  if (missing.rates.empty()) throw UsageError("config key missing.rates: must be non-empty");
  for (double r : missing.rates)
    if (!(r >= 0.0 && r < 1.0)) throw UsageError("config key missing.rates: rates must lie in [0, 1)");
  if (methods.empty()) throw UsageError("config key methods.list: must be non-empty");
  if (sweep.seeds.empty()) throw UsageError("config key sweep.seeds: must be non-empty");
  if (sweep.jobs < 1) throw UsageError("config key sweep.jobs: must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw UsageError("config key train.holdout_fraction: must lie in [0, 1)");
  try {
    train.validate();
  } catch (const ParameterError& e) {
    throw UsageError(std::string("train section: ") + e.what());
  }
}

ExperimentConfig parse_experiment_config(const KeyValueConfig& kv) {
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"data.d", [&](auto& k, auto& v) { c.data.d = to_int(k, v); }},
      {"data.density", [&](auto& k, auto& v) { c.data.density = to_double(k, v); }},
      {"data.sem",
       [&](auto& k, auto& v) {
         try {
           c.data.sem = sem_kind_from_string(v);
         } catch (const ParameterError&) {
           throw UsageError("config key " + k + ": expected linear or tanh");
         }
       }},
      {"data.sigma", [&](auto& k, auto& v) { c.data.sigma = to_double(k, v); }},
      {"data.lipschitz", [&](auto& k, auto& v) { c.data.lipschitz = to_double(k, v); }},
      {"data.contractive", [&](auto& k, auto& v) { c.data.contractive = to_bool(k, v); }},
      {"data.n_per_intervention", [&](auto& k, auto& v) { c.data.n_per_intervention = to_int(k, v); }},
      {"data.n_test_per_intervention",
       [&](auto& k, auto& v) { c.data.n_test_per_intervention = to_int(k, v); }},
      {"data.weight_low", [&](auto& k, auto& v) { c.data.weight_low = to_double(k, v); }},
      {"data.weight_high", [&](auto& k, auto& v) { c.data.weight_high = to_double(k, v); }},
      {"missing.rates",
       [&](auto& k, auto& v) {
         c.missing.rates.clear();
         for (const auto& item : to_list(v)) c.missing.rates.push_back(to_double(k, item));
       }},
      {"missing.rate", [&](auto& k, auto& v) { c.missing.rates = {to_double(k, v)}; }},
      {"missing.seed", [&](auto& k, auto& v) { c.missing.seed = std::uint64_t(to_int(k, v)); }},
      {"train.epochs", [&](auto& k, auto& v) { c.train.epochs = int(to_int(k, v)); }},
      {"train.batch_size", [&](auto& k, auto& v) { c.train.batch_size = to_int(k, v); }},
      {"train.learning_rate", [&](auto& k, auto& v) { c.train.learning_rate = to_double(k, v); }},
      {"train.lambda", [&](auto& k, auto& v) { c.train.sparsity = to_double(k, v); }},
      {"train.lipschitz_budget", [&](auto& k, auto& v) { c.train.lipschitz_budget = to_double(k, v); }},
      {"train.logdet",
       [&](auto& k, auto& v) {
         if (v == "exact") c.train.logdet.mode = LogDetMode::exact;
         else if (v == "truncated") c.train.logdet.mode = LogDetMode::truncated;
         else if (v == "russian_roulette") c.train.logdet.mode = LogDetMode::russian_roulette;
         else throw UsageError("config key " + k + ": expected exact, truncated or russian_roulette");
       }},
      {"train.poisson_mean", [&](auto& k, auto& v) { c.train.logdet.poisson_mean = to_double(k, v); }},
      {"train.probes", [&](auto& k, auto& v) { c.train.logdet.probes = int(to_int(k, v)); }},
      {"train.truncation", [&](auto& k, auto& v) { c.train.logdet.truncation = int(to_int(k, v)); }},
      {"train.temperature", [&](auto& k, auto& v) { c.train.temperature = to_double(k, v); }},
      {"train.hard_mask", [&](auto& k, auto& v) { c.train.hard_mask = to_bool(k, v); }},
      {"train.seed", [&](auto& k, auto& v) { c.train.seed = std::uint64_t(to_int(k, v)); }},
      {"train.beta1", [&](auto& k, auto& v) { c.train.adam.beta1 = to_double(k, v); }},
      {"train.beta2", [&](auto& k, auto& v) { c.train.adam.beta2 = to_double(k, v); }},
      {"train.epsilon", [&](auto& k, auto& v) { c.train.adam.epsilon = to_double(k, v); }},
      {"train.model",
       [&](auto& k, auto& v) {
         if (v == "linear") c.train.model_kind = FunctionKindTag::linear;
         else if (v == "mlp") c.train.model_kind = FunctionKindTag::mlp;
         else throw UsageError("config key " + k + ": expected linear or mlp");
       }},
      {"train.hidden", [&](auto& k, auto& v) { c.train.hidden = to_int(k, v); }},
      {"train.threshold", [&](auto& k, auto& v) { c.train.threshold = to_double(k, v); }},
      {"train.holdout_fraction", [&](auto& k, auto& v) { c.holdout_fraction = to_double(k, v); }},
      {"methods.list",
       [&](auto& k, auto& v) {
         c.methods = to_list(v);
         for (const auto& m : c.methods)
           if (!kMethods.count(m)) throw UsageError("config key " + k + ": unknown method '" + m + "'");
       }},
      {"sweep.seeds",
       [&](auto& k, auto& v) {
         c.sweep.seeds.clear();
         for (const auto& item : to_list(v)) c.sweep.seeds.push_back(std::uint64_t(to_int(k, item)));
       }},
      {"sweep.num_seeds",
       [&](auto& k, auto& v) {
         const long long n = to_int(k, v);
         if (n < 1) throw UsageError("config key " + k + ": must be positive");
         c.sweep.seeds.clear();
         for (long long s = 0; s < n; ++s) c.sweep.seeds.push_back(std::uint64_t(s));
       }},
      {"sweep.jobs", [&](auto& k, auto& v) { c.sweep.jobs = int(to_int(k, v)); }},
      {"io.out_dir", [&](auto&, auto& v) { c.out_dir = v; }},
  };
  for (const auto& [key, value] : kv.values()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw UsageError("unknown config key " + key);
    it->second(key, value);
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(KeyValueConfig::load(path));
}

}  // namespace cyclic_em
