#pragma once

// INI run configuration.
//
//   [data]      input | series, region, from, to, partial_days, start_weekday
//   [model]     n_base, spikes, drop, trend, knot_spacing, knot_count, wavelet_order, wavelet_levels
//   [model.<name>]  same keys; one section per model for evidence comparisons
//   [run]       n_sweeps, burn_in, thin, chains, seed, scale_bound, target_acceptance, batch_size,
//               regime_fraction, adapt
//   [evidence]  rungs, exponent, n_sweeps, burn_in, thin, workers, batches, reference, models,
//               condition_on_support
//   [simulate]  T, model, start_weekday, level, seasonal_amplitude, weekly
//   [truth]     one key per scalar parameter (phi_1, sigma2_1, q_3, ...) and P = "row; row; ..."

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mrs/diagnostics.hpp"
#include "mrs/ingest.hpp"
#include "mrs/model.hpp"
#include "mrs/sampler.hpp"
#include "mrs/trend_basis.hpp"

namespace mrs {

struct ModelEntry {
  std::string name;
  ModelSpec spec;
  TrendOptions trend;
};

struct DataConfig {
  std::string input;    // half-hourly price file
  std::string series;   // daily series file (price or x column)
  IngestOptions ingest;
  std::optional<int> start_weekday;
};

struct EvidenceSettings {
  EvidenceConfig config;
  std::string reference;
  std::vector<std::string> models;
};

struct SimulateSettings {
  int T = 0;
  std::string model;
  int start_weekday = 0;
  double level = 0.0;
  double seasonal_amplitude = 0.0;   // level + a sin(2 pi t / 365.25)
  std::vector<double> weekly = std::vector<double>(7, 0.0);
  std::map<std::string, double> truth;
  Eigen::MatrixXd P;
};

struct AppConfig {
  DataConfig data;
  std::vector<ModelEntry> models;
  RunConfig run;
  EvidenceSettings evidence;
  std::optional<SimulateSettings> simulate;
  std::string text;                 // file contents, echoed into manifests
  std::filesystem::path base_dir;   // relative data paths resolve against this

  const ModelEntry& model(const std::string& name) const {
    if (name.empty()) {
      if (models.empty()) throw ConfigError("no [model] section");
      return models.front();
    }
    for (const auto& m : models)
      if (m.name == name) return m;
    std::string known;
    for (const auto& m : models) known += (known.empty() ? "" : ", ") + m.name;
    throw ConfigError("unknown model '" + name + "' (configured: " + known + ")");
  }

  std::string resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() ? path : (base_dir / p).string();
  }
};

namespace detail {

using ptree = boost::property_tree::ptree;

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

/// One INI section with typed, key-named lookups.
class Section {
 public:
  Section(std::string name, const ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool present() const { return tree_ != nullptr; }
  bool has(const std::string& key) const { return raw(key).has_value(); }

  void allow(std::initializer_list<const char*> keys) const {
    if (!tree_) return;
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& kv : *tree_)
      if (!ok.count(kv.first)) throw ConfigError("unknown key '" + kv.first + "' in [" + name_ + "]");
  }

  std::string str(const std::string& key, const std::string& expected = "string") const {
    const auto v = raw(key);
    if (!v) throw ConfigError("missing key '" + key + "' in [" + name_ + "] (expected " + expected + ")");
    return *v;
  }
  std::string str_or(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
  }

  long integer(const std::string& key) const { return to_integer(key, str(key, "integer")); }
  long integer(const std::string& key, long fallback) const {
    const auto v = raw(key);
    return v ? to_integer(key, *v) : fallback;
  }

  double real(const std::string& key) const { return to_real(key, str(key, "real number")); }
  double real(const std::string& key, double fallback) const {
    const auto v = raw(key);
    return v ? to_real(key, *v) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    const auto s = lower(*v);
    if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
    if (s == "false" || s == "no" || s == "0" || s == "off") return false;
    throw bad(key, *v, "boolean");
  }

  std::vector<double> reals(const std::string& key, const std::string& expected) const {
    std::vector<double> out;
    for (const auto& item : split_list(str(key, expected), ',')) out.push_back(to_real(key, item, expected));
    return out;
  }

  const std::string& name() const { return name_; }

 private:
  std::optional<std::string> raw(const std::string& key) const {
    if (!tree_) return std::nullopt;
    const auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  ConfigError bad(const std::string& key, const std::string& v, const std::string& expected) const {
    return ConfigError("key '" + key + "' in [" + name_ + "]: expected " + expected + ", got '" + v + "'");
  }

  long to_integer(const std::string& key, const std::string& v) const {
    long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw bad(key, v, "integer");
    return out;
  }

  double to_real(const std::string& key, const std::string& v, const std::string& expected = "real number") const {
    double out = 0.0;
    if (!parse_double(v, out)) throw bad(key, v, expected);
    return out;
  }

  std::string name_;
  const ptree* tree_;
};

inline ModelEntry parse_model(const Section& s, const std::string& name) {
  s.allow({"n_base", "spikes", "drop", "trend", "knot_spacing", "knot_count", "wavelet_order", "wavelet_levels"});
  ModelEntry m;
  m.name = name;
  m.spec.n_base = static_cast<int>(s.integer("n_base"));
  for (const auto& f : split_list(s.str_or("spikes", ""), ',')) m.spec.spikes.push_back(parse_spike_family(f));
  m.spec.has_drop = s.boolean("drop", false);
  m.trend.kind = parse_trend_kind(s.str_or("trend", "spline"));
  m.spec.trend = m.trend.kind;
  m.trend.knot_spacing = s.real("knot_spacing", m.trend.knot_spacing);
  if (s.has("knot_count")) m.trend.knot_count = static_cast<int>(s.integer("knot_count"));
  m.trend.wavelet_order = static_cast<int>(s.integer("wavelet_order", m.trend.wavelet_order));
  m.trend.wavelet_levels = static_cast<int>(s.integer("wavelet_levels", m.trend.wavelet_levels));
  m.spec.validate();
  return m;
}

inline Eigen::MatrixXd parse_matrix(const Section& s, const std::string& key) {
  const std::string expected = "matrix rows 'a b; c d'";
  std::vector<std::vector<double>> rows;
  for (const auto& row : split_list(s.str(key, expected), ';')) {
    std::vector<double> r;
    std::istringstream in(row);
    std::string tok;
    while (in >> tok) {
      double v = 0.0;
      if (!parse_double(tok, v)) throw ConfigError("key '" + key + "' in [" + s.name() + "]: expected " + expected);
      r.push_back(v);
    }
    rows.push_back(r);
  }
  Eigen::MatrixXd P(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size())
      throw ConfigError("key '" + key + "' in [" + s.name() + "]: expected a square matrix");
    for (std::size_t j = 0; j < rows.size(); ++j) P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return P;
}

}  // namespace detail

inline AppConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using detail::Section;
  detail::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto section = [&](const std::string& name) {
    const auto it = tree.find(name);
    return Section(name, it == tree.not_found() ? nullptr : &it->second);
  };
  const std::set<std::string> known{"data", "model", "run", "evidence", "simulate", "truth"};
  for (const auto& kv : tree) {
    if (kv.second.empty() && !kv.second.data().empty()) throw ConfigError("key '" + kv.first + "' outside any section");
    if (!known.count(kv.first) && kv.first.rfind("model.", 0) != 0)
      throw ConfigError("unknown section [" + kv.first + "]");
  }

  AppConfig cfg;
  cfg.text = text;
  cfg.base_dir = base_dir;

  const auto data = section("data");
  data.allow({"input", "series", "region", "from", "to", "partial_days", "start_weekday"});
  cfg.data.input = data.str_or("input", "");
  cfg.data.series = data.str_or("series", "");
  if (data.present() && cfg.data.input.empty() && cfg.data.series.empty())
    throw ConfigError("missing key 'input' in [data] (expected path string; or give 'series')");
  cfg.data.ingest.region = data.str_or("region", "");
  for (const char* key : {"from", "to"}) {
    if (!data.has(key)) continue;
    const auto d = parse_date(data.str(key));
    if (!d) throw ConfigError(std::string("key '") + key + "' in [data]: expected date YYYY-MM-DD, got '" + data.str(key) + "'");
    (std::string(key) == "from" ? cfg.data.ingest.from : cfg.data.ingest.to) = d;
  }
  cfg.data.ingest.policy = parse_partial_days(data.str_or("partial_days", "strict"));
  if (data.has("start_weekday")) cfg.data.start_weekday = static_cast<int>(data.integer("start_weekday"));

  for (const auto& kv : tree) {
    if (kv.first == "model") cfg.models.push_back(detail::parse_model(Section("model", &kv.second), "model"));
    if (kv.first.rfind("model.", 0) == 0)
      cfg.models.push_back(detail::parse_model(Section(kv.first, &kv.second), kv.first.substr(6)));
  }
  if (cfg.models.empty()) throw ConfigError("missing section [model] (expected keys n_base, spikes, drop, trend)");

  const auto run = section("run");
  run.allow({"n_sweeps", "burn_in", "thin", "chains", "seed", "scale_bound", "target_acceptance", "batch_size",
             "regime_fraction", "adapt"});
  auto& rc = cfg.run;
  rc.n_sweeps = run.integer("n_sweeps", rc.n_sweeps);
  rc.burn_in = run.integer("burn_in", rc.burn_in);
  rc.thin = run.integer("thin", rc.thin);
  rc.n_chains = static_cast<int>(run.integer("chains", rc.n_chains));
  const long seed = run.integer("seed", static_cast<long>(rc.seed));
  if (seed < 0) throw ConfigError("key 'seed' in [run]: expected non-negative integer");
  rc.seed = static_cast<std::uint64_t>(seed);
  rc.scale_bound = run.real("scale_bound", rc.scale_bound);
  rc.target_acceptance = run.real("target_acceptance", rc.target_acceptance);
  rc.batch_size = static_cast<int>(run.integer("batch_size", rc.batch_size));
  rc.regime_fraction = run.real("regime_fraction", rc.regime_fraction);
  rc.adaptation_on = run.boolean("adapt", true);
  rc.validate();

  const auto ev = section("evidence");
  ev.allow({"rungs", "exponent", "n_sweeps", "burn_in", "thin", "workers", "batches", "reference", "models",
            "condition_on_support"});
  auto& ec = cfg.evidence.config;
  ec.rungs = static_cast<int>(ev.integer("rungs", ec.rungs));
  ec.exponent = ev.real("exponent", ec.exponent);
  ec.n_sweeps = ev.integer("n_sweeps", ec.n_sweeps);
  ec.burn_in = ev.integer("burn_in", ec.burn_in);
  ec.thin = ev.integer("thin", ec.thin);
  ec.workers = static_cast<int>(ev.integer("workers", ec.workers));
  ec.batches = static_cast<int>(ev.integer("batches", ec.batches));
  ec.condition_on_support = ev.boolean("condition_on_support", ec.condition_on_support);
  ec.seed = rc.seed;
  cfg.evidence.reference = ev.str_or("reference", "");
  cfg.evidence.models = detail::split_list(ev.str_or("models", ""), ',');
  ec.validate();

  const auto sim = section("simulate");
  if (sim.present()) {
    sim.allow({"T", "model", "start_weekday", "level", "seasonal_amplitude", "weekly"});
    SimulateSettings s;
    s.T = static_cast<int>(sim.integer("T"));
    if (s.T < 2) throw ConfigError("key 'T' in [simulate]: expected integer >= 2");
    s.model = sim.str_or("model", "");
    s.start_weekday = static_cast<int>(sim.integer("start_weekday", 0));
    s.level = sim.real("level", 0.0);
    s.seasonal_amplitude = sim.real("seasonal_amplitude", 0.0);
    if (sim.has("weekly")) {
      s.weekly = sim.reals("weekly", "seven comma-separated reals");
      if (s.weekly.size() != 7) throw ConfigError("key 'weekly' in [simulate]: expected seven comma-separated reals");
    }
    const auto truth = section("truth");
    const auto& spec = cfg.model(s.model).spec;
    std::set<std::string> names{"P"};
    for (const auto& slot : scalar_layout(spec, 0)) {
      s.truth[slot.name] = truth.real(slot.name);
      names.insert(slot.name);
    }
    if (truth.present()) {
      for (const auto& kv : tree.find("truth")->second)
        if (!names.count(kv.first)) throw ConfigError("unknown key '" + kv.first + "' in [truth] for this model");
    }
    s.P = detail::parse_matrix(truth, "P");
    if (s.P.rows() != spec.regime_count())
      throw ConfigError("key 'P' in [truth]: expected " + std::to_string(spec.regime_count()) + " rows");
    cfg.simulate = s;
  }
  return cfg;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path());
}

/// The series a config's [data] section points at.
inline PriceSeries load_series(const AppConfig& cfg) {
  if (!cfg.data.input.empty()) {
    auto s = ingest_file(cfg.resolve(cfg.data.input), cfg.data.ingest);
    if (cfg.data.start_weekday) s.start_weekday = *cfg.data.start_weekday;
    return s;
  }
  if (!cfg.data.series.empty()) return read_series_file(cfg.resolve(cfg.data.series), cfg.data.start_weekday);
  throw ConfigError("missing section [data] (expected key 'input' or 'series')");
}

/// Seed precedence: explicit flag, then MRS_SEED, then the config file.
inline std::uint64_t effective_seed(const AppConfig& cfg, std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MRS_SEED")) {
    std::uint64_t v = 0;
    const std::string s(env);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError("MRS_SEED must be a non-negative integer");
    return v;
  }
  return cfg.run.seed;
}

/// The truth parameters of a [simulate]/[truth] configuration.
inline ParameterSet truth_parameters(const SimulateSettings& s, const ModelSpec& spec) {
  ParameterSet th = shaped_parameters(spec, 0);
  for (const auto& slot : scalar_layout(spec, 0)) slot_ref(th, slot, spec) = s.truth.at(slot.name);
  th.P = s.P;
  for (Eigen::Index i = 0; i < th.P.rows(); ++i) {
    if ((th.P.row(i).array() < 0.0).any() || std::abs(th.P.row(i).sum() - 1.0) > 1e-9)
      throw ConfigError("key 'P' in [truth]: row " + std::to_string(i + 1) + " is not a probability vector");
  }
  return th;
}

}  // namespace mrs
