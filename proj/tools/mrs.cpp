// mrs: command-line front end for regime-switching price models.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mrs/config.hpp"
#include "mrs/diagnostics.hpp"
#include "mrs/ingest.hpp"
#include "mrs/sampler.hpp"
#include "mrs/synthetic.hpp"
#include "mrs/trend_basis.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mrs;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Options {
  std::string config, out, run_dir, model, trend, partial_days, reference;
  std::string input, region, from, to;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
};

/// Every file of a run directory goes through one writer, which also records it for the manifest.
class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw UsageError("cannot write " + (dir_ / name).string());
    out << content;
    files_.push_back(name);
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

AppConfig apply_overrides(AppConfig cfg, const Options& o) {
  if (!o.partial_days.empty()) cfg.data.ingest.policy = parse_partial_days(o.partial_days);
  if (!o.trend.empty()) {
    const auto kind = parse_trend_kind(o.trend);
    for (auto& m : cfg.models) {
      m.trend.kind = kind;
      m.spec.trend = kind;
    }
  }
  if (o.chains) cfg.run.n_chains = *o.chains;
  cfg.run.seed = effective_seed(cfg, o.seed);
  cfg.evidence.config.seed = cfg.run.seed;
  cfg.run.validate();
  return cfg;
}

json overrides_json(const Options& o) {
  json j = json::object();
  if (!o.partial_days.empty()) j["partial_days"] = o.partial_days;
  if (!o.trend.empty()) j["trend"] = o.trend;
  if (o.chains) j["chains"] = *o.chains;
  return j;
}

/// Data, design and priors for one model.
struct Problem {
  PriceSeries series;
  ModelEntry model;
  DesignMatrix design;
  PriorConfig prior;
};

Problem prepare(const AppConfig& cfg, const PriceSeries& series, const std::string& model) {
  Problem p;
  p.series = series;
  p.model = cfg.model(model);
  p.design = build_design(p.model.trend, static_cast<int>(series.size()), series.start_weekday);
  p.prior = PriorConfig::from_data(series.values);
  return p;
}

json base_manifest(const std::string& command, const AppConfig& cfg, const Options& o, const PriceSeries& s) {
  json j;
  j["tool"] = "mrs";
  j["version"] = kVersion;
  j["command"] = command;
  j["seed"] = cfg.run.seed;
  j["config_path"] = o.config.empty() ? "" : fs::absolute(o.config).string();
  j["config_dir"] = cfg.base_dir.empty() ? fs::current_path().string() : fs::absolute(cfg.base_dir).string();
  j["config"] = cfg.text;
  j["overrides"] = overrides_json(o);
  j["data"] = {{"source", !cfg.data.input.empty() ? cfg.resolve(cfg.data.input) : cfg.resolve(cfg.data.series)},
               {"observations", s.size()},
               {"first_date", s.dates.empty() ? "" : format_date(s.dates.front())},
               {"last_date", s.dates.empty() ? "" : format_date(s.dates.back())},
               {"start_weekday", s.start_weekday},
               {"partial_days", to_string(cfg.data.ingest.policy)},
               {"fingerprint", hex(s.fingerprint)}};
  return j;
}

void finish_manifest(RunWriter& w, json j, std::chrono::steady_clock::time_point t0) {
  j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  j["files"] = w.files();
  w.write("manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Sample and regime files

std::string samples_csv(const PosteriorStore& store, const ChainResult& c) {
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "sweep");
  for (const auto& n : store.names) fmt::format_to(std::back_inserter(b), ",{}", n);
  fmt::format_to(std::back_inserter(b), ",log_post,log_lik,log_support\n");
  for (const auto& d : c.draws) {
    fmt::format_to(std::back_inserter(b), "{}", d.sweep);
    for (double v : d.values) fmt::format_to(std::back_inserter(b), ",{}", v);
    fmt::format_to(std::back_inserter(b), ",{},{},{}\n", d.log_post, d.log_lik, d.log_support);
  }
  return fmt::to_string(b);
}

/// One line per retained draw: the regime path as run-length pairs id:length.
std::string regimes_rle(const PosteriorStore& store, const ChainResult& c) {
  const auto regimes = store.spec.regimes();
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "sweep,path\n");
  for (std::size_t i = 0; i < c.regimes.size(); ++i) {
    fmt::format_to(std::back_inserter(b), "{},", c.draws[i].sweep);
    const auto& s = c.regimes[i].states;
    for (std::size_t t = 0; t < s.size();) {
      std::size_t u = t;
      while (u < s.size() && s[u] == s[t]) ++u;
      fmt::format_to(std::back_inserter(b), "{}{}:{}", t ? " " : "", regimes[s[t]].id, u - t);
      t = u;
    }
    fmt::format_to(std::back_inserter(b), "\n");
  }
  return fmt::to_string(b);
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

ChainResult read_chain(const fs::path& samples, const fs::path& regimes_file, const ModelSpec& spec,
                       std::size_t n_values, std::size_t T) {
  ChainResult c;
  const auto rows = read_lines(samples);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = detail::split_csv(rows[i]);
    if (f.size() != n_values + 4) throw UsageError(fmt::format("{} line {}: wrong field count", samples.string(), i + 1));
    Draw d;
    d.sweep = std::stol(f[0]);
    for (std::size_t k = 0; k < n_values; ++k) d.values.push_back(std::stod(f[k + 1]));
    d.log_post = std::stod(f[n_values + 1]);
    d.log_lik = std::stod(f[n_values + 2]);
    d.log_support = std::stod(f[n_values + 3]);
    c.draws.push_back(std::move(d));
  }
  const auto regimes = spec.regimes();
  const auto lines = read_lines(regimes_file);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto comma = lines[i].find(',');
    std::istringstream in(lines[i].substr(comma + 1));
    RegimeSequence R;
    std::string tok;
    while (in >> tok) {
      const auto colon = tok.find(':');
      const int id = std::stoi(tok.substr(0, colon));
      const long len = std::stol(tok.substr(colon + 1));
      int index = -1;
      for (std::size_t r = 0; r < regimes.size(); ++r)
        if (regimes[r].id == id) index = static_cast<int>(r);
      if (index < 0 || len < 1) throw UsageError(fmt::format("{} line {}: bad run '{}'", regimes_file.string(), i + 1, tok));
      R.states.insert(R.states.end(), static_cast<std::size_t>(len), static_cast<std::uint8_t>(index));
    }
    if (R.size() != T) throw UsageError(fmt::format("{} line {}: path length {} != {}", regimes_file.string(), i + 1, R.size(), T));
    c.regimes.push_back(std::move(R));
  }
  if (c.regimes.size() != c.draws.size()) throw UsageError("sample and regime files disagree on the number of draws");
  return c;
}

// ---------------------------------------------------------------------------
// Reports

std::string summary_csv(const std::vector<ParameterSummary>& s) {
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "parameter,mean,median,lower_2.5,upper_97.5,sd\n");
  for (const auto& p : s)
    fmt::format_to(std::back_inserter(b), "{},{},{},{},{},{}\n", p.name, p.mean, p.median, p.lo, p.hi, p.sd);
  return fmt::to_string(b);
}

void print_summary(const std::vector<ParameterSummary>& s) {
  fmt::print("{:<12} {:>12} {:>12} {:>26}\n", "parameter", "mean", "median", "95% interval");
  for (const auto& p : s) {
    if (p.name.rfind("gamma_", 0) == 0) continue;
    fmt::print("{:<12} {:>12.4f} {:>12.4f}   [{:>10.4f}, {:>10.4f}]\n", p.name, p.mean, p.median, p.lo, p.hi);
  }
}

std::string label_of(const PriceSeries& s, std::size_t t) {
  return s.dates.empty() ? std::to_string(t + 1) : format_date(s.dates[t]);
}

void write_classification(RunWriter& w, const PosteriorStore& store, const PriceSeries& series) {
  const auto c = classify(store);
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "t,date,price,regime");
  for (const auto& r : c.regimes) fmt::format_to(std::back_inserter(b), ",freq_{}", r.id);
  fmt::format_to(std::back_inserter(b), "\n");
  for (Eigen::Index t = 0; t < c.freq.rows(); ++t) {
    const auto ts = static_cast<std::size_t>(t);
    fmt::format_to(std::back_inserter(b), "{},{},{},{}", t + 1, label_of(series, ts), series.values[ts], c.label_id(ts));
    for (Eigen::Index j = 0; j < c.freq.cols(); ++j) fmt::format_to(std::back_inserter(b), ",{}", c.freq(t, j));
    fmt::format_to(std::back_inserter(b), "\n");
  }
  w.write("classification.csv", fmt::to_string(b));
}

/// Residuals and QQ data at the representative draw.
json write_ppc(RunWriter& w, const PosteriorStore& store, const Problem& p) {
  const auto ref = representative_draw(store);
  const auto& chain = store.chains[ref.chain];
  const auto theta = unflatten(chain.draws[ref.draw].values, store.spec, store.n_gamma);
  const auto res = ppc_residuals(p.series.values, theta, chain.regimes[ref.draw], store.spec, p.design);
  json summary;
  summary["chain"] = ref.chain;
  summary["sweep"] = chain.draws[ref.draw].sweep;
  fmt::memory_buffer ks;
  fmt::format_to(std::back_inserter(ks), "regime,n,ks_statistic,p_value\n");
  for (std::size_t r = 0; r < res.regimes.size(); ++r) {
    const int id = res.regimes[r].id;
    fmt::memory_buffer b;
    fmt::format_to(std::back_inserter(b), "t,date,residual,lagged_abs_price\n");
    for (const auto& pt : res.by_regime[r]) {
      const auto ts = static_cast<std::size_t>(pt.t);
      fmt::format_to(std::back_inserter(b), "{},{},{},", pt.t + 1, label_of(p.series, ts), pt.r);
      if (std::isfinite(pt.lagged)) fmt::format_to(std::back_inserter(b), "{}", pt.lagged);
      fmt::format_to(std::back_inserter(b), "\n");
    }
    w.write(fmt::format("residuals_{}.csv", id), fmt::to_string(b));
    const auto v = res.values(r);
    fmt::memory_buffer q;
    fmt::format_to(std::back_inserter(q), "theoretical,sample\n");
    for (const auto& pt : qq_points(v)) fmt::format_to(std::back_inserter(q), "{},{}\n", pt.theoretical, pt.sample);
    w.write(fmt::format("qq_{}.csv", id), fmt::to_string(q));
    if (!v.empty()) {
      const double d = ks_statistic_normal(v);
      fmt::format_to(std::back_inserter(ks), "{},{},{},{}\n", id, v.size(), d, kolmogorov_pvalue(d, v.size()));
    } else {
      fmt::format_to(std::back_inserter(ks), "{},0,,\n", id);
    }
  }
  w.write("ppc_summary.csv", fmt::to_string(ks));
  return summary;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_ingest(const Options& o) {
  if (o.input.empty()) throw UsageError("ingest needs --input");
  if (o.out.empty()) throw UsageError("ingest needs --out");
  IngestOptions opt;
  opt.region = o.region;
  if (!o.from.empty()) {
    opt.from = parse_date(o.from);
    if (!opt.from) throw UsageError("--from: expected date YYYY-MM-DD");
  }
  if (!o.to.empty()) {
    opt.to = parse_date(o.to);
    if (!opt.to) throw UsageError("--to: expected date YYYY-MM-DD");
  }
  if (!o.partial_days.empty()) opt.policy = parse_partial_days(o.partial_days);
  const auto s = ingest_file(o.input, opt);
  RunWriter w(o.out);
  std::ostringstream csv;
  write_series(csv, s);
  w.write("series.csv", csv.str());
  json j;
  j["tool"] = "mrs";
  j["version"] = kVersion;
  j["command"] = "ingest";
  j["input"] = fs::absolute(o.input).string();
  j["region"] = o.region;
  j["partial_days"] = to_string(opt.policy);
  j["observations"] = s.size();
  j["first_date"] = format_date(s.dates.front());
  j["last_date"] = format_date(s.dates.back());
  j["fingerprint"] = hex(s.fingerprint);
  w.write("manifest.json", j.dump(2) + "\n");
  fmt::print("{} days {} .. {} fingerprint {}\n", s.size(), format_date(s.dates.front()), format_date(s.dates.back()),
             hex(s.fingerprint));
  return 0;
}

int cmd_fit(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = apply_overrides(load_config(o.config), o);
  const auto p = prepare(cfg, load_series(cfg), o.model);
  RunWriter w(o.out);
  fmt::print(stderr, "fitting {} ({}) to {} observations with {} chains\n", p.model.name, p.model.spec.describe(),
             p.series.size(), cfg.run.n_chains);
  const auto store = run_chains(cfg.run, p.model.spec, p.series.values, p.design, p.prior);
  for (std::size_t k = 0; k < store.chains.size(); ++k) {
    w.write(fmt::format("samples_chain{}.csv", k + 1), samples_csv(store, store.chains[k]));
    w.write(fmt::format("regimes_chain{}.txt", k + 1), regimes_rle(store, store.chains[k]));
  }
  const auto summary = summarize(store);
  w.write("summary.csv", summary_csv(summary));
  write_classification(w, store, p.series);
  const auto ppc = write_ppc(w, store, p);

  json m = base_manifest("fit", cfg, o, p.series);
  m["model"] = {{"name", p.model.name}, {"description", p.model.spec.describe()}, {"design_columns", p.design.columns()}};
  m["run"] = {{"n_sweeps", cfg.run.n_sweeps}, {"burn_in", cfg.run.burn_in}, {"thin", cfg.run.thin},
              {"chains", cfg.run.n_chains}};
  json chains = json::array();
  for (const auto& c : store.chains) {
    json blocks = json::object();
    for (const auto& b : c.blocks) blocks[b.name] = b.acceptance();
    chains.push_back({{"draws", c.draws.size()},
                      {"regime_acceptance", c.regime_acceptance},
                      {"cache_error", c.final_cache_error},
                      {"block_acceptance", blocks}});
  }
  m["chains"] = chains;
  m["ppc_draw"] = ppc;
  finish_manifest(w, m, t0);
  print_summary(summary);
  return 0;
}

/// Rebuilds the posterior store of a fit directory from its manifest and the original input.
std::pair<PosteriorStore, Problem> load_run(const fs::path& dir, const Options& o) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw UsageError("no manifest.json in " + dir.string());
  const auto m = json::parse(in);
  if (m.value("command", "") != "fit") throw UsageError(dir.string() + " is not a fit directory");
  Options replay;
  const auto& ov = m["overrides"];
  if (ov.contains("partial_days")) replay.partial_days = ov["partial_days"];
  if (ov.contains("trend")) replay.trend = ov["trend"];
  if (ov.contains("chains")) replay.chains = ov["chains"].get<int>();
  replay.seed = m["seed"].get<std::uint64_t>();
  const auto cfg = apply_overrides(parse_config(m["config"].get<std::string>(), m["config_dir"].get<std::string>()), replay);
  const auto p = prepare(cfg, load_series(cfg), m["model"]["name"].get<std::string>());
  if (hex(p.series.fingerprint) != m["data"]["fingerprint"])
    throw UsageError("input data changed since the fit (fingerprint " + hex(p.series.fingerprint) + ", manifest " +
                     m["data"]["fingerprint"].get<std::string>() + ")");
  (void)o;
  PosteriorStore store;
  store.spec = p.model.spec;
  store.n_gamma = static_cast<int>(p.design.columns());
  store.names = flat_names(store.spec, store.n_gamma);
  for (int k = 1; fs::exists(dir / fmt::format("samples_chain{}.csv", k)); ++k) {
    store.chains.push_back(read_chain(dir / fmt::format("samples_chain{}.csv", k),
                                      dir / fmt::format("regimes_chain{}.txt", k), store.spec, store.names.size(),
                                      p.series.size()));
  }
  if (store.chains.empty()) throw UsageError("no sample files in " + dir.string());
  return {std::move(store), p};
}

int cmd_ppc(const Options& o) {
  if (o.run_dir.empty()) throw UsageError("ppc needs --run");
  const auto [store, p] = load_run(o.run_dir, o);
  RunWriter w(o.out.empty() ? o.run_dir : o.out);
  const auto ppc = write_ppc(w, store, p);
  fmt::print("residuals at chain {} sweep {}\n", ppc["chain"].get<std::size_t>() + 1, ppc["sweep"].get<long>());
  std::cout << read_lines(w.dir() / "ppc_summary.csv").size() - 1 << " regimes written to " << w.dir().string() << "\n";
  return 0;
}

int cmd_classify(const Options& o) {
  if (o.run_dir.empty()) throw UsageError("classify needs --run");
  const auto [store, p] = load_run(o.run_dir, o);
  RunWriter w(o.out.empty() ? o.run_dir : o.out);
  write_classification(w, store, p.series);
  const auto c = classify(store);
  for (std::size_t r = 0; r < c.regimes.size(); ++r) {
    const auto n = std::count(c.label.begin(), c.label.end(), static_cast<int>(r));
    fmt::print("regime {}: {} days\n", c.regimes[r].id, n);
  }
  return 0;
}

int cmd_evidence(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = apply_overrides(load_config(o.config), o);
  std::vector<std::string> names;
  if (!o.model.empty()) {
    names = detail::split_list(o.model, ',');
  } else if (!cfg.evidence.models.empty()) {
    names = cfg.evidence.models;
  } else {
    for (const auto& m : cfg.models) names.push_back(m.name);
  }
  if (names.size() < 2) throw UsageError("evidence needs at least two models (got " + std::to_string(names.size()) + ")");
  std::string reference = !o.reference.empty() ? o.reference : cfg.evidence.reference;
  if (reference.empty()) reference = names.front();
  if (std::find(names.begin(), names.end(), reference) == names.end())
    throw UsageError("reference model '" + reference + "' is not among the compared models");

  const auto series = load_series(cfg);
  RunWriter w(o.out);
  std::vector<EvidenceEstimate> est;
  for (const auto& name : names) {
    const auto p = prepare(cfg, series, name);
    fmt::print(stderr, "evidence for {} ({})\n", name, p.model.spec.describe());
    auto e = estimate_evidence(p.model.spec, p.series.values, p.design, p.prior, cfg.evidence.config);
    e.model = name;
    est.push_back(std::move(e));
  }
  const auto& ref = est[static_cast<std::size_t>(std::find(names.begin(), names.end(), reference) - names.begin())];

  fmt::memory_buffer table, csv, rungs;
  fmt::format_to(std::back_inserter(table), "data fingerprint {}, reference model {}\n\n", hex(series.fingerprint), reference);
  fmt::format_to(std::back_inserter(table), "{:<16} {:>14} {:>9} {:>14} {:>9}  {}\n", "model", "log_evidence", "se",
                 "log_BF_vs_ref", "se", "description");
  fmt::format_to(std::back_inserter(csv), "model,description,log_evidence,se,log_bf_vs_reference,se_bf\n");
  fmt::format_to(std::back_inserter(rungs), "model,rung,beta_from,beta_to,log_ratio,se,draws,mean_log_lik\n");
  for (std::size_t i = 0; i < est.size(); ++i) {
    const auto bf = bayes_factor(est[i], ref);
    const auto desc = cfg.model(names[i]).spec.describe();
    fmt::format_to(std::back_inserter(table), "{:<16} {:>14.3f} {:>9.3f} {:>14.3f} {:>9.3f}  {}\n", names[i],
                   est[i].log_evidence, est[i].se, bf.log_bf, bf.se, desc);
    fmt::format_to(std::back_inserter(csv), "{},\"{}\",{},{},{},{}\n", names[i], desc, est[i].log_evidence, est[i].se,
                   bf.log_bf, bf.se);
    for (std::size_t k = 0; k < est[i].rungs.size(); ++k) {
      const auto& r = est[i].rungs[k];
      fmt::format_to(std::back_inserter(rungs), "{},{},{},{},{},{},{},{}\n", names[i], k, r.beta_from, r.beta_to,
                     r.log_ratio, r.se, r.draws, r.mean_loglik);
    }
  }
  w.write("evidence.txt", fmt::to_string(table));
  w.write("evidence.csv", fmt::to_string(csv));
  w.write("evidence_rungs.csv", fmt::to_string(rungs));
  json m = base_manifest("evidence", cfg, o, series);
  m["models"] = names;
  m["reference"] = reference;
  const auto& ec = cfg.evidence.config;
  m["evidence"] = {{"rungs", ec.rungs}, {"exponent", ec.exponent}, {"n_sweeps", ec.n_sweeps}, {"burn_in", ec.burn_in},
                   {"thin", ec.thin}, {"condition_on_support", ec.condition_on_support}};
  finish_manifest(w, m, t0);
  fmt::print("{}", fmt::to_string(table));
  return 0;
}

int cmd_simulate(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = apply_overrides(load_config(o.config), o);
  if (!cfg.simulate) throw ConfigError("missing section [simulate] (expected key T)");
  const auto& s = *cfg.simulate;
  const auto& entry = cfg.model(o.model.empty() ? s.model : o.model);
  const auto theta = truth_parameters(s, entry.spec);
  std::vector<double> trend(static_cast<std::size_t>(s.T));
  for (int t = 0; t < s.T; ++t) {
    trend[static_cast<std::size_t>(t)] = s.level + s.seasonal_amplitude * std::sin(2.0 * M_PI * t / 365.25) +
                                         s.weekly[static_cast<std::size_t>((s.start_weekday + t) % 7)];
  }
  const auto sim = simulate(entry.spec, theta, trend, cfg.run.seed);
  const auto regimes = entry.spec.regimes();
  RunWriter w(o.out);
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "t,weekday,x,regime,trend\n");
  for (int t = 0; t < s.T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    fmt::format_to(std::back_inserter(b), "{},{},{},{},{}\n", t + 1, (s.start_weekday + t) % 7, sim.x[ts],
                   regimes[static_cast<std::size_t>(sim.R[ts])].id, trend[ts]);
  }
  w.write("simulated.csv", fmt::to_string(b));
  fmt::memory_buffer tb;
  fmt::format_to(std::back_inserter(tb), "parameter,value\n");
  const auto names = flat_names(entry.spec, 0);
  const auto values = flatten(theta, entry.spec);
  for (std::size_t i = 0; i < names.size(); ++i) fmt::format_to(std::back_inserter(tb), "{},{}\n", names[i], values[i]);
  w.write("truth.csv", fmt::to_string(tb));
  PriceSeries ps;
  ps.values = sim.x;
  ps.start_weekday = s.start_weekday;
  ps.fingerprint = data_fingerprint(sim.x);
  json m = base_manifest("simulate", cfg, o, ps);
  m["data"]["source"] = "simulated";
  m["model"] = {{"name", entry.name}, {"description", entry.spec.describe()}};
  finish_manifest(w, m, t0);
  fmt::print("{} observations of {} written to {}\n", s.T, entry.spec.describe(), (w.dir() / "simulated.csv").string());
  return 0;
}

int cmd_dump_design(const Options& o) {
  const auto cfg = apply_overrides(load_config(o.config), o);
  const auto p = prepare(cfg, load_series(cfg), o.model);
  RunWriter w(o.out);
  const auto& d = p.design;
  std::vector<int> obs_index(static_cast<std::size_t>(d.Z.rows()), 0);
  for (std::size_t t = 0; t < d.obs_rows.size(); ++t) obs_index[static_cast<std::size_t>(d.obs_rows[t])] = static_cast<int>(t) + 1;
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "row,observation");
  for (int k = 0; k < d.n_weekly; ++k) fmt::format_to(std::back_inserter(b), ",weekday_{}", k + 1);
  for (int k = 0; k < d.n_longterm; ++k) fmt::format_to(std::back_inserter(b), ",trend_{}", k + 1);
  fmt::format_to(std::back_inserter(b), "\n");
  for (Eigen::Index r = 0; r < d.Z.rows(); ++r) {
    fmt::format_to(std::back_inserter(b), "{},{}", r + 1, obs_index[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < d.Z.cols(); ++c) fmt::format_to(std::back_inserter(b), ",{}", d.Z(r, c));
    fmt::format_to(std::back_inserter(b), "\n");
  }
  w.write("design.csv", fmt::to_string(b));
  fmt::print("{} x {} design ({} trend, {} weekly and {} long-term columns)\n", d.Z.rows(), d.Z.cols(),
             to_string(p.model.trend.kind), d.n_weekly, d.n_longterm);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian regime-switching models for daily electricity prices"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  const auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "INI run configuration");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "random seed (overrides MRS_SEED and [run] seed)");
    sub->add_option("--chains", o.chains, "number of chains")->check(CLI::PositiveNumber);
    sub->add_option("--partial-days", o.partial_days, "incomplete-day policy")
        ->check(CLI::IsMember({"strict", "mean-available"}));
    sub->add_option("--model", o.model, "model section name (comma list for evidence)");
    sub->add_option("--trend", o.trend, "override the trend basis")->check(CLI::IsMember({"spline", "wavelet", "weekly"}));
  };

  auto* ingest_cmd = app.add_subcommand("ingest", "aggregate half-hourly prices into daily averages");
  ingest_cmd->add_option("--input", o.input, "half-hourly CSV")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--region", o.region, "region code, e.g. SA1");
  ingest_cmd->add_option("--from", o.from, "first day, YYYY-MM-DD");
  ingest_cmd->add_option("--to", o.to, "last day, YYYY-MM-DD");
  ingest_cmd->add_option("--out", o.out, "output directory")->required();
  ingest_cmd->add_option("--partial-days", o.partial_days, "incomplete-day policy")
      ->check(CLI::IsMember({"strict", "mean-available"}));

  auto* fit_cmd = app.add_subcommand("fit", "run the MCMC sampler");
  common(fit_cmd, true);
  auto* evidence_cmd = app.add_subcommand("evidence", "stepping-stone log-evidence and Bayes factors");
  common(evidence_cmd, true);
  evidence_cmd->add_option("--reference", o.reference, "reference model for Bayes factors");
  auto* simulate_cmd = app.add_subcommand("simulate", "simulate from a configured model");
  common(simulate_cmd, true);
  auto* design_cmd = app.add_subcommand("dump-design", "write the trend design matrix");
  common(design_cmd, true);

  auto* ppc_cmd = app.add_subcommand("ppc", "posterior predictive residuals of a fit directory");
  ppc_cmd->add_option("--run", o.run_dir, "fit output directory")->required()->check(CLI::ExistingDirectory);
  ppc_cmd->add_option("--out", o.out, "output directory (default: the run directory)");
  auto* classify_cmd = app.add_subcommand("classify", "regime classification of a fit directory");
  classify_cmd->add_option("--run", o.run_dir, "fit output directory")->required()->check(CLI::ExistingDirectory);
  classify_cmd->add_option("--out", o.out, "output directory (default: the run directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) return cmd_ingest(o);
    if (*fit_cmd) return cmd_fit(o);
    if (*evidence_cmd) return cmd_evidence(o);
    if (*simulate_cmd) return cmd_simulate(o);
    if (*design_cmd) return cmd_dump_design(o);
    if (*ppc_cmd) return cmd_ppc(o);
    if (*classify_cmd) return cmd_classify(o);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    fmt::print(stderr, "usage error: {}\n", e.what());
    return 2;
  } catch (const IngestionError& e) {
    fmt::print(stderr, "ingestion error: {}\n", e.what());
    return 3;
  } catch (const InitializationError& e) {
    fmt::print(stderr, "sampler error: {}\n", e.what());
    return 4;
  } catch (const EvidenceError& e) {
    fmt::print(stderr, "evidence error: {}\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
