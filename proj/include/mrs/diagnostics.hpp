#pragma once

// Posterior predictive residuals, regime classification, posterior summaries
// and stepping-stone marginal likelihood estimates.

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mrs/errors.hpp"
#include "mrs/model.hpp"
#include "mrs/sampler.hpp"
#include "mrs/trend_basis.hpp"

namespace mrs {

// ---------------------------------------------------------------------------
// Residuals

struct ResidualPoint {
  long t = 0;
  double r = 0.0;
  double lagged = std::numeric_limits<double>::quiet_NaN();  // |x_{t-k}| for base regimes
};

struct ResidualSet {
  std::vector<RegimeInfo> regimes;
  std::vector<std::vector<ResidualPoint>> by_regime;  // internal regime order

  std::vector<double> values(std::size_t regime) const {
    std::vector<double> out;
    for (const auto& p : by_regime[regime]) out.push_back(p.r);
    return out;
  }
  std::vector<double> pooled() const {
    std::vector<double> out;
    for (const auto& v : by_regime)
      for (const auto& p : v) out.push_back(p.r);
    return out;
  }
};

inline double standard_normal_quantile(double p) {
  static const boost::math::normal_distribution<double> n01;
  return boost::math::quantile(n01, p);
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Normal score of a gamma variate, taken from whichever tail keeps precision.
inline double gamma_normal_score(double y, double shape, double scale) {
  const double lower = boost::math::gamma_p(shape, y / scale);
  if (lower <= 0.5) return standard_normal_quantile(lower);
  return -standard_normal_quantile(boost::math::gamma_q(shape, y / scale));
}

/// Standardised residuals of every observation under one draw (theta, R).
inline ResidualSet ppc_residuals(std::span<const double> x, const ParameterSet& theta, const RegimeSequence& R,
                                 const ModelSpec& spec, std::span<const double> trend) {
  if (R.size() != x.size() || trend.size() != x.size()) throw UsageError("ppc_residuals: length mismatch");
  ResidualSet out;
  out.regimes = spec.regimes();
  out.by_regime.resize(out.regimes.size());
  const auto gaps = R.gap_index(spec);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const auto& reg = out.regimes[R[t]];
    ResidualPoint pt;
    pt.t = static_cast<long>(t);
    if (reg.kind == RegimeKind::base) {
      const int k = gaps[t];
      if (k == 0) continue;
      const auto& b = theta.base[static_cast<std::size_t>(reg.slot)];
      const std::size_t u = t - static_cast<std::size_t>(k);
      const double mean = trend[t] + std::pow(b.phi, k) * (x[u] - trend[u]);
      pt.r = (x[t] - mean) / std::sqrt(b.sigma2 * ar1_gap_variance_factor(b.phi, k));
      pt.lagged = std::abs(x[u]);
    } else {
      const auto& p = theta.shifted(reg);
      const double y = reg.kind == RegimeKind::drop ? p.q - x[t] : x[t] - p.q;
      if (!(y > 0.0)) throw EvaluationError("residual requested at a zero-density point (t=" + std::to_string(t) + ")");
      if (reg.kind == RegimeKind::spike && reg.family == SpikeFamily::gamma) {
        pt.r = gamma_normal_score(y, p.mu, p.sigma2);
      } else {
        pt.r = (std::log(y) - p.mu) / std::sqrt(p.sigma2);
      }
    }
    out.by_regime[R[t]].push_back(pt);
  }
  return out;
}

inline ResidualSet ppc_residuals(std::span<const double> x, const ParameterSet& theta, const RegimeSequence& R,
                                 const ModelSpec& spec, const DesignMatrix& design) {
  const auto trend = observed_trend(design, theta.gamma);
  return ppc_residuals(x, theta, R, spec, trend);
}

struct QQPoint {
  double theoretical = 0.0;
  double sample = 0.0;
};

/// Sorted residuals against N(0,1) quantiles at plotting positions (i - 0.5)/n.
inline std::vector<QQPoint> qq_points(std::vector<double> r) {
  std::sort(r.begin(), r.end());
  std::vector<QQPoint> out(r.size());
  const double n = static_cast<double>(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    out[i] = {standard_normal_quantile((static_cast<double>(i) + 0.5) / n), r[i]};
  }
  return out;
}

/// Kolmogorov-Smirnov distance between a sample and N(0,1).
inline double ks_statistic_normal(std::vector<double> r) {
  if (r.empty()) throw UsageError("ks_statistic_normal: empty sample");
  std::sort(r.begin(), r.end());
  const double n = static_cast<double>(r.size());
  double d = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double F = standard_normal_cdf(r[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic Kolmogorov tail probability with Stephens' finite-n correction.
inline double kolmogorov_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Classification and summaries

struct Classification {
  std::vector<RegimeInfo> regimes;
  Eigen::MatrixXd freq;      // T x N posterior frequencies
  std::vector<int> label;    // internal index of the most frequent regime, ties to the lower id

  int label_id(std::size_t t) const { return regimes[static_cast<std::size_t>(label[t])].id; }
};

inline Classification classify(const PosteriorStore& store) {
  std::size_t n = 0;
  std::size_t T = 0;
  for (const auto& c : store.chains) {
    n += c.regimes.size();
    if (!c.regimes.empty()) T = c.regimes.front().size();
  }
  if (n == 0) throw UsageError("classify: the posterior store holds no regime draws");
  Classification out;
  out.regimes = store.spec.regimes();
  const int N = store.spec.regime_count();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), N);
  for (const auto& c : store.chains) {
    for (const auto& R : c.regimes) {
      if (R.size() != T) throw UsageError("classify: regime draws differ in length");
      for (std::size_t t = 0; t < T; ++t) counts(static_cast<Eigen::Index>(t), R[t]) += 1.0;
    }
  }
  out.freq = counts / static_cast<double>(n);
  out.label.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    int best = 0;
    for (int j = 1; j < N; ++j) {
      if (counts(static_cast<Eigen::Index>(t), j) > counts(static_cast<Eigen::Index>(t), best)) best = j;
    }
    out.label[t] = best;
  }
  return out;
}

struct DrawRef {
  std::size_t chain = 0;
  std::size_t draw = 0;
};

/// The retained draw whose log-posterior is closest to the median log-posterior.
inline DrawRef representative_draw(const PosteriorStore& store) {
  std::vector<double> lp;
  for (const auto& c : store.chains)
    for (const auto& d : c.draws) lp.push_back(d.log_post);
  if (lp.empty()) throw UsageError("representative_draw: empty posterior store");
  const double med = data_percentile(lp, 0.5);
  DrawRef best;
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < store.chains.size(); ++c) {
    for (std::size_t i = 0; i < store.chains[c].draws.size(); ++i) {
      const double g = std::abs(store.chains[c].draws[i].log_post - med);
      if (g < gap) {
        gap = g;
        best = {c, i};
      }
    }
  }
  return best;
}

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double lo = 0.0;   // 2.5%
  double hi = 0.0;   // 97.5%
  double sd = 0.0;
};

inline std::vector<ParameterSummary> summarize(const PosteriorStore& store) {
  if (store.draw_count() == 0) throw UsageError("summarize: empty posterior store");
  std::vector<ParameterSummary> out;
  for (std::size_t k = 0; k < store.names.size(); ++k) {
    std::vector<double> v;
    for (const auto& c : store.chains)
      for (const auto& d : c.draws) v.push_back(d.values[k]);
    ParameterSummary s;
    s.name = store.names[k];
    double sum = 0.0;
    for (double a : v) sum += a;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double a : v) ss += (a - s.mean) * (a - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    s.median = data_percentile(v, 0.5);
    s.lo = data_percentile(v, 0.025);
    s.hi = data_percentile(v, 0.975);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Marginal likelihood

/// FNV-1a hash of the raw bytes of a price series.
inline std::uint64_t data_fingerprint(std::span<const double> x) {
  std::uint64_t h = 14695981039346656037ULL;
  for (double v : x) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

struct EvidenceConfig {
  int rungs = 32;              // K
  double exponent = 5.0;       // beta_k = (k/K)^exponent
  long n_sweeps = 20000;       // per rung
  long burn_in = 5000;
  long thin = 10;
  std::uint64_t seed = 1;
  int workers = 0;             // 0: hardware concurrency
  int batches = 20;            // batch means for the per-rung standard error
  bool condition_on_support = true;
  std::vector<std::string> fixed;       // scalar blocks held at their starting value
  std::optional<InitialState> start;    // overrides the default starting point of every rung

  double beta(int k) const { return std::pow(static_cast<double>(k) / rungs, exponent); }

  void validate() const {
    if (rungs < 1) throw ConfigError("evidence rungs must be >= 1");
    if (!(exponent > 0.0)) throw ConfigError("evidence ladder exponent must be positive");
    if (batches < 2) throw ConfigError("evidence batches must be >= 2");
  }
};

struct RungEstimate {
  double beta_from = 0.0;      // temperature the chain ran at
  double beta_to = 0.0;
  double log_ratio = 0.0;      // log Z(beta_to) - log Z(beta_from)
  double se = 0.0;
  std::size_t draws = 0;
  double mean_loglik = 0.0;
};

struct EvidenceEstimate {
  std::string model;
  double log_evidence = 0.0;
  double se = 0.0;
  std::vector<RungEstimate> rungs;
  std::uint64_t fingerprint = 0;
};

/// Stepping-stone ratio estimate from draws at beta_from, with a batch-means standard error.
inline RungEstimate stepping_stone_ratio(std::span<const double> loglik, double beta_from, double beta_to,
                                         int batches) {
  RungEstimate r;
  r.beta_from = beta_from;
  r.beta_to = beta_to;
  r.draws = loglik.size();
  if (loglik.empty()) throw EvidenceError("stepping-stone rung has no draws");
  const double db = beta_to - beta_from;
  double m = kNegInf;
  double mean_ll = 0.0;
  for (double l : loglik) {
    if (!std::isfinite(l)) throw EvidenceError("stepping-stone rung produced a non-finite log-likelihood");
    m = std::max(m, db * l);
    mean_ll += l;
  }
  r.mean_loglik = mean_ll / static_cast<double>(loglik.size());
  std::vector<double> w(loglik.size());
  double mean_w = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(db * loglik[i] - m);
    mean_w += w[i];
  }
  mean_w /= static_cast<double>(w.size());
  r.log_ratio = m + std::log(mean_w);

  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(batches), w.size());
  if (B >= 2) {
    const std::size_t size = w.size() / B;
    std::vector<double> bm(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = b * size; i < (b + 1) * size; ++i) bm[b] += w[i];
      bm[b] /= static_cast<double>(size);
    }
    double bmean = 0.0;
    for (double v : bm) bmean += v;
    bmean /= static_cast<double>(B);
    double var = 0.0;
    for (double v : bm) var += (v - bmean) * (v - bmean);
    var /= static_cast<double>(B - 1);
    r.se = std::sqrt(var / static_cast<double>(B)) / mean_w;
  }
  return r;
}

/// log p(x | model) by stepping-stone sampling over beta_k = (k/K)^exponent.
inline EvidenceEstimate estimate_evidence(const ModelSpec& spec, std::span<const double> x,
                                          const DesignMatrix& design, const PriorConfig& prior,
                                          const EvidenceConfig& cfg) {
  cfg.validate();
  const int K = cfg.rungs;
  std::vector<ChainResult> results(static_cast<std::size_t>(K));
  std::vector<std::string> errors(static_cast<std::size_t>(K));
  std::atomic<int> next{0};
  auto worker = [&] {
    while (true) {
      const int k = next++;
      if (k >= K) return;
      RunConfig rc;
      rc.n_sweeps = cfg.n_sweeps;
      rc.burn_in = cfg.burn_in;
      rc.thin = cfg.thin;
      rc.n_chains = 1;
      rc.seed = cfg.seed;
      rc.temperature = cfg.beta(k);
      rc.condition_on_support = cfg.condition_on_support;
      rc.fixed = cfg.fixed;
      try {
        results[static_cast<std::size_t>(k)] = run_chain(rc, spec, x, design, prior, 1000 + k, cfg.start);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(k)] = e.what();
      }
    }
  };
  const int n_workers = std::max(1, std::min(K, cfg.workers > 0 ? cfg.workers
                                                              : static_cast<int>(std::thread::hardware_concurrency())));
  std::vector<std::thread> pool;
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (int k = 0; k < K; ++k) {
    if (!errors[static_cast<std::size_t>(k)].empty()) {
      throw EvidenceError("evidence rung " + std::to_string(k) + " (beta=" + std::to_string(cfg.beta(k)) +
                          ") failed: " + errors[static_cast<std::size_t>(k)]);
    }
  }

  EvidenceEstimate est;
  est.model = spec.describe();
  est.fingerprint = data_fingerprint(x);
  double var = 0.0;
  for (int k = 0; k < K; ++k) {
    std::vector<double> ll;
    for (const auto& d : results[static_cast<std::size_t>(k)].draws) {
      ll.push_back(d.log_lik + (cfg.condition_on_support ? d.log_support : 0.0));
    }
    RungEstimate r;
    try {
      r = stepping_stone_ratio(ll, cfg.beta(k), cfg.beta(k + 1), cfg.batches);
    } catch (const EvidenceError& e) {
      throw EvidenceError("evidence rung " + std::to_string(k) + ": " + e.what());
    }
    est.log_evidence += r.log_ratio;
    var += r.se * r.se;
    est.rungs.push_back(r);
  }
  est.se = std::sqrt(var);
  return est;
}

struct BayesFactor {
  double log_bf = 0.0;
  double se = 0.0;
};

inline BayesFactor bayes_factor(const EvidenceEstimate& a, const EvidenceEstimate& b) {
  if (a.fingerprint != b.fingerprint) throw UsageError("bayes_factor: evidence estimates were computed on different data");
  if (&a == &b) return {0.0, 0.0};
  return {a.log_evidence - b.log_evidence, std::sqrt(a.se * a.se + b.se * b.se)};
}

}  // namespace mrs
