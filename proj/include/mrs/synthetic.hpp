#pragma once

// Simulation from a ModelSpec with known parameters, and exact brute-force
// oracles for tiny instances.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mrs/errors.hpp"
#include "mrs/model.hpp"
#include "mrs/trend_basis.hpp"

namespace mrs {

struct SimOutput {
  std::vector<double> x;
  RegimeSequence R;
  std::vector<std::vector<double>> base_paths;  // full latent AR(1) path of each base regime
  std::vector<double> trend;
};

/// Simulates T observations around an explicit trend.
inline SimOutput simulate(const ModelSpec& spec, const ParameterSet& theta, std::span<const double> trend,
                          std::uint64_t seed) {
  spec.validate();
  const std::size_t T = trend.size();
  const int N = spec.regime_count();
  if (theta.P.rows() != N || theta.P.cols() != N) throw ConfigError("simulate: P has the wrong shape");
  if (theta.base.size() != static_cast<std::size_t>(spec.n_base)) throw ConfigError("simulate: wrong number of base regimes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);

  SimOutput out;
  out.trend.assign(trend.begin(), trend.end());
  out.x.resize(T);
  out.R = RegimeSequence::constant(T);
  const auto regimes = spec.regimes();

  for (const auto& b : theta.base) {
    if (!(std::abs(b.phi) < 1.0) || !(b.sigma2 > 0.0)) throw ConfigError("simulate: base parameters out of support");
    std::vector<double> path(T);
    double dev = n01(rng) * std::sqrt(b.sigma2 / (1.0 - b.phi * b.phi));
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) dev = b.phi * dev + std::sqrt(b.sigma2) * n01(rng);
      path[t] = trend[t] + dev;
    }
    out.base_paths.push_back(std::move(path));
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t t = 1; t < T; ++t) {
    const int from = out.R[t - 1];
    const double u = unif(rng);
    double acc = 0.0;
    int to = N - 1;
    for (int j = 0; j < N; ++j) {
      acc += theta.P(from, j);
      if (u < acc) {
        to = j;
        break;
      }
    }
    out.R.states[t] = static_cast<std::uint8_t>(to);
  }

  for (std::size_t t = 0; t < T; ++t) {
    const auto& reg = regimes[out.R[t]];
    if (reg.kind == RegimeKind::base) {
      out.x[t] = out.base_paths[static_cast<std::size_t>(reg.slot)][t];
      continue;
    }
    const auto& p = theta.shifted(reg);
    double y = 0.0;
    if (reg.kind == RegimeKind::spike && reg.family == SpikeFamily::gamma) {
      std::gamma_distribution<double> g(p.mu, p.sigma2);
      y = g(rng);
    } else {
      y = std::exp(p.mu + std::sqrt(p.sigma2) * n01(rng));
    }
    out.x[t] = reg.kind == RegimeKind::drop ? p.q - y : p.q + y;
  }
  return out;
}

inline SimOutput simulate(const ModelSpec& spec, const ParameterSet& theta, const DesignMatrix& design,
                          std::uint64_t seed) {
  const auto trend = observed_trend(design, theta.gamma);
  return simulate(spec, theta, trend, seed);
}

// ---------------------------------------------------------------------------
// Exact oracles

struct EnumerationResult {
  double log_evidence = 0.0;   // log p(x | theta)
  Eigen::MatrixXd marginals;   // T x N, P(R_t = j | x, theta) in internal regime order
};

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double a : v) m = std::max(m, a);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

/// Sums p(x | theta, R) p(R | theta) over every path with R_1 = 1.
inline EnumerationResult enumerate_posterior(std::span<const double> x, const ParameterSet& theta,
                                             const ModelSpec& spec, std::span<const double> trend) {
  const std::size_t T = x.size();
  const int N = spec.regime_count();
  if (T == 0 || trend.size() != T) throw UsageError("enumerate_posterior: empty series or trend length mismatch");
  const double size = std::pow(static_cast<double>(N), static_cast<double>(T));
  if (size > 1e6) {
    throw UsageError("enumerate_posterior: instance too large, N^T = " + std::to_string(size) + " exceeds 1e6");
  }
  // Odometer over R_2..R_T; R_1 stays in base regime 1.
  auto for_each_path = [&](auto&& f) {
    RegimeSequence R = RegimeSequence::constant(T);
    while (true) {
      f(R);
      std::size_t pos = 1;
      while (pos < T && R.states[pos] == N - 1) R.states[pos++] = 0;
      if (pos >= T) return;
      ++R.states[pos];
    }
  };
  std::vector<double> logs;
  for_each_path([&](const RegimeSequence& R) {
    const double lp = complete_data_loglik(x, theta, R, spec, trend);
    logs.push_back(lp == kNegInf ? kNegInf : lp + regime_path_logprob(R, theta.P));
  });
  EnumerationResult res;
  res.log_evidence = log_sum_exp(logs);
  res.marginals = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), N);
  if (res.log_evidence == kNegInf) throw UsageError("enumerate_posterior: data have zero probability under theta");
  std::size_t s = 0;
  for_each_path([&](const RegimeSequence& R) {
    const double w = std::exp(logs[s++] - res.log_evidence);
    for (std::size_t t = 0; t < T; ++t) res.marginals(static_cast<Eigen::Index>(t), R[t]) += w;
  });
  return res;
}

/// log p(x | theta) by a forward recursion over (regime, last visit of each base regime).
inline double forward_log_evidence(std::span<const double> x, const ParameterSet& theta, const ModelSpec& spec,
                                   std::span<const double> trend) {
  const std::size_t T = x.size();
  if (T == 0 || trend.size() != T) throw UsageError("forward_log_evidence: empty series or trend length mismatch");
  const auto regimes = spec.regimes();
  const int N = spec.regime_count();
  using Key = std::vector<long>;  // {regime, last_1, last_2, ...}
  std::map<Key, double> cur;
  Key start(static_cast<std::size_t>(1 + spec.n_base), -1);
  start[0] = 0;
  start[1] = 0;
  cur[start] = 0.0;

  auto add = [](std::map<Key, double>& m, const Key& k, double v) {
    auto it = m.find(k);
    if (it == m.end()) {
      m.emplace(k, v);
    } else {
      const double hi = std::max(it->second, v);
      if (hi != kNegInf) it->second = hi + std::log(std::exp(it->second - hi) + std::exp(v - hi));
    }
  };

  for (std::size_t t = 1; t < T; ++t) {
    std::map<Key, double> next;
    for (const auto& [key, lw] : cur) {
      for (int j = 0; j < N; ++j) {
        const double pt = theta.P(key[0], j);
        if (!(pt > 0.0)) continue;
        const auto& reg = regimes[static_cast<std::size_t>(j)];
        Key nk = key;
        nk[0] = j;
        double term = 0.0;
        if (reg.kind == RegimeKind::base) {
          const long last = key[static_cast<std::size_t>(1 + reg.slot)];
          if (last >= 0) {
            const auto& b = theta.base[static_cast<std::size_t>(reg.slot)];
            const auto ls = static_cast<std::size_t>(last);
            term = ar1_gap_logdensity(x[t], x[ls], static_cast<int>(t - ls), b.phi, b.sigma2, trend[t], trend[ls]);
          }
          nk[static_cast<std::size_t>(1 + reg.slot)] = static_cast<long>(t);
        } else {
          term = shifted_logdensity(reg, theta.shifted(reg), x[t]);
        }
        if (term == kNegInf) continue;
        add(next, nk, lw + std::log(pt) + term);
      }
    }
    cur = std::move(next);
  }
  std::vector<double> finals;
  for (const auto& [key, lw] : cur) finals.push_back(lw);
  return log_sum_exp(finals);
}

}  // namespace mrs
