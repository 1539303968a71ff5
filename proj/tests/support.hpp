#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mrs/model.hpp"
#include "mrs/trend_basis.hpp"

namespace mrs::testing {

/// Single intercept column, no weekly block.
inline DesignMatrix intercept_design(int T) {
  DesignMatrix d;
  d.Z = Eigen::MatrixXd::Ones(T, 1);
  d.obs_rows.resize(static_cast<std::size_t>(T));
  std::iota(d.obs_rows.begin(), d.obs_rows.end(), Eigen::Index{0});
  d.n_weekly = 0;
  d.n_longterm = 1;
  return d;
}

inline double batch_means_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t size = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> bm(static_cast<std::size_t>(batches), 0.0);
  for (int b = 0; b < batches; ++b) {
    for (std::size_t i = b * size; i < (b + 1) * size; ++i) bm[static_cast<std::size_t>(b)] += v[i];
    bm[static_cast<std::size_t>(b)] /= static_cast<double>(size);
  }
  const double m = std::accumulate(bm.begin(), bm.end(), 0.0) / batches;
  double var = 0.0;
  for (double x : bm) var += (x - m) * (x - m);
  return std::sqrt(var / (batches - 1) / batches);
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline Eigen::MatrixXd random_transition_matrix(int N, std::mt19937_64& rng, double stickiness = 0.0) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Eigen::MatrixXd P(N, N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) P(i, j) = g(rng) + (i == j ? stickiness : 0.0);
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

/// Two base regimes and two lognormal spike regimes around a spline trend.
inline ModelSpec model3_spec() {
  ModelSpec s;
  s.n_base = 2;
  s.spikes = {SpikeFamily::lognormal, SpikeFamily::lognormal};
  s.trend = TrendKind::spline;
  return s;
}

}  // namespace mrs::testing
