#pragma once

// Regime-switching model definition: regimes, parameters, priors and all
// log-densities of the complete-data posterior.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrs/errors.hpp"
#include "mrs/trend_basis.hpp"

namespace mrs {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class SpikeFamily { lognormal, gamma };

inline std::string to_string(SpikeFamily f) { return f == SpikeFamily::lognormal ? "lognormal" : "gamma"; }

inline SpikeFamily parse_spike_family(const std::string& s) {
  if (s == "lognormal") return SpikeFamily::lognormal;
  if (s == "gamma") return SpikeFamily::gamma;
  throw ConfigError("unknown spike family '" + s + "' (expected lognormal|gamma)");
}

enum class RegimeKind { base, spike, drop };

struct RegimeInfo {
  int id = 1;             // public label: base 1,2; spikes 3,4; drop 5
  RegimeKind kind = RegimeKind::base;
  SpikeFamily family = SpikeFamily::lognormal;
  int slot = 0;           // index within its kind (base 0/1, spike 0/1, drop 0)
};

struct ModelSpec {
  int n_base = 1;
  std::vector<SpikeFamily> spikes;
  bool has_drop = false;
  TrendKind trend = TrendKind::spline;

  int regime_count() const { return n_base + static_cast<int>(spikes.size()) + (has_drop ? 1 : 0); }

  void validate() const {
    if (n_base < 1 || n_base > 2) throw ConfigError("n_base must be 1 or 2");
    if (spikes.size() > 2) throw ConfigError("at most two spike regimes are supported");
  }

  /// Regimes in internal order (index 0 is always base regime 1).
  std::vector<RegimeInfo> regimes() const {
    std::vector<RegimeInfo> out;
    for (int i = 0; i < n_base; ++i) out.push_back({1 + i, RegimeKind::base, SpikeFamily::lognormal, i});
    for (std::size_t i = 0; i < spikes.size(); ++i) {
      out.push_back({3 + static_cast<int>(i), RegimeKind::spike, spikes[i], static_cast<int>(i)});
    }
    if (has_drop) out.push_back({5, RegimeKind::drop, SpikeFamily::lognormal, 0});
    return out;
  }

  std::string describe() const {
    std::string s = std::to_string(n_base) + " base";
    for (auto f : spikes) s += ", " + to_string(f) + " spike";
    if (has_drop) s += ", drop";
    return s + ", " + to_string(trend) + " trend";
  }
};

struct BaseParams {
  double phi = 0.5;
  double sigma2 = 1.0;
};

/// Shifted distribution: spikes use x - q, the drop regime uses q - x.
/// For lognormal, (mu, sigma2) are log-scale location and variance;
/// for gamma, mu is the shape and sigma2 the scale.
struct ShiftedParams {
  double q = 0.0;
  double mu = 0.0;
  double sigma2 = 1.0;
};

struct ParameterSet {
  Eigen::VectorXd gamma;
  std::vector<BaseParams> base;
  std::vector<ShiftedParams> spikes;
  std::optional<ShiftedParams> drop;
  Eigen::MatrixXd P;

  const ShiftedParams& shifted(const RegimeInfo& r) const {
    return r.kind == RegimeKind::drop ? *drop : spikes[static_cast<std::size_t>(r.slot)];
  }
};

/// Latent regime path as internal regime indices (see ModelSpec::regimes()).
/// states[0] is always 0, i.e. the path starts in base regime 1.
struct RegimeSequence {
  std::vector<std::uint8_t> states;

  std::size_t size() const { return states.size(); }
  int operator[](std::size_t t) const { return states[t]; }

  static RegimeSequence constant(std::size_t T, int regime = 0) {
    return RegimeSequence{std::vector<std::uint8_t>(T, static_cast<std::uint8_t>(regime))};
  }

  /// For each t whose regime is a base regime, the lag back to its previous
  /// occurrence (0 when t is the first occurrence). Other entries are 0.
  std::vector<int> gap_index(const ModelSpec& spec) const {
    std::vector<int> gaps(states.size(), 0);
    std::vector<long> last(static_cast<std::size_t>(spec.n_base), -1);
    for (std::size_t t = 0; t < states.size(); ++t) {
      const int r = states[t];
      if (r < spec.n_base) {
        if (last[static_cast<std::size_t>(r)] >= 0) gaps[t] = static_cast<int>(static_cast<long>(t) - last[static_cast<std::size_t>(r)]);
        last[static_cast<std::size_t>(r)] = static_cast<long>(t);
      }
    }
    return gaps;
  }
};

// ---------------------------------------------------------------------------
// Densities

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double normal_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -kLogSqrt2Pi - 0.5 * std::log(variance) - 0.5 * d * d / variance;
}

/// Variance multiplier (1 - phi^{2k}) / (1 - phi^2) of a k-step AR(1) transition.
inline double ar1_gap_variance_factor(double phi, int k) {
  const double phi2 = phi * phi;
  if (phi2 < 1e-300) return 1.0;
  const double denom = 1.0 - phi2;
  if (std::abs(denom) < 1e-12) return static_cast<double>(k);
  return (1.0 - std::pow(phi2, k)) / denom;
}

/// Log-density of x_t given the same AR(1) regime was last seen k steps earlier at x_prev.
inline double ar1_gap_logdensity(double x_t, double x_prev, int k, double phi, double sigma2,
                                 double trend_t, double trend_prev) {
  if (!std::isfinite(x_t) || !std::isfinite(x_prev) || !std::isfinite(trend_t) ||
      !std::isfinite(trend_prev) || !std::isfinite(phi) || !std::isfinite(sigma2)) {
    throw EvaluationError("ar1_gap_logdensity: non-finite input");
  }
  if (k < 1) throw EvaluationError("ar1_gap_logdensity: lag must be >= 1");
  const double mean = trend_t + std::pow(phi, k) * (x_prev - trend_prev);
  return normal_logpdf(x_t, mean, sigma2 * ar1_gap_variance_factor(phi, k));
}

inline double lognormal_logpdf(double y, double mu, double sigma2) {
  if (!(y > 0.0)) return kNegInf;
  const double ly = std::log(y);
  return normal_logpdf(ly, mu, sigma2) - ly;
}

/// Gamma density with shape `shape` and scale `scale`.
inline double gamma_logpdf(double y, double shape, double scale) {
  if (!(y > 0.0)) return kNegInf;
  return (shape - 1.0) * std::log(y) - y / scale - std::lgamma(shape) - shape * std::log(scale);
}

inline double spike_logdensity(double x, SpikeFamily family, double q, double mu, double sigma2) {
  const double y = x - q;
  if (!(y > 0.0)) return kNegInf;
  return family == SpikeFamily::lognormal ? lognormal_logpdf(y, mu, sigma2) : gamma_logpdf(y, mu, sigma2);
}

inline double drop_logdensity(double x, double q5, double mu5, double sigma2_5) {
  return lognormal_logpdf(q5 - x, mu5, sigma2_5);
}

/// Density of an i.i.d. (spike or drop) regime at x.
inline double shifted_logdensity(const RegimeInfo& r, const ShiftedParams& p, double x) {
  if (r.kind == RegimeKind::drop) return drop_logdensity(x, p.q, p.mu, p.sigma2);
  return spike_logdensity(x, r.family, p.q, p.mu, p.sigma2);
}

/// Trend z_t gamma at every observation row.
inline std::vector<double> observed_trend(const DesignMatrix& design, const Eigen::VectorXd& gamma) {
  if (gamma.size() != design.columns()) throw ConfigError("trend coefficient count does not match design");
  std::vector<double> trend(design.obs_rows.size());
  for (std::size_t t = 0; t < trend.size(); ++t) trend[t] = design.Z.row(design.obs_rows[t]).dot(gamma);
  return trend;
}

/// log p(x | theta, R). The first visit of each base regime contributes 0.
inline double complete_data_loglik(std::span<const double> x, const ParameterSet& theta,
                                   const RegimeSequence& R, const ModelSpec& spec,
                                   std::span<const double> trend) {
  if (R.size() != x.size() || trend.size() != x.size()) {
    throw UsageError("complete_data_loglik: length mismatch");
  }
  const auto regimes = spec.regimes();
  const auto gaps = R.gap_index(spec);
  double total = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const auto& reg = regimes[R[t]];
    if (reg.kind == RegimeKind::base) {
      const int k = gaps[t];
      if (k == 0) continue;
      const auto& b = theta.base[static_cast<std::size_t>(reg.slot)];
      total += ar1_gap_logdensity(x[t], x[t - k], k, b.phi, b.sigma2, trend[t], trend[t - k]);
    } else {
      total += shifted_logdensity(reg, theta.shifted(reg), x[t]);
    }
    if (total == kNegInf) return kNegInf;
  }
  return total;
}

inline double complete_data_loglik(std::span<const double> x, const ParameterSet& theta,
                                   const RegimeSequence& R, const ModelSpec& spec,
                                   const DesignMatrix& design) {
  const auto trend = observed_trend(design, theta.gamma);
  return complete_data_loglik(x, theta, R, spec, trend);
}

/// log p(R | P) with R_1 = 1 fixed.
inline double regime_path_logprob(const RegimeSequence& R, const Eigen::MatrixXd& P) {
  double total = 0.0;
  for (std::size_t t = 1; t < R.size(); ++t) {
    const double p = P(R[t - 1], R[t]);
    if (!(p > 0.0)) return kNegInf;
    total += std::log(p);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Priors

/// Empirical quantile with linear interpolation at position 1 + (n-1) alpha.
inline double data_percentile(std::span<const double> x, double alpha) {
  if (x.empty()) throw ConfigError("data_percentile: empty series");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("data_percentile: alpha outside [0,1]");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = alpha * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

struct PriorConfig {
  double data_sd = 1.0;
  Interval q_spike1;             // q_3
  Interval q_spike2;             // q_4
  Interval q_drop;               // q_5
  Interval base_sigma2;          // 1/sigma2 prior support for AR regimes
  Interval shifted_sigma2;       // 1/sigma2 prior support for spike/drop variances and gamma scales
  double gamma_sd = 1.0;         // trend coefficients ~ N(0, gamma_sd^2)
  double mu_sd = 1.0;            // lognormal locations ~ N(0, mu_sd^2)
  double shape_alpha = 3.0;      // gamma shapes: mu - 1 ~ InvGamma(alpha, beta)
  double shape_beta = 5.5;

  /// Hyperparameters derived from the raw (untrended) prices.
  static PriorConfig from_data(std::span<const double> x) {
    if (x.size() < 2) throw ConfigError("prior configuration needs at least two observations");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    PriorConfig c;
    c.data_sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
    const double s = c.data_sd;
    c.q_spike1 = {data_percentile(x, 0.66), data_percentile(x, 0.99)};
    c.q_spike2 = {data_percentile(x, 0.90), data_percentile(x, 0.99)};
    c.q_drop = {data_percentile(x, 0.01), data_percentile(x, 0.33)};
    c.base_sigma2 = {1.0, 10.0 * s};
    c.shifted_sigma2 = {0.1, 10.0 * s * s};
    c.gamma_sd = 10.0 * s * s;
    c.mu_sd = 10.0 * s;
    return c;
  }

  const Interval& q_window(const RegimeInfo& r) const {
    if (r.kind == RegimeKind::drop) return q_drop;
    return r.slot == 0 ? q_spike1 : q_spike2;
  }
};

/// Normalised density proportional to 1/v on [a, b].
inline double reciprocal_logpdf(double v, const Interval& support) {
  if (!(support.lo > 0.0) || !(support.hi > support.lo)) return kNegInf;
  if (!support.contains(v)) return kNegInf;
  return -std::log(v) - std::log(std::log(support.hi / support.lo));
}

inline double uniform_logpdf(double v, const Interval& support) {
  if (!(support.hi > support.lo) || !support.contains(v)) return kNegInf;
  return -std::log(support.width());
}

inline double inverse_gamma_logpdf(double v, double alpha, double beta) {
  if (!(v > 0.0)) return kNegInf;
  return alpha * std::log(beta) - std::lgamma(alpha) - (alpha + 1.0) * std::log(v) - beta / v;
}

/// Dirichlet(1,...,1) log-density on a row of length n: log (n-1)!.
inline double uniform_simplex_logpdf(const Eigen::RowVectorXd& row) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (!(row(j) >= 0.0)) return kNegInf;
    sum += row(j);
  }
  if (std::abs(sum - 1.0) > 1e-9) return kNegInf;
  return std::lgamma(static_cast<double>(row.size()));
}

inline double log_prior(const ParameterSet& theta, const ModelSpec& spec, const PriorConfig& prior) {
  double lp = 0.0;
  for (Eigen::Index k = 0; k < theta.gamma.size(); ++k) {
    lp += normal_logpdf(theta.gamma(k), 0.0, prior.gamma_sd * prior.gamma_sd);
  }
  for (std::size_t i = 0; i < theta.base.size(); ++i) {
    const auto& b = theta.base[i];
    if (!(b.phi > -1.0 && b.phi < 1.0)) return kNegInf;
    lp += std::log(0.5);
    lp += reciprocal_logpdf(b.sigma2, prior.base_sigma2);
    if (i > 0 && !(theta.base[i - 1].sigma2 < b.sigma2)) return kNegInf;
  }
  for (const auto& reg : spec.regimes()) {
    if (reg.kind == RegimeKind::base) continue;
    const auto& p = theta.shifted(reg);
    lp += uniform_logpdf(p.q, prior.q_window(reg));
    lp += reciprocal_logpdf(p.sigma2, prior.shifted_sigma2);
    if (reg.kind == RegimeKind::spike && reg.family == SpikeFamily::gamma) {
      lp += inverse_gamma_logpdf(p.mu - 1.0, prior.shape_alpha, prior.shape_beta);
    } else {
      lp += normal_logpdf(p.mu, 0.0, prior.mu_sd * prior.mu_sd);
    }
    if (lp == kNegInf) return kNegInf;
  }
  for (Eigen::Index i = 0; i < theta.P.rows(); ++i) lp += uniform_simplex_logpdf(theta.P.row(i));
  return std::isnan(lp) ? kNegInf : lp;
}

// ---------------------------------------------------------------------------
// Flat parameter layout

/// One scalar parameter: a Metropolis block and one column of the sample file.
struct ScalarSlot {
  enum class Field { gamma, phi, base_sigma2, q, mu, shifted_sigma2 };
  std::string name;
  Field field = Field::gamma;
  int regime = 0;  // internal regime index (unused for gamma)
  int index = 0;   // gamma entry or slot within the regime kind
};

/// Scalar parameters in sweep order: gamma entries, base regimes, spikes, drop.
inline std::vector<ScalarSlot> scalar_layout(const ModelSpec& spec, int n_gamma) {
  using F = ScalarSlot::Field;
  std::vector<ScalarSlot> out;
  for (int k = 0; k < n_gamma; ++k) out.push_back({"gamma_" + std::to_string(k + 1), F::gamma, 0, k});
  const auto regimes = spec.regimes();
  for (std::size_t r = 0; r < regimes.size(); ++r) {
    const auto& reg = regimes[r];
    const std::string id = std::to_string(reg.id);
    const int ri = static_cast<int>(r);
    if (reg.kind == RegimeKind::base) {
      out.push_back({"phi_" + id, F::phi, ri, reg.slot});
      out.push_back({"sigma2_" + id, F::base_sigma2, ri, reg.slot});
    } else {
      out.push_back({"q_" + id, F::q, ri, reg.slot});
      out.push_back({"mu_" + id, F::mu, ri, reg.slot});
      out.push_back({"sigma2_" + id, F::shifted_sigma2, ri, reg.slot});
    }
  }
  return out;
}

inline double& slot_ref(ParameterSet& theta, const ScalarSlot& s, const ModelSpec& spec) {
  using F = ScalarSlot::Field;
  switch (s.field) {
    case F::gamma: return theta.gamma(s.index);
    case F::phi: return theta.base[static_cast<std::size_t>(s.index)].phi;
    case F::base_sigma2: return theta.base[static_cast<std::size_t>(s.index)].sigma2;
    default: break;
  }
  const auto reg = spec.regimes()[static_cast<std::size_t>(s.regime)];
  ShiftedParams& p = reg.kind == RegimeKind::drop ? *theta.drop : theta.spikes[static_cast<std::size_t>(reg.slot)];
  if (s.field == F::q) return p.q;
  if (s.field == F::mu) return p.mu;
  return p.sigma2;
}

inline double slot_value(const ParameterSet& theta, const ScalarSlot& s, const ModelSpec& spec) {
  return slot_ref(const_cast<ParameterSet&>(theta), s, spec);
}

/// Column names of a flattened draw: scalar slots followed by P row-major.
inline std::vector<std::string> flat_names(const ModelSpec& spec, int n_gamma) {
  std::vector<std::string> names;
  for (const auto& s : scalar_layout(spec, n_gamma)) names.push_back(s.name);
  const auto regimes = spec.regimes();
  for (const auto& a : regimes) {
    for (const auto& b : regimes) names.push_back("p_" + std::to_string(a.id) + "_" + std::to_string(b.id));
  }
  return names;
}

inline std::vector<double> flatten(const ParameterSet& theta, const ModelSpec& spec) {
  std::vector<double> out;
  for (const auto& s : scalar_layout(spec, static_cast<int>(theta.gamma.size()))) out.push_back(slot_value(theta, s, spec));
  for (Eigen::Index i = 0; i < theta.P.rows(); ++i) {
    for (Eigen::Index j = 0; j < theta.P.cols(); ++j) out.push_back(theta.P(i, j));
  }
  return out;
}

/// Parameter set with the right shapes for `spec` (values are placeholders).
inline ParameterSet shaped_parameters(const ModelSpec& spec, int n_gamma) {
  ParameterSet theta;
  theta.gamma = Eigen::VectorXd::Zero(n_gamma);
  theta.base.resize(static_cast<std::size_t>(spec.n_base));
  theta.spikes.resize(spec.spikes.size());
  if (spec.has_drop) theta.drop = ShiftedParams{};
  const int N = spec.regime_count();
  theta.P = Eigen::MatrixXd::Constant(N, N, 1.0 / N);
  return theta;
}

inline ParameterSet unflatten(std::span<const double> values, const ModelSpec& spec, int n_gamma) {
  ParameterSet theta = shaped_parameters(spec, n_gamma);
  const auto layout = scalar_layout(spec, n_gamma);
  const int N = spec.regime_count();
  if (values.size() != layout.size() + static_cast<std::size_t>(N * N)) {
    throw UsageError("unflatten: value count does not match model layout");
  }
  std::size_t i = 0;
  for (const auto& s : layout) slot_ref(theta, s, spec) = values[i++];
  for (int a = 0; a < N; ++a) {
    for (int b = 0; b < N; ++b) theta.P(a, b) = values[i++];
  }
  return theta;
}

}  // namespace mrs
