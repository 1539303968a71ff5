#pragma once

// Trend design matrices: weekly dummies, cubic B-splines and a padded
// Daubechies scaling-function basis, combined into a single regressor matrix Z.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrs/daubechies_tables.hpp"
#include "mrs/errors.hpp"

namespace mrs {

enum class TrendKind { spline, wavelet, weekly_only };

inline std::string to_string(TrendKind kind) {
  switch (kind) {
    case TrendKind::spline: return "spline";
    case TrendKind::wavelet: return "wavelet";
    case TrendKind::weekly_only: return "weekly";
  }
  return "?";
}

inline TrendKind parse_trend_kind(const std::string& s) {
  if (s == "spline") return TrendKind::spline;
  if (s == "wavelet") return TrendKind::wavelet;
  if (s == "weekly" || s == "none") return TrendKind::weekly_only;
  throw ConfigError("unknown trend kind '" + s + "' (expected spline|wavelet|weekly)");
}

// ---------------------------------------------------------------------------
// Filters

struct FilterPair {
  std::vector<double> h;  // low-pass
  std::vector<double> g;  // high-pass, g_j = (-1)^j h_{N-1-j}

  std::size_t size() const { return h.size(); }
};

/// Daubechies filters with `order` vanishing moments (2*order taps).
/// The embedded table is checked against the orthonormality identities on load.
inline FilterPair daubechies_filters(int order) {
  auto table = detail::daubechies_table(order);
  if (table.empty()) {
    throw ConfigError("unsupported Daubechies order " + std::to_string(order) +
                      " (supported: 1..10)");
  }
  FilterPair f;
  f.h.assign(table.begin(), table.end());
  const std::size_t n = f.h.size();
  f.g.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    f.g[j] = ((j % 2 == 0) ? 1.0 : -1.0) * f.h[n - 1 - j];
  }

  double sum = 0.0;
  for (double c : f.h) sum += c;
  if (std::abs(sum - std::sqrt(2.0)) > 1e-12) {
    throw ConfigError("Daubechies table " + std::to_string(order) + " fails sum check");
  }
  for (std::size_t m = 0; 2 * m < n; ++m) {
    double acc = 0.0;
    for (std::size_t k = 0; k + 2 * m < n; ++k) acc += f.h[k] * f.h[k + 2 * m];
    if (std::abs(acc - (m == 0 ? 1.0 : 0.0)) > 1e-12) {
      throw ConfigError("Daubechies table " + std::to_string(order) +
                        " fails orthonormality check");
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Padding

struct PaddingPlan {
  int T = 0;
  int p = 0;
  int J = 0;
  int front = 0;
  int q = 0;
  int L = 0;
  int back = 0;
  // Signal length entering each level: level_sizes[0] = L, level_sizes[J] = q.
  std::vector<int> level_sizes;
};

inline PaddingPlan padding_plan(int T, int p, int J) {
  if (T < 1 || J < 1 || p < 1) {
    throw ConfigError("padding_plan needs T >= 1, p >= 1, J >= 1");
  }
  PaddingPlan plan;
  plan.T = T;
  plan.p = p;
  plan.J = J;
  const long two_j = 1L << J;
  const long spill = 2L * (p - 1) * (two_j - 1);
  plan.front = static_cast<int>(spill);
  plan.q = static_cast<int>((T + spill + two_j - 1) / two_j);
  plan.L = static_cast<int>(spill + two_j * plan.q);
  plan.back = plan.L - T - plan.front;
  // Each level keeps only the filter positions fully inside the signal:
  // s_{j+1} = (s_j - 2p)/2 + 1.
  plan.level_sizes.push_back(plan.L);
  for (int j = 0; j < J; ++j) {
    plan.level_sizes.push_back((plan.level_sizes.back() - 2 * p) / 2 + 1);
  }
  return plan;
}

/// Index into a length-n signal after whole-sample symmetric reflection
/// (the edge sample is not repeated), tiled periodically with period 2(n-1).
inline std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return static_cast<std::size_t>(m);
}

inline std::vector<double> symmetric_pad(std::span<const double> x, const PaddingPlan& plan) {
  if (static_cast<int>(x.size()) != plan.T) {
    throw ConfigError("symmetric_pad: series length does not match padding plan");
  }
  std::vector<double> out(static_cast<std::size_t>(plan.L));
  const long n = static_cast<long>(x.size());
  for (long r = 0; r < plan.L; ++r) {
    out[static_cast<std::size_t>(r)] = x[reflect_index(r - plan.front, n)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wavelet basis

namespace detail {

// One level of H: out[r] = sum_k h_k in[2r + k].
inline std::vector<double> lowpass_step(std::span<const double> in, std::span<const double> h,
                                        int out_size) {
  std::vector<double> out(static_cast<std::size_t>(out_size), 0.0);
  for (int r = 0; r < out_size; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) acc += h[k] * in[2 * r + k];
    out[static_cast<std::size_t>(r)] = acc;
  }
  return out;
}

// H' applied to a coarse vector.
inline std::vector<double> lowpass_adjoint_step(std::span<const double> in,
                                                std::span<const double> h, int out_size) {
  std::vector<double> out(static_cast<std::size_t>(out_size), 0.0);
  for (std::size_t r = 0; r < in.size(); ++r) {
    for (std::size_t k = 0; k < h.size(); ++k) out[2 * r + k] += h[k] * in[r];
  }
  return out;
}

}  // namespace detail

/// Scaling coefficients H_J ... H_1 x of a padded signal (the filter-bank route).
inline std::vector<double> wavelet_coefficients(std::span<const double> padded,
                                                const PaddingPlan& plan,
                                                const FilterPair& filters) {
  if (static_cast<int>(padded.size()) != plan.L) {
    throw ConfigError("wavelet_coefficients: signal length does not match plan");
  }
  std::vector<double> cur(padded.begin(), padded.end());
  for (int j = 0; j < plan.J; ++j) {
    cur = detail::lowpass_step(cur, filters.h, plan.level_sizes[j + 1]);
  }
  return cur;
}

/// W' = (H_J ... H_1)', an L x q matrix with orthonormal columns.
inline Eigen::MatrixXd wavelet_design(const PaddingPlan& plan, const FilterPair& filters) {
  if (static_cast<int>(filters.size()) != 2 * plan.p) {
    throw ConfigError("wavelet_design: filter length does not match plan order");
  }
  Eigen::MatrixXd W(plan.L, plan.q);
  for (int c = 0; c < plan.q; ++c) {
    std::vector<double> cur(static_cast<std::size_t>(plan.q), 0.0);
    cur[static_cast<std::size_t>(c)] = 1.0;
    for (int j = plan.J; j >= 1; --j) {
      cur = detail::lowpass_adjoint_step(cur, filters.h, plan.level_sizes[j - 1]);
    }
    W.col(c) = Eigen::Map<const Eigen::VectorXd>(cur.data(), plan.L);
  }
  return W;
}

// ---------------------------------------------------------------------------
// Cubic B-splines

struct SplineBasis {
  std::vector<double> knots;            // interior knots eta_1 < ... < eta_k
  std::vector<double> augmented;        // tau_1 .. tau_{k+8}
  static constexpr int order = 4;

  int function_count() const { return static_cast<int>(augmented.size()) - order; }

  /// Values of all k+4 cubic basis functions at x (Cox-de Boor, 0/0 := 0).
  std::vector<double> evaluate(double x) const {
    const auto& tau = augmented;
    const std::size_t n_knots = tau.size();
    std::vector<double> b(n_knots - 1, 0.0);
    for (std::size_t i = 0; i + 1 < n_knots; ++i) {
      b[i] = (tau[i] < tau[i + 1] && tau[i] <= x && x < tau[i + 1]) ? 1.0 : 0.0;
    }
    for (int m = 2; m <= order; ++m) {
      std::vector<double> next(n_knots - static_cast<std::size_t>(m), 0.0);
      for (std::size_t i = 0; i < next.size(); ++i) {
        double left = 0.0;
        double right = 0.0;
        const double dl = tau[i + m - 1] - tau[i];
        const double dr = tau[i + m] - tau[i + 1];
        if (dl > 0.0) left = (x - tau[i]) / dl * b[i];
        if (dr > 0.0) right = (tau[i + m] - x) / dr * b[i + 1];
        next[i] = left + right;
      }
      b = std::move(next);
    }
    return b;
  }
};

/// Cubic B-spline basis with interior knots `knots` and four-fold boundary knots
/// placed one knot spacing outside the first and last interior knot.
inline SplineBasis make_spline_basis(std::vector<double> knots) {
  if (knots.size() < 2) throw ConfigError("spline basis needs at least 2 knots");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) {
      throw ConfigError("spline knots must be strictly increasing");
    }
  }
  const double spacing = (knots.back() - knots.front()) / static_cast<double>(knots.size() - 1);
  SplineBasis basis;
  basis.knots = std::move(knots);
  for (int i = 0; i < SplineBasis::order; ++i) basis.augmented.push_back(basis.knots.front() - spacing);
  basis.augmented.insert(basis.augmented.end(), basis.knots.begin(), basis.knots.end());
  for (int i = 0; i < SplineBasis::order; ++i) basis.augmented.push_back(basis.knots.back() + spacing);
  return basis;
}

/// Default number of equally spaced knots between -1 and T+1.
inline int default_knot_count(int T, double knot_spacing) {
  if (!(knot_spacing > 0.0)) throw ConfigError("knot spacing must be positive");
  const double span = static_cast<double>(T) + 2.0;
  return std::max(2, static_cast<int>(std::lround(span / knot_spacing)));
}

struct SplineDesign {
  Eigen::MatrixXd C;            // T x (k+4), all basis functions
  std::vector<bool> retained;   // columns nonzero on at least one observation row
  SplineBasis basis;

  Eigen::MatrixXd retained_columns() const {
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < retained.size(); ++i) {
      if (retained[i]) keep.push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd out(C.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = C.col(keep[j]);
    return out;
  }
};

/// Observation t (0-based) is evaluated at time t. Knots run from -1 to T+1.
inline SplineDesign spline_design(int T, double knot_spacing = 180.0,
                                  std::optional<int> knot_count = std::nullopt) {
  if (T < 1) throw ConfigError("spline_design needs T >= 1");
  const int k = knot_count ? *knot_count : default_knot_count(T, knot_spacing);
  if (k < 2) throw ConfigError("spline_design needs at least 2 knots");
  std::vector<double> knots(static_cast<std::size_t>(k));
  const double lo = -1.0;
  const double hi = static_cast<double>(T) + 1.0;
  for (int i = 0; i < k; ++i) knots[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (k - 1);
  knots.back() = hi;

  SplineDesign d;
  d.basis = make_spline_basis(std::move(knots));
  const int n_fun = d.basis.function_count();
  d.C = Eigen::MatrixXd::Zero(T, n_fun);
  for (int t = 0; t < T; ++t) {
    const auto row = d.basis.evaluate(static_cast<double>(t));
    for (int i = 0; i < n_fun; ++i) d.C(t, i) = row[static_cast<std::size_t>(i)];
  }
  d.retained.resize(static_cast<std::size_t>(n_fun));
  for (int i = 0; i < n_fun; ++i) d.retained[static_cast<std::size_t>(i)] = d.C.col(i).cwiseAbs().maxCoeff() > 0.0;
  return d;
}

// ---------------------------------------------------------------------------
// Weekly dummies and the combined matrix

/// Row t has a one in column (start_weekday + t) mod 7. Weekday 0 is Monday.
inline Eigen::MatrixXd weekly_design(int T, int start_weekday) {
  if (start_weekday < 0 || start_weekday > 6) throw ConfigError("start weekday must be in 0..6");
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(T, 7);
  for (int t = 0; t < T; ++t) M(t, (start_weekday + t) % 7) = 1.0;
  return M;
}

struct DesignMatrix {
  Eigen::MatrixXd Z;                  // possibly padded rows x trend parameters
  std::vector<Eigen::Index> obs_rows; // observation t -> row of Z
  int n_weekly = 7;
  int n_longterm = 0;
  TrendKind kind = TrendKind::weekly_only;

  int observation_count() const { return static_cast<int>(obs_rows.size()); }
  Eigen::Index columns() const { return Z.cols(); }

  /// Z restricted to observation rows (T x columns).
  Eigen::MatrixXd observed() const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(obs_rows.size()), Z.cols());
    for (std::size_t t = 0; t < obs_rows.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = Z.row(obs_rows[t]);
    return out;
  }
};

inline DesignMatrix combine_weekly_only(const Eigen::MatrixXd& M) {
  DesignMatrix d;
  d.Z = M;
  d.n_weekly = static_cast<int>(M.cols());
  for (Eigen::Index t = 0; t < M.rows(); ++t) d.obs_rows.push_back(t);
  return d;
}

inline DesignMatrix combine_spline(const Eigen::MatrixXd& M, const SplineDesign& spline) {
  const Eigen::MatrixXd C = spline.retained_columns();
  if (M.rows() != C.rows()) throw ConfigError("combine_spline: row mismatch");
  DesignMatrix d = combine_weekly_only(M);
  d.Z.resize(M.rows(), M.cols() + C.cols());
  d.Z << M, C;
  d.n_longterm = static_cast<int>(C.cols());
  d.kind = TrendKind::spline;
  return d;
}

/// Z = [M* | W'] with M* the weekly columns padded exactly like the data.
inline DesignMatrix combine_wavelet(const Eigen::MatrixXd& M, const Eigen::MatrixXd& W,
                                    const PaddingPlan& plan) {
  if (M.rows() != plan.T || W.rows() != plan.L) throw ConfigError("combine_wavelet: row mismatch");
  DesignMatrix d;
  d.Z.resize(plan.L, M.cols() + W.cols());
  for (Eigen::Index c = 0; c < M.cols(); ++c) {
    std::vector<double> col(M.col(c).data(), M.col(c).data() + M.rows());
    const auto padded = symmetric_pad(col, plan);
    d.Z.col(c) = Eigen::Map<const Eigen::VectorXd>(padded.data(), plan.L);
  }
  d.Z.rightCols(W.cols()) = W;
  d.n_weekly = static_cast<int>(M.cols());
  d.n_longterm = static_cast<int>(W.cols());
  d.kind = TrendKind::wavelet;
  for (int t = 0; t < plan.T; ++t) d.obs_rows.push_back(plan.front + t);
  return d;
}

struct TrendOptions {
  TrendKind kind = TrendKind::spline;
  double knot_spacing = 180.0;
  std::optional<int> knot_count;
  int wavelet_order = 8;
  int wavelet_levels = 8;
};

inline DesignMatrix build_design(const TrendOptions& opt, int T, int start_weekday) {
  const Eigen::MatrixXd M = weekly_design(T, start_weekday);
  switch (opt.kind) {
    case TrendKind::weekly_only:
      return combine_weekly_only(M);
    case TrendKind::spline:
      return combine_spline(M, spline_design(T, opt.knot_spacing, opt.knot_count));
    case TrendKind::wavelet: {
      const auto plan = padding_plan(T, opt.wavelet_order, opt.wavelet_levels);
      return combine_wavelet(M, wavelet_design(plan, daubechies_filters(opt.wavelet_order)), plan);
    }
  }
  throw ConfigError("unknown trend kind");
}

}  // namespace mrs
