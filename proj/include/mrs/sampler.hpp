#pragma once

// Adaptive data-augmented block Metropolis-Hastings sampler for p(theta, R | x).
//
// One sweep updates every trend coefficient, every base/spike/drop scalar with
// a Gaussian random walk, every transition row by a Dirichlet Gibbs draw and a
// random 10% of the regime indices by uniform single-site proposals. Proposal
// scales follow the batch-wise Roberts-Rosenthal rule during burn-in and are
// frozen afterwards.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrs/errors.hpp"
#include "mrs/model.hpp"
#include "mrs/trend_basis.hpp"

namespace mrs {

struct RunConfig {
  long n_sweeps = 200000;
  long burn_in = 50000;
  long thin = 50;
  int n_chains = 4;
  std::uint64_t seed = 1;
  bool adaptation_on = true;
  double scale_bound = 10.0;     // M: log proposal sd confined to [-M, M]
  double temperature = 1.0;      // power on p(x | theta, R)
  // Tempered target pi(theta) p(R | theta, S) [L(theta, R) P(S | theta)]^beta, where S is the event that
  // every observation lies in the support of its regime. Identical to the plain power posterior at beta=1
  // and for models without spike/drop regimes; keeps the beta=0 end normalised and free of zero-likelihood draws.
  bool condition_on_support = false;
  bool update_theta = true;
  bool update_transitions = true;
  bool update_regimes = true;
  std::vector<std::string> fixed;  // scalar blocks held at their initial value
  int batch_size = 50;
  double target_acceptance = 0.44;
  double regime_fraction = 0.1;
  int init_retries = 3;

  void validate() const {
    if (n_sweeps < 1) throw ConfigError("n_sweeps must be positive");
    if (burn_in < 0 || burn_in >= n_sweeps) throw ConfigError("burn_in must lie in [0, n_sweeps)");
    if (thin < 1) throw ConfigError("thin must be >= 1");
    if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
    if (!(scale_bound > 0.0)) throw ConfigError("scale bound M must be positive");
    if (!(temperature >= 0.0 && temperature <= 1.0)) throw ConfigError("temperature must lie in [0, 1]");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
  }
};

/// Adaptation step after the n-th batch: min(2/sqrt(n), 10/n, 10000/n^2).
inline double adaptation_step(long n) {
  const double nd = static_cast<double>(n);
  return std::min({2.0 / std::sqrt(nd), 10.0 / nd, 10000.0 / (nd * nd)});
}

/// Occupied time points of one regime, with fast predecessor/successor queries.
class OccurrenceSet {
 public:
  OccurrenceSet() = default;
  explicit OccurrenceSet(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

  void set(std::size_t t) { words_[t >> 6] |= bit(t); }
  void reset(std::size_t t) { words_[t >> 6] &= ~bit(t); }
  bool test(std::size_t t) const { return (words_[t >> 6] & bit(t)) != 0; }

  /// Largest u < t in the set, or -1.
  long prev(long t) const {
    if (t <= 0) return -1;
    const auto u = static_cast<std::size_t>(t - 1);
    long w = static_cast<long>(u >> 6);
    const unsigned off = u & 63u;
    std::uint64_t word = words_[static_cast<std::size_t>(w)] & (off == 63 ? ~0ULL : ((1ULL << (off + 1)) - 1));
    while (true) {
      if (word != 0) return w * 64 + 63 - std::countl_zero(word);
      if (--w < 0) return -1;
      word = words_[static_cast<std::size_t>(w)];
    }
  }

  /// Smallest u > t in the set, or -1.
  long next(long t) const {
    const auto u = static_cast<std::size_t>(t + 1);
    if (u >= n_) return -1;
    std::size_t w = u >> 6;
    std::uint64_t word = words_[w] & (~0ULL << (u & 63u));
    while (true) {
      if (word != 0) return static_cast<long>(w * 64) + std::countr_zero(word);
      if (++w >= words_.size()) return -1;
      word = words_[w];
    }
  }

 private:
  static std::uint64_t bit(std::size_t t) { return 1ULL << (t & 63u); }
  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

/// A log-likelihood that may contain zero-density terms.
struct LogLik {
  double finite = 0.0;
  long n_inf = 0;

  double value() const { return n_inf > 0 ? kNegInf : finite; }
  void add(double term) {
    if (term == kNegInf) ++n_inf;
    else finite += term;
  }
  void remove(double term) {
    if (term == kNegInf) --n_inf;
    else finite -= term;
  }
};

struct InitialState {
  ParameterSet theta;
  RegimeSequence R;
};

/// Deterministic starting point: OLS trend, mid-support parameters and a
/// threshold classification of the prices.
inline InitialState initial_state(const ModelSpec& spec, std::span<const double> x,
                                  const DesignMatrix& design, const PriorConfig& prior) {
  spec.validate();
  const auto T = x.size();
  const Eigen::MatrixXd Zobs = design.observed();
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(T));

  InitialState init{shaped_parameters(spec, static_cast<int>(Zobs.cols())), RegimeSequence::constant(T)};
  ParameterSet& th = init.theta;
  if (Zobs.cols() > 0) th.gamma = Zobs.completeOrthogonalDecomposition().solve(xv);

  auto log_mid = [](const Interval& s, double w) { return std::exp((1.0 - w) * std::log(s.lo) + w * std::log(s.hi)); };
  for (int i = 0; i < spec.n_base; ++i) {
    th.base[static_cast<std::size_t>(i)].phi = 0.5;
    th.base[static_cast<std::size_t>(i)].sigma2 =
        log_mid(prior.base_sigma2, spec.n_base == 1 ? 0.5 : (i + 1.0) / 3.0);
  }
  const auto regimes = spec.regimes();
  for (const auto& reg : regimes) {
    if (reg.kind == RegimeKind::base) continue;
    ShiftedParams p;
    const auto& w = prior.q_window(reg);
    p.q = 0.5 * (w.lo + w.hi);
    p.mu = (reg.kind == RegimeKind::spike && reg.family == SpikeFamily::gamma) ? 2.5 : 1.0;
    p.sigma2 = log_mid(prior.shifted_sigma2, 0.5);
    if (reg.kind == RegimeKind::drop) th.drop = p;
    else th.spikes[static_cast<std::size_t>(reg.slot)] = p;
  }

  const double upper = data_percentile(x, 0.75);
  const double lower = data_percentile(x, 0.25);
  const auto trend = observed_trend(design, th.gamma);
  std::vector<double> absres(T);
  for (std::size_t t = 0; t < T; ++t) absres[t] = std::abs(x[t] - trend[t]);
  const double med_absres = data_percentile(absres, 0.5);
  int spike_index = -1;
  int drop_index = -1;
  for (std::size_t r = 0; r < regimes.size(); ++r) {
    if (regimes[r].kind == RegimeKind::spike && regimes[r].slot == 0) spike_index = static_cast<int>(r);
    if (regimes[r].kind == RegimeKind::drop) drop_index = static_cast<int>(r);
  }
  for (std::size_t t = 1; t < T; ++t) {
    int r = (spec.n_base == 2 && absres[t] > med_absres) ? 1 : 0;
    if (spike_index >= 0 && x[t] > upper && x[t] > th.spikes[0].q) r = spike_index;
    if (drop_index >= 0 && x[t] < lower && x[t] < th.drop->q) r = drop_index;
    init.R.states[t] = static_cast<std::uint8_t>(r);
  }

  // Transition rows at the Dirichlet posterior mean given the initial path.
  const int N = spec.regime_count();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(N, N);
  for (std::size_t t = 1; t < T; ++t) counts(init.R[t - 1], init.R[t]) += 1.0;
  for (int i = 0; i < N; ++i) th.P.row(i) = (counts.row(i).array() + 1.0) / (counts.row(i).sum() + N);
  return init;
}

struct BlockStats {
  std::string name;
  double log_scale = 0.0;
  long proposed = 0;        // post burn-in
  long accepted = 0;        // post burn-in
  double acceptance() const { return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

class Chain {
 public:
  Chain(ModelSpec spec, std::span<const double> x, const DesignMatrix& design, PriorConfig prior,
        InitialState init, const RunConfig& config, std::uint64_t seed)
      : spec_(std::move(spec)),
        regimes_(spec_.regimes()),
        x_(x.begin(), x.end()),
        Zobs_(design.observed()),
        prior_(std::move(prior)),
        config_(config),
        theta_(std::move(init.theta)),
        R_(std::move(init.R)),
        rng_(seed) {
    spec_.validate();
    const auto T = x_.size();
    if (R_.size() != T || static_cast<std::size_t>(Zobs_.rows()) != T) throw UsageError("Chain: length mismatch");
    if (T == 0 || R_[0] != 0) throw UsageError("Chain: regime path must start in base regime 1");
    if (Zobs_.cols() != theta_.gamma.size()) throw UsageError("Chain: trend coefficient count mismatch");
    blocks_ = scalar_layout(spec_, static_cast<int>(Zobs_.cols()));
    active_.assign(blocks_.size(), true);
    for (const auto& name : config_.fixed) {
      bool found = false;
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        if (blocks_[b].name == name) {
          active_[b] = false;
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown parameter block '" + name + "'");
    }
    log_scale_.assign(blocks_.size(), 0.0);
    batch_accept_.assign(blocks_.size(), 0);
    post_proposed_.assign(blocks_.size(), 0);
    post_accepted_.assign(blocks_.size(), 0);
    term_scratch_.assign(T, 0.0);
    trend_scratch_.assign(T, 0.0);
    rebuild();
  }

  // -- accessors ------------------------------------------------------------
  const ParameterSet& theta() const { return theta_; }
  const RegimeSequence& regimes() const { return R_; }
  const ModelSpec& spec() const { return spec_; }
  const std::vector<ScalarSlot>& blocks() const { return blocks_; }
  const std::vector<double>& log_scales() const { return log_scale_; }
  long batch_index() const { return batch_index_; }
  double temperature() const { return config_.temperature; }
  std::mt19937_64& rng() { return rng_; }

  double loglik() const { return loglik_.value(); }
  /// log P(S | theta) when conditioning on support, else 0.
  double log_support() const { return log_support_; }
  double log_post() const { return tempered(loglik_) + path_lp_ + prior_lp_ + support_weight(log_support_); }

  /// Log-posterior recomputed from scratch through the reference evaluators.
  double fresh_log_post() const {
    const auto trend = observed_trend_from(theta_.gamma);
    const double ll = complete_data_loglik(x_, theta_, R_, spec_, trend);
    LogLik l;
    l.add(ll);
    return tempered(l) + regime_path_logprob(R_, theta_.P) + log_prior(theta_, spec_, prior_) +
           support_weight(config_.condition_on_support ? log_support_probability(theta_) : 0.0);
  }

  /// log P(S | theta): probability under p(R | theta) that every x_t lies in the support of R_t.
  double log_support_probability(const ParameterSet& th) const {
    const int N = static_cast<int>(regimes_.size());
    std::vector<double> alpha(static_cast<std::size_t>(N), 0.0), next(static_cast<std::size_t>(N));
    alpha[0] = 1.0;
    double total = 0.0;
    for (std::size_t t = 1; t < x_.size(); ++t) {
      double c = 0.0;
      for (int j = 0; j < N; ++j) {
        const auto& reg = regimes_[static_cast<std::size_t>(j)];
        double v = 0.0;
        if (in_support(reg, th, x_[t])) {
          for (int i = 0; i < N; ++i) v += alpha[static_cast<std::size_t>(i)] * th.P(i, j);
        }
        next[static_cast<std::size_t>(j)] = v;
        c += v;
      }
      if (!(c > 0.0)) return kNegInf;
      total += std::log(c);
      for (int j = 0; j < N; ++j) alpha[static_cast<std::size_t>(j)] = next[static_cast<std::size_t>(j)] / c;
    }
    return total;
  }

  void set_log_scale(std::size_t block, double v) { log_scale_[block] = clamp_scale(v); }
  void set_adapting(bool on) { adapting_ = on; }
  void set_recording(bool on) { recording_ = on; }

  BlockStats block_stats(std::size_t b) const {
    return {blocks_[b].name, log_scale_[b], post_proposed_[b], post_accepted_[b]};
  }
  double regime_acceptance() const {
    return regime_proposed_ > 0 ? static_cast<double>(regime_accepted_) / static_cast<double>(regime_proposed_) : 0.0;
  }

  // -- kernels --------------------------------------------------------------

  /// Draws each transition row from Dirichlet(counts + 1). Under support conditioning the draw
  /// is an independence proposal corrected by P(S | theta)^(beta - 1).
  void gibbs_transition_rows() {
    const int N = static_cast<int>(regimes_.size());
    const Eigen::MatrixXd old_P = theta_.P;
    for (int i = 0; i < N; ++i) {
      double sum = 0.0;
      for (int j = 0; j < N; ++j) {
        std::gamma_distribution<double> g(static_cast<double>(counts_(i, j)) + 1.0, 1.0);
        const double v = g(rng_);
        theta_.P(i, j) = v;
        sum += v;
      }
      theta_.P.row(i) /= sum;
    }
    if (support_active()) {
      const double new_support = log_support_probability(theta_);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      const double delta = support_weight(new_support) - support_weight(log_support_);
      if (std::log(unif(rng_)) < delta) {
        log_support_ = new_support;
      } else {
        theta_.P = old_P;
      }
    }
    path_lp_ = path_logprob_from_counts();
    prior_lp_ = log_prior(theta_, spec_, prior_);
  }

  /// Uniform single-site proposals at ceil(fraction * (T-1)) indices drawn with replacement from 2..T.
  void update_regime_indices() {
    const int N = static_cast<int>(regimes_.size());
    const auto T = static_cast<long>(x_.size());
    if (N < 2 || T < 2) return;
    const long n_updates = static_cast<long>(std::ceil(config_.regime_fraction * static_cast<double>(T - 1)));
    std::uniform_int_distribution<long> pick_t(1, T - 1);
    std::uniform_int_distribution<int> pick_r(0, N - 2);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (long n = 0; n < n_updates; ++n) {
      const long t = pick_t(rng_);
      const int from = R_[static_cast<std::size_t>(t)];
      int to = pick_r(rng_);
      if (to >= from) ++to;
      const double u = unif(rng_);
      ++regime_proposed_;
      if (try_flip(t, to, u)) ++regime_accepted_;
    }
    resum_loglik();
  }

  /// Gaussian random-walk update of one scalar block. Returns true on acceptance.
  bool update_scalar_block(std::size_t b) {
    if (!active_[b]) return false;
    const auto& slot = blocks_[b];
    double& ref = slot_ref(theta_, slot, spec_);
    const double old_value = ref;
    std::normal_distribution<double> step(0.0, 1.0);
    const double proposal = old_value + std::exp(log_scale_[b]) * step(rng_);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng_);

    ref = proposal;
    const double new_prior = log_prior(theta_, spec_, prior_);
    bool accepted = false;
    if (new_prior != kNegInf) {
      const LogLik new_lik = proposed_loglik(slot, proposal - old_value);
      const double new_t = tempered(new_lik);
      double new_support = log_support_;
      if (new_t != kNegInf) {
        if (support_active() && slot.field == ScalarSlot::Field::q) new_support = log_support_probability(theta_);
        const double delta = (new_t - tempered(loglik_)) + (new_prior - prior_lp_) +
                             (support_weight(new_support) - support_weight(log_support_));
        accepted = std::log(u) < delta;
      }
      if (accepted) {
        commit_block(slot);
        loglik_ = new_lik;
        prior_lp_ = new_prior;
        log_support_ = new_support;
      }
    }
    if (!accepted) ref = old_value;
    if (accepted) ++batch_accept_[b];
    if (recording_) {
      ++post_proposed_[b];
      if (accepted) ++post_accepted_[b];
    }
    return accepted;
  }

  /// Applies one batch adjustment to every block's log proposal sd and resets counters.
  void adapt_scales() {
    ++batch_index_;
    const double delta = adaptation_step(batch_index_);
    const double denom = static_cast<double>(std::max(batch_sweeps_, 1));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const double rate = static_cast<double>(batch_accept_[b]) / denom;
      log_scale_[b] = clamp_scale(log_scale_[b] + (rate > config_.target_acceptance ? delta : -delta));
    }
    reset_batch();
  }

  /// Batch acceptance rates of the batch in progress.
  std::vector<double> batch_acceptance() const {
    std::vector<double> out(blocks_.size());
    const double denom = static_cast<double>(std::max(batch_sweeps_, 1));
    for (std::size_t b = 0; b < blocks_.size(); ++b) out[b] = static_cast<double>(batch_accept_[b]) / denom;
    return out;
  }

  void sweep() {
    if (config_.update_theta) {
      for (std::size_t b = 0; b < blocks_.size(); ++b) update_scalar_block(b);
    }
    if (config_.update_transitions) gibbs_transition_rows();
    if (config_.update_regimes) update_regime_indices();
    if (++batch_sweeps_ == config_.batch_size) {
      if (adapting_ && config_.adaptation_on) adapt_scales();
      else reset_batch();
    }
  }

  /// Rebuilds every cache from theta and R.
  void rebuild() {
    const auto T = x_.size();
    const int N = static_cast<int>(regimes_.size());
    trend_ = observed_trend_from(theta_.gamma);
    occ_.assign(static_cast<std::size_t>(spec_.n_base), OccurrenceSet(T));
    prev_.assign(T, -1);
    std::vector<long> last(static_cast<std::size_t>(spec_.n_base), -1);
    for (std::size_t t = 0; t < T; ++t) {
      const int r = R_[t];
      if (r >= N) throw UsageError("Chain: regime index out of range");
      if (r < spec_.n_base) {
        occ_[static_cast<std::size_t>(r)].set(t);
        prev_[t] = last[static_cast<std::size_t>(r)];
        last[static_cast<std::size_t>(r)] = static_cast<long>(t);
      }
    }
    term_.assign(T, 0.0);
    loglik_ = {};
    for (std::size_t t = 0; t < T; ++t) {
      term_[t] = term_at(t, R_[t], prev_[t], trend_, theta_);
      loglik_.add(term_[t]);
    }
    counts_ = Eigen::MatrixXi::Zero(N, N);
    for (std::size_t t = 1; t < T; ++t) counts_(R_[t - 1], R_[t]) += 1;
    path_lp_ = path_logprob_from_counts();
    prior_lp_ = log_prior(theta_, spec_, prior_);
    log_support_ = config_.condition_on_support ? log_support_probability(theta_) : 0.0;
  }

  const Eigen::MatrixXi& transition_counts() const { return counts_; }

 private:
  double clamp_scale(double v) const { return std::clamp(v, -config_.scale_bound, config_.scale_bound); }

  void reset_batch() {
    std::fill(batch_accept_.begin(), batch_accept_.end(), 0);
    batch_sweeps_ = 0;
  }

  double tempered(const LogLik& l) const {
    if (l.n_inf > 0 && config_.condition_on_support) return kNegInf;
    if (config_.temperature == 0.0) return 0.0;
    if (l.n_inf > 0) return kNegInf;
    return config_.temperature * l.finite;
  }

  bool support_active() const { return config_.condition_on_support && config_.temperature < 1.0; }

  double support_weight(double log_support) const {
    return config_.condition_on_support ? (config_.temperature - 1.0) * log_support : 0.0;
  }

  static bool in_support(const RegimeInfo& reg, const ParameterSet& th, double x) {
    if (reg.kind == RegimeKind::base) return true;
    const auto& p = th.shifted(reg);
    return reg.kind == RegimeKind::drop ? x < p.q : x > p.q;
  }

  std::vector<double> observed_trend_from(const Eigen::VectorXd& gamma) const {
    std::vector<double> trend(x_.size());
    Eigen::Map<Eigen::VectorXd>(trend.data(), static_cast<Eigen::Index>(trend.size())) = Zobs_ * gamma;
    return trend;
  }

  double path_logprob_from_counts() const {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < counts_.rows(); ++i) {
      for (Eigen::Index j = 0; j < counts_.cols(); ++j) {
        if (counts_(i, j) == 0) continue;
        const double p = theta_.P(i, j);
        if (!(p > 0.0)) return kNegInf;
        lp += counts_(i, j) * std::log(p);
      }
    }
    return lp;
  }

  double base_term(std::size_t t, long prev, const RegimeInfo& reg, const std::vector<double>& trend,
                   const ParameterSet& th) const {
    if (prev < 0) return 0.0;
    const auto& b = th.base[static_cast<std::size_t>(reg.slot)];
    const int k = static_cast<int>(static_cast<long>(t) - prev);
    const double phik = k == 1 ? b.phi : std::pow(b.phi, k);
    const double mean = trend[t] + phik * (x_[static_cast<std::size_t>(prev)] - trend[static_cast<std::size_t>(prev)]);
    const double var = b.sigma2 * (k == 1 ? 1.0 : ar1_gap_variance_factor(b.phi, k));
    return normal_logpdf(x_[t], mean, var);
  }

  double term_at(std::size_t t, int r, long prev, const std::vector<double>& trend, const ParameterSet& th) const {
    const auto& reg = regimes_[static_cast<std::size_t>(r)];
    if (reg.kind == RegimeKind::base) return base_term(t, prev, reg, trend, th);
    return shifted_logdensity(reg, th.shifted(reg), x_[t]);
  }

  bool block_touches(const ScalarSlot& slot, int r) const {
    if (slot.field == ScalarSlot::Field::gamma) return r < spec_.n_base;
    return r == slot.regime;
  }

  /// Log-likelihood after the proposal already written into theta_. Fills term_scratch_.
  LogLik proposed_loglik(const ScalarSlot& slot, double delta) {
    const auto T = x_.size();
    const std::vector<double>* trend = &trend_;
    if (slot.field == ScalarSlot::Field::gamma) {
      const auto col = Zobs_.col(slot.index);
      for (std::size_t t = 0; t < T; ++t) trend_scratch_[t] = trend_[t] + delta * col(static_cast<Eigen::Index>(t));
      trend = &trend_scratch_;
    }
    LogLik l = loglik_;
    for (std::size_t t = 0; t < T; ++t) {
      const int r = R_[t];
      if (!block_touches(slot, r)) continue;
      l.remove(term_[t]);
      term_scratch_[t] = term_at(t, r, prev_[t], *trend, theta_);
      l.add(term_scratch_[t]);
    }
    return l;
  }

  void commit_block(const ScalarSlot& slot) {
    if (slot.field == ScalarSlot::Field::gamma) std::swap(trend_, trend_scratch_);
    for (std::size_t t = 0; t < x_.size(); ++t) {
      if (block_touches(slot, R_[t])) term_[t] = term_scratch_[t];
    }
  }

  bool try_flip(long t, int to, double u) {
    const auto ts = static_cast<std::size_t>(t);
    const int from = R_[ts];
    const auto& reg_from = regimes_[static_cast<std::size_t>(from)];
    const auto& reg_to = regimes_[static_cast<std::size_t>(to)];
    const auto T = static_cast<long>(x_.size());

    // Path probability change.
    const int a = R_[ts - 1];
    double dpath = 0.0;
    const double p_in = theta_.P(a, to);
    if (!(p_in > 0.0)) return false;
    dpath += std::log(p_in) - std::log(theta_.P(a, from));
    int c = -1;
    if (t + 1 < T) {
      c = R_[ts + 1];
      const double p_out = theta_.P(to, c);
      if (!(p_out > 0.0)) return false;
      dpath += std::log(p_out) - std::log(theta_.P(from, c));
    }

    // Likelihood change: the term at t and the next visits of both regimes.
    const bool from_base = reg_from.kind == RegimeKind::base;
    const bool to_base = reg_to.kind == RegimeKind::base;
    const long next_from = from_base ? occ_[static_cast<std::size_t>(from)].next(t) : -1;
    const long prev_from = from_base ? occ_[static_cast<std::size_t>(from)].prev(t) : -1;
    const long next_to = to_base ? occ_[static_cast<std::size_t>(to)].next(t) : -1;
    const long prev_to = to_base ? occ_[static_cast<std::size_t>(to)].prev(t) : -1;

    LogLik l = loglik_;
    const double new_t = term_at(ts, to, prev_to, trend_, theta_);
    l.remove(term_[ts]);
    l.add(new_t);
    double new_nf = 0.0;
    double new_nt = 0.0;
    if (next_from >= 0) {
      new_nf = term_at(static_cast<std::size_t>(next_from), from, prev_from, trend_, theta_);
      l.remove(term_[static_cast<std::size_t>(next_from)]);
      l.add(new_nf);
    }
    if (next_to >= 0) {
      new_nt = term_at(static_cast<std::size_t>(next_to), to, t, trend_, theta_);
      l.remove(term_[static_cast<std::size_t>(next_to)]);
      l.add(new_nt);
    }
    const double new_lik = tempered(l);
    if (new_lik == kNegInf) return false;
    const double delta = (new_lik - tempered(loglik_)) + dpath;
    if (!(std::log(u) < delta)) return false;

    // Commit.
    R_.states[ts] = static_cast<std::uint8_t>(to);
    if (from_base) occ_[static_cast<std::size_t>(from)].reset(ts);
    if (to_base) {
      occ_[static_cast<std::size_t>(to)].set(ts);
      prev_[ts] = prev_to;
    } else {
      prev_[ts] = -1;
    }
    term_[ts] = new_t;
    if (next_from >= 0) {
      prev_[static_cast<std::size_t>(next_from)] = prev_from;
      term_[static_cast<std::size_t>(next_from)] = new_nf;
    }
    if (next_to >= 0) {
      prev_[static_cast<std::size_t>(next_to)] = t;
      term_[static_cast<std::size_t>(next_to)] = new_nt;
    }
    counts_(a, from) -= 1;
    counts_(a, to) += 1;
    if (c >= 0) {
      counts_(from, c) -= 1;
      counts_(to, c) += 1;
    }
    path_lp_ += dpath;
    loglik_ = l;
    return true;
  }

  /// Re-sums cached terms so incremental updates do not accumulate rounding drift.
  void resum_loglik() {
    loglik_ = {};
    for (double v : term_) loglik_.add(v);
    path_lp_ = path_logprob_from_counts();
  }

  ModelSpec spec_;
  std::vector<RegimeInfo> regimes_;
  std::vector<double> x_;
  Eigen::MatrixXd Zobs_;
  PriorConfig prior_;
  RunConfig config_;
  ParameterSet theta_;
  RegimeSequence R_;
  std::mt19937_64 rng_;

  std::vector<ScalarSlot> blocks_;
  std::vector<bool> active_;
  std::vector<double> log_scale_;
  std::vector<int> batch_accept_;
  int batch_sweeps_ = 0;
  long batch_index_ = 0;
  bool adapting_ = true;
  bool recording_ = false;
  std::vector<long> post_proposed_;
  std::vector<long> post_accepted_;
  long regime_proposed_ = 0;
  long regime_accepted_ = 0;

  std::vector<double> trend_;
  std::vector<double> trend_scratch_;
  std::vector<long> prev_;
  std::vector<double> term_;
  std::vector<double> term_scratch_;
  std::vector<OccurrenceSet> occ_;
  Eigen::MatrixXi counts_;
  LogLik loglik_;
  double path_lp_ = 0.0;
  double prior_lp_ = 0.0;
  double log_support_ = 0.0;
};

// ---------------------------------------------------------------------------
// Running chains

struct Draw {
  long sweep = 0;
  std::vector<double> values;  // flatten() order
  double log_post = 0.0;
  double log_lik = 0.0;        // untempered log p(x | theta, R)
  double log_support = 0.0;    // log P(S | theta) under support conditioning
};

struct ChainResult {
  std::vector<Draw> draws;
  std::vector<RegimeSequence> regimes;
  std::vector<BlockStats> blocks;
  double regime_acceptance = 0.0;
  double final_cache_error = 0.0;  // |cached - fresh| log-posterior at the end of the run
};

struct PosteriorStore {
  ModelSpec spec;
  int n_gamma = 0;
  std::vector<std::string> names;
  std::vector<ChainResult> chains;

  std::size_t draw_count() const {
    std::size_t n = 0;
    for (const auto& c : chains) n += c.draws.size();
    return n;
  }
};

inline std::uint64_t chain_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Starting state with finite log-posterior, falling back to an all-base path.
inline InitialState finite_initial_state(const ModelSpec& spec, std::span<const double> x,
                                         const DesignMatrix& design, const PriorConfig& prior,
                                         const RunConfig& config) {
  InitialState init = initial_state(spec, x, design, prior);
  for (int attempt = 0; attempt <= config.init_retries; ++attempt) {
    Chain probe(spec, x, design, prior, init, config, 0);
    if (std::isfinite(probe.log_post())) return init;
    // Drop the offending assignments: move any zero-density point back to base regime 1.
    const auto regimes = spec.regimes();
    for (std::size_t t = 1; t < x.size(); ++t) {
      const auto& reg = regimes[init.R[t]];
      if (reg.kind != RegimeKind::base && shifted_logdensity(reg, init.theta.shifted(reg), x[t]) == kNegInf) {
        init.R.states[t] = 0;
      }
    }
    if (attempt == config.init_retries - 1) init.R = RegimeSequence::constant(x.size());
  }
  throw InitializationError("could not find a starting point with finite log-posterior");
}

/// Runs one chain. `chain_index` selects an independent random stream.
inline ChainResult run_chain(const RunConfig& config, const ModelSpec& spec, std::span<const double> x,
                             const DesignMatrix& design, const PriorConfig& prior, int chain_index = 0,
                             std::optional<InitialState> start = std::nullopt) {
  config.validate();
  if (x.size() < 10) throw UsageError("run_chain needs at least 10 observations");
  InitialState init = start ? std::move(*start) : finite_initial_state(spec, x, design, prior, config);
  Chain chain(spec, x, design, prior, std::move(init), config,
              chain_seed(config.seed, static_cast<std::uint64_t>(chain_index)));
  if (!std::isfinite(chain.log_post())) throw InitializationError("initial log-posterior is not finite");

  ChainResult result;
  chain.set_adapting(true);
  for (long s = 1; s <= config.n_sweeps; ++s) {
    if (s == config.burn_in + 1) {
      chain.set_adapting(false);
      chain.set_recording(true);
    }
    chain.sweep();
    if (s > config.burn_in && (s - config.burn_in) % config.thin == 0) {
      result.draws.push_back({s, flatten(chain.theta(), spec), chain.log_post(), chain.loglik(), chain.log_support()});
      result.regimes.push_back(chain.regimes());
    }
  }
  for (std::size_t b = 0; b < chain.blocks().size(); ++b) result.blocks.push_back(chain.block_stats(b));
  result.regime_acceptance = chain.regime_acceptance();
  result.final_cache_error = std::abs(chain.log_post() - chain.fresh_log_post());
  return result;
}

/// Runs config.n_chains independent chains concurrently.
inline PosteriorStore run_chains(const RunConfig& config, const ModelSpec& spec, std::span<const double> x,
                                 const DesignMatrix& design, const PriorConfig& prior) {
  config.validate();
  PosteriorStore store;
  store.spec = spec;
  store.n_gamma = static_cast<int>(design.columns());
  store.names = flat_names(spec, store.n_gamma);
  std::vector<std::future<ChainResult>> futures;
  for (int c = 0; c < config.n_chains; ++c) {
    futures.push_back(std::async(std::launch::async, [&, c] { return run_chain(config, spec, x, design, prior, c); }));
  }
  for (auto& f : futures) store.chains.push_back(f.get());
  return store;
}

}  // namespace mrs
