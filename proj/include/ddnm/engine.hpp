#pragma once

// Sequential multi-model DDNM engine. Every (series, model) filter runs once per
// time step; one probability table per power-discount alpha re-weights the
// shared filters. Also builds forecast inputs and persists binary snapshots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "ddnm/forecast.hpp"
#include "ddnm/graph.hpp"
#include "ddnm/model_space.hpp"
#include "ddnm/parallel.hpp"

namespace ddnm {

struct EngineSettings {
  ModelSpaceSettings space;
  std::vector<double> alphas{1.0};
  std::vector<double> s0;  // initial observation scale per series
  double c0 = 1.0;
  double n0 = 5.0;
  int workers = 1;
};

/// Marginal posterior summaries of one series under one probability table.
struct SeriesMarginals {
  std::vector<double> lag;       // P(lag = l), l = 0..d
  std::vector<double> discount;  // P(discount pair k)
  std::vector<double> parent;    // P(i in pa(j)), i = 0..m-1 (0 for i <= j)
  double expected_parents = 0.0;

  double expected_lag() const {
    double e = 0.0;
    for (std::size_t l = 0; l < lag.size(); ++l) e += static_cast<double>(l) * lag[l];
    return e;
  }
};

class Engine {
 public:
  Engine() = default;

  explicit Engine(EngineSettings settings) : settings_(std::move(settings)) {
    const int m = settings_.space.m;
    if (settings_.alphas.empty()) throw ConfigError("alpha grid is empty");
    for (double a : settings_.alphas)
      if (!(a > 0.0 && a <= 1.0)) throw ConfigError("alpha values must lie in (0,1]");
    if (settings_.s0.empty()) settings_.s0.assign(static_cast<std::size_t>(m), 1e-4);
    if (static_cast<int>(settings_.s0.size()) != m) throw StructuralError("need one initial scale per series");
    specs_ = enumerate_models(settings_.space);
    const std::size_t A = settings_.alphas.size();
    states_.resize(static_cast<std::size_t>(m));
    log_prob_.assign(A, std::vector<std::vector<double>>(static_cast<std::size_t>(m)));
    loglik_.resize(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const auto& sp = specs_[static_cast<std::size_t>(j)];
      InitialPrior init{settings_.c0, settings_.n0, settings_.s0[static_cast<std::size_t>(j)]};
      auto& st = states_[static_cast<std::size_t>(j)];
      st.reserve(sp.size());
      for (const auto& s : sp) st.push_back(initial_state(s.state_dim(), init));
      const auto lp = log_model_priors(sp, settings_.space);
      for (std::size_t a = 0; a < A; ++a) log_prob_[a][static_cast<std::size_t>(j)] = lp;
      loglik_[static_cast<std::size_t>(j)].assign(sp.size(), 0.0);
    }
    log_marginal_.assign(A, 0.0);
    recent_ = Matrix::Zero(0, m);
    rebuild_offsets();
  }

  const EngineSettings& settings() const { return settings_; }
  int series() const { return settings_.space.m; }
  int max_lag() const { return settings_.space.max_lag; }
  std::size_t replicas() const { return settings_.alphas.size(); }
  double alpha(std::size_t a) const { return settings_.alphas.at(a); }
  const std::vector<DiscountPair>& grid() const { return settings_.space.discounts; }
  void set_workers(int w) { settings_.workers = std::max(1, w); }

  /// Observations received, including the warm-up values that only feed lags.
  std::size_t observations() const { return observed_; }
  /// Time steps that updated the filters and probabilities.
  std::size_t updates() const { return updates_; }
  bool warm() const { return recent_.rows() >= max_lag(); }

  const std::vector<ModelSpec>& specs(int j) const { return specs_.at(static_cast<std::size_t>(j)); }
  const std::vector<NormalGammaState>& states(int j) const { return states_.at(static_cast<std::size_t>(j)); }
  const std::vector<double>& log_probabilities(std::size_t a, int j) const {
    return log_prob_.at(a).at(static_cast<std::size_t>(j));
  }
  std::vector<double> probabilities(std::size_t a, int j) const { return to_probabilities(log_probabilities(a, j)); }
  /// Per-model log predictive densities of the most recent update.
  const std::vector<double>& last_log_likelihoods(int j) const { return loglik_.at(static_cast<std::size_t>(j)); }
  /// Cumulative log predictive density of each alpha replica.
  const std::vector<double>& replica_log_marginal() const { return log_marginal_; }
  std::vector<double> alpha_probabilities() const { return alpha_posterior(log_marginal_); }
  std::size_t model_count() const { return offsets_.back(); }
  /// Last max(d, 0) observations in time order, most recent last.
  const Matrix& recent() const { return recent_; }

  /// Feeds y_t. Until d values have been seen, y_t only fills the lag window.
  void observe(const Vector& y) {
    const int m = series();
    if (y.size() != m) throw DataError("observation has " + std::to_string(y.size()) + " values, expected " + std::to_string(m));
    if (!y.allFinite()) throw DataError("non-finite observation");
    if (warm()) update(y);
    push_recent(y);
    ++observed_;
  }

  /// Drops models below th in every replica; a model survives if any replica keeps it.
  void prune(double th) {
    const int m = series();
    const std::size_t A = replicas();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      const auto J = static_cast<std::size_t>(j);
      const std::size_t n = specs_[J].size();
      std::vector<char> keep(n, 0);
      std::vector<std::vector<char>> keep_in(A, std::vector<char>(n, 0));
      for (std::size_t a = 0; a < A; ++a) {
        for (auto i : prune_survivors(to_probabilities(log_prob_[a][J]), th)) {
          keep[i] = 1;
          keep_in[a][i] = 1;
        }
      }
      std::vector<ModelSpec> specs;
      std::vector<NormalGammaState> states;
      std::vector<std::vector<double>> lp(A);
      for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        specs.push_back(specs_[J][i]);
        states.push_back(std::move(states_[J][i]));
        for (std::size_t a = 0; a < A; ++a) lp[a].push_back(keep_in[a][i] ? log_prob_[a][J][i] : neg_inf);
      }
      for (std::size_t a = 0; a < A; ++a) {
        const double z = log_sum_exp(lp[a]);
        for (double& x : lp[a]) x -= z;
        log_prob_[a][J] = std::move(lp[a]);
      }
      specs_[J] = std::move(specs);
      states_[J] = std::move(states);
      loglik_[J].assign(specs_[J].size(), 0.0);
    }
    rebuild_offsets();
  }

  /// Marginals of lag, discount pair and parent inclusion for replica a.
  std::vector<SeriesMarginals> marginals(std::size_t a) const {
    const int m = series();
    std::vector<SeriesMarginals> out(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const auto J = static_cast<std::size_t>(j);
      auto& sm = out[J];
      sm.lag.assign(static_cast<std::size_t>(max_lag() + 1), 0.0);
      sm.discount.assign(grid().size(), 0.0);
      sm.parent.assign(static_cast<std::size_t>(m), 0.0);
      const auto& lp = log_prob_.at(a)[J];
      for (std::size_t i = 0; i < lp.size(); ++i) {
        const double p = std::exp(lp[i]);
        if (p == 0.0) continue;
        const auto& s = specs_[J][i];
        sm.lag[static_cast<std::size_t>(s.lag)] += p;
        sm.discount[static_cast<std::size_t>(s.discount)] += p;
        for (std::uint64_t mask = s.parent_mask; mask != 0; mask &= mask - 1) {
          sm.parent[static_cast<std::size_t>(std::countr_zero(mask))] += p;
        }
        sm.expected_parents += p * s.parent_count();
      }
    }
    return out;
  }

  /// Marginals averaged over replicas with weights p(alpha | D_t).
  std::vector<SeriesMarginals> averaged_marginals() const {
    const auto w = alpha_probabilities();
    std::vector<SeriesMarginals> acc;
    for (std::size_t a = 0; a < replicas(); ++a) {
      auto part = marginals(a);
      if (a == 0) {
        acc = part;
        for (auto& sm : acc) scale(sm, w[0]);
        continue;
      }
      for (std::size_t j = 0; j < acc.size(); ++j) {
        for (std::size_t l = 0; l < acc[j].lag.size(); ++l) acc[j].lag[l] += w[a] * part[j].lag[l];
        for (std::size_t k = 0; k < acc[j].discount.size(); ++k) acc[j].discount[k] += w[a] * part[j].discount[k];
        for (std::size_t i = 0; i < acc[j].parent.size(); ++i) acc[j].parent[i] += w[a] * part[j].parent[i];
        acc[j].expected_parents += w[a] * part[j].expected_parents;
      }
    }
    return acc;
  }

  /// Mixtures of 1-step predictors for the next time point under replica a.
  /// `min_prob` drops negligible models and renormalizes the rest.
  std::vector<SeriesMixture> bma_inputs(std::size_t a, double min_prob = 0.0) const {
    require_warm();
    const int m = series();
    std::vector<SeriesMixture> out(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const auto J = static_cast<std::size_t>(j);
      const auto& lp = log_prob_.at(a)[J];
      double total = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) {
        const double p = std::exp(lp[i]);
        if (!(p > min_prob)) continue;
        const auto& s = specs_[J][i];
        WeightedPredictor wp;
        wp.prob = p;
        wp.predictor.prior = evolve_prior(states_[J][i], grid()[static_cast<std::size_t>(s.discount)]);
        wp.predictor.x = lag_vector(j, s.lag);
        wp.predictor.parents = s.parents();
        out[J].push_back(std::move(wp));
        total += p;
      }
      for (auto& wp : out[J]) wp.prob /= total;
    }
    return out;
  }

  /// Simulation request for the next `horizon` steps under replica a. The
  /// request points into this engine's states.
  SimulationRequest simulation_request(std::size_t a, int horizon, std::size_t nmc, std::uint64_t seed,
                                       std::uint64_t stream, double min_prob = 0.0) const {
    require_warm();
    const int m = series();
    SimulationRequest req;
    req.series.resize(static_cast<std::size_t>(m));
    req.history = recent_;
    req.horizon = horizon;
    req.nmc = nmc;
    req.seed = seed;
    req.stream = stream;
    req.workers = settings_.workers;
    for (int j = 0; j < m; ++j) {
      const auto J = static_cast<std::size_t>(j);
      const auto& lp = log_prob_.at(a)[J];
      double total = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) {
        const double p = std::exp(lp[i]);
        if (!(p > min_prob)) continue;
        const auto& s = specs_[J][i];
        req.series[J].push_back(
            SimulationModel{p, &states_[J][i], grid()[static_cast<std::size_t>(s.discount)], s.lag, s.parents()});
        total += p;
      }
      for (auto& sm : req.series[J]) sm.prob /= total;
    }
    return req;
  }

  void save(std::ostream& os) const;
  static Engine load(std::istream& is);

  friend bool operator==(const Engine& x, const Engine& y) {
    if (x.specs_ != y.specs_ || x.log_prob_ != y.log_prob_ || x.log_marginal_ != y.log_marginal_ ||
        x.observed_ != y.observed_ || x.updates_ != y.updates_ || x.recent_ != y.recent_) {
      return false;
    }
    for (std::size_t j = 0; j < x.states_.size(); ++j) {
      for (std::size_t i = 0; i < x.states_[j].size(); ++i) {
        const auto& a = x.states_[j][i];
        const auto& b = y.states_[j][i];
        if (a.m != b.m || a.C != b.C || a.n != b.n || a.s != b.s) return false;
      }
    }
    return true;
  }

 private:
  static void scale(SeriesMarginals& sm, double w) {
    for (double& v : sm.lag) v *= w;
    for (double& v : sm.discount) v *= w;
    for (double& v : sm.parent) v *= w;
    sm.expected_parents *= w;
  }

  void require_warm() const {
    if (!warm()) throw DataError("warm-up: forecasts need " + std::to_string(max_lag()) + " past observations");
  }

  Vector lag_vector(int j, int lag) const {
    Vector x(1 + lag);
    x(0) = 1.0;
    const Eigen::Index H = recent_.rows();
    for (int l = 1; l <= lag; ++l) x(l) = recent_(H - l, j);
    return x;
  }

  void push_recent(const Vector& y) {
    const int d = max_lag();
    if (d == 0) return;
    if (recent_.rows() < d) {
      recent_.conservativeResize(recent_.rows() + 1, Eigen::NoChange);
    } else {
      for (Eigen::Index r = 0; r + 1 < recent_.rows(); ++r) recent_.row(r) = recent_.row(r + 1);
    }
    recent_.row(recent_.rows() - 1) = y.transpose();
  }

  void rebuild_offsets() {
    offsets_.assign(1, 0);
    for (const auto& sp : specs_) offsets_.push_back(offsets_.back() + sp.size());
  }

  void update(const Vector& y) {
    const int m = series();
    const Eigen::Index H = recent_.rows();
    const std::size_t total = offsets_.back();
    const int max_dim = 1 + max_lag() + m;
    parallel_for(total, settings_.workers, [&](std::size_t begin, std::size_t end) {
      FilterWorkspace ws;
      Vector F(max_dim);
      auto j = static_cast<std::size_t>(std::upper_bound(offsets_.begin(), offsets_.end(), begin) - offsets_.begin() - 1);
      for (std::size_t g = begin; g < end; ++g) {
        while (g >= offsets_[j + 1]) ++j;
        const std::size_t i = g - offsets_[j];
        const auto& s = specs_[j][i];
        Eigen::Index k = 0;
        F(k++) = 1.0;
        for (int l = 1; l <= s.lag; ++l) F(k++) = recent_(H - l, static_cast<Eigen::Index>(j));
        for (std::uint64_t mask = s.parent_mask; mask != 0; mask &= mask - 1) F(k++) = y(std::countr_zero(mask));
        loglik_[j][i] = filter_step(states_[j][i], grid()[static_cast<std::size_t>(s.discount)], F.head(k), y(static_cast<Eigen::Index>(j)), ws);
      }
    });
    parallel_for(replicas(), settings_.workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t a = begin; a < end; ++a) {
        double lml = 0.0;
        for (int jj = 0; jj < m; ++jj) {
          lml += update_model_probs(log_prob_[a][static_cast<std::size_t>(jj)], loglik_[static_cast<std::size_t>(jj)],
                                    settings_.alphas[a]);
        }
        log_marginal_[a] += lml;
      }
    });
    ++updates_;
  }

  EngineSettings settings_;
  std::vector<std::vector<ModelSpec>> specs_;
  std::vector<std::vector<NormalGammaState>> states_;
  std::vector<std::vector<std::vector<double>>> log_prob_;  // [alpha][series][model]
  std::vector<std::vector<double>> loglik_;
  std::vector<double> log_marginal_;
  std::vector<std::size_t> offsets_;
  Matrix recent_;
  std::size_t observed_ = 0;
  std::size_t updates_ = 0;
};

namespace detail {

inline constexpr char kSnapshotMagic[8] = {'D', 'D', 'N', 'M', 'S', 'N', 'P', '1'};

struct Writer {
  std::ostream& os;
  template <typename T>
  void pod(const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void doubles(const double* p, std::size_t n) {
    pod<std::uint64_t>(n);
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  }
  void vec(const std::vector<double>& v) { doubles(v.data(), v.size()); }
};

struct Reader {
  std::istream& is;
  template <typename T>
  T pod() {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("snapshot is truncated");
    return v;
  }
  std::vector<double> vec() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 40)) throw DataError("snapshot is corrupt");
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw DataError("snapshot is truncated");
    return v;
  }
};

}  // namespace detail

inline void Engine::save(std::ostream& os) const {
  detail::Writer w{os};
  os.write(detail::kSnapshotMagic, sizeof detail::kSnapshotMagic);
  const auto& sp = settings_.space;
  w.pod<std::int32_t>(sp.m);
  w.pod<std::int32_t>(sp.max_lag);
  w.pod<double>(sp.rho);
  w.pod<std::uint64_t>(sp.max_models);
  w.pod<std::int32_t>(sp.restriction.max_parents.value_or(-1));
  w.pod<std::uint64_t>(sp.restriction.candidates.size());
  for (const auto& [j, list] : sp.restriction.candidates) {
    w.pod<std::int32_t>(j);
    std::vector<double> l(list.begin(), list.end());
    w.vec(l);
  }
  w.pod<std::uint64_t>(sp.discounts.size());
  for (const auto& d : sp.discounts) {
    w.pod(d.delta);
    w.pod(d.beta);
  }
  w.vec(settings_.alphas);
  w.vec(settings_.s0);
  w.pod(settings_.c0);
  w.pod(settings_.n0);
  w.pod<std::uint64_t>(observed_);
  w.pod<std::uint64_t>(updates_);
  w.pod<std::int64_t>(recent_.rows());
  w.doubles(recent_.data(), static_cast<std::size_t>(recent_.size()));
  w.vec(log_marginal_);
  for (std::size_t j = 0; j < specs_.size(); ++j) {
    w.pod<std::uint64_t>(specs_[j].size());
    for (std::size_t i = 0; i < specs_[j].size(); ++i) {
      const auto& s = specs_[j][i];
      w.pod<std::uint64_t>(s.parent_mask);
      w.pod<std::int32_t>(s.lag);
      w.pod<std::int32_t>(s.discount);
      const auto& st = states_[j][i];
      w.pod(st.n);
      w.pod(st.s);
      w.doubles(st.m.data(), static_cast<std::size_t>(st.m.size()));
      w.doubles(st.C.data(), static_cast<std::size_t>(st.C.size()));
    }
    for (std::size_t a = 0; a < replicas(); ++a) w.vec(log_prob_[a][j]);
  }
  if (!os) throw DataError("failed writing snapshot");
}

inline Engine Engine::load(std::istream& is) {
  detail::Reader r{is};
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, detail::kSnapshotMagic, sizeof magic) != 0) throw DataError("not an engine snapshot");
  Engine e;
  auto& sp = e.settings_.space;
  sp.m = r.pod<std::int32_t>();
  sp.max_lag = r.pod<std::int32_t>();
  sp.rho = r.pod<double>();
  sp.max_models = r.pod<std::uint64_t>();
  if (const auto mp = r.pod<std::int32_t>(); mp >= 0) sp.restriction.max_parents = mp;
  const auto ncand = r.pod<std::uint64_t>();
  for (std::uint64_t c = 0; c < ncand; ++c) {
    const int j = r.pod<std::int32_t>();
    for (double v : r.vec()) sp.restriction.candidates[j].push_back(static_cast<int>(v));
  }
  const auto ngrid = r.pod<std::uint64_t>();
  sp.discounts.clear();
  for (std::uint64_t k = 0; k < ngrid; ++k) {
    const double d = r.pod<double>();
    const double b = r.pod<double>();
    sp.discounts.push_back(DiscountPair::make(d, b));
  }
  if (sp.m < 1 || sp.m > kMaxSeries || sp.max_lag < 0) throw DataError("snapshot is corrupt");
  e.settings_.alphas = r.vec();
  e.settings_.s0 = r.vec();
  e.settings_.c0 = r.pod<double>();
  e.settings_.n0 = r.pod<double>();
  e.observed_ = r.pod<std::uint64_t>();
  e.updates_ = r.pod<std::uint64_t>();
  const auto rows = r.pod<std::int64_t>();
  const auto rec = r.vec();
  e.recent_ = Eigen::Map<const Matrix>(rec.data(), rows, sp.m);
  e.log_marginal_ = r.vec();
  const auto m = static_cast<std::size_t>(sp.m);
  const std::size_t A = e.settings_.alphas.size();
  e.specs_.resize(m);
  e.states_.resize(m);
  e.loglik_.resize(m);
  e.log_prob_.assign(A, std::vector<std::vector<double>>(m));
  for (std::size_t j = 0; j < m; ++j) {
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      ModelSpec s;
      s.series = static_cast<int>(j);
      s.parent_mask = r.pod<std::uint64_t>();
      s.lag = r.pod<std::int32_t>();
      s.discount = r.pod<std::int32_t>();
      NormalGammaState st;
      st.n = r.pod<double>();
      st.s = r.pod<double>();
      const auto mv = r.vec();
      const auto cv = r.vec();
      const auto dim = static_cast<Eigen::Index>(mv.size());
      if (dim != s.state_dim() || cv.size() != mv.size() * mv.size()) throw DataError("snapshot is corrupt");
      st.m = Eigen::Map<const Vector>(mv.data(), dim);
      st.C = Eigen::Map<const Matrix>(cv.data(), dim, dim);
      e.specs_[j].push_back(s);
      e.states_[j].push_back(std::move(st));
    }
    for (std::size_t a = 0; a < A; ++a) {
      e.log_prob_[a][j] = r.vec();
      if (e.log_prob_[a][j].size() != n) throw DataError("snapshot is corrupt");
    }
    e.loglik_[j].assign(n, 0.0);
  }
  e.rebuild_offsets();
  return e;
}

}  // namespace ddnm
