#pragma once

// Predictive summaries under model uncertainty: analytic 1-step model-averaged
// moments and Monte Carlo k-step trajectories, plus the log-price to simple
// returns transform consumed by the portfolio rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddnm/graph.hpp"
#include "ddnm/parallel.hpp"
#include "ddnm/random.hpp"

namespace ddnm {

struct WeightedPredictor {
  double prob = 1.0;
  SeriesPredictor predictor;
};

/// Candidate models of one series with their current probabilities.
using SeriesMixture = std::vector<WeightedPredictor>;

/// Model-averaged joint 1-step mean, variance and precision. Within-series
/// mixture moments follow the standard mixture laws; the covariance of y_j with
/// higher series averages the per-model covariance vectors over p(M_j).
inline JointMoments bma_one_step_moments(std::span<const SeriesMixture> series) {
  const int m = static_cast<int>(series.size());
  JointMoments jm;
  jm.f = Vector::Zero(m);
  jm.Q = Matrix::Zero(m, m);
  jm.cov.resize(static_cast<std::size_t>(m));
  for (int j = m - 1; j >= 0; --j) {
    const auto& mix = series[static_cast<std::size_t>(j)];
    if (mix.empty()) throw StructuralError("series " + std::to_string(j) + " has no models");
    const int w = m - j - 1;
    const Vector f_sub = jm.f.tail(w);
    const Matrix Q_sub = jm.Q.bottomRightCorner(w, w);

    std::vector<ConditionalMoments> parts;
    parts.reserve(mix.size());
    double f = 0.0;
    double total = 0.0;
    for (const auto& wp : mix) {
      parts.push_back(detail::conditional_moments(wp.predictor, j, f_sub, Q_sub));
      f += wp.prob * parts.back().f;
      total += wp.prob;
    }
    if (std::abs(total - 1.0) > 1e-9) throw StructuralError("model probabilities of series " + std::to_string(j) + " do not sum to 1");
    double q = 0.0;
    Vector cov = Vector::Zero(w);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      const double d = parts[i].f - f;
      q += mix[i].prob * (d * d + parts[i].q);
      cov += mix[i].prob * parts[i].cov;
    }
    detail::insert_moments(jm, j, f, q, cov);
  }
  jm.K = joint_precision(jm);
  return jm;
}

/// Simulated log-price trajectories, row-major over (path, horizon, series).
class PathTensor {
 public:
  PathTensor() = default;
  PathTensor(std::size_t nmc, int horizon, int m, std::uint64_t seed)
      : nmc_(nmc), horizon_(horizon), m_(m), seed_(seed), data_(nmc * static_cast<std::size_t>(horizon * m), 0.0) {}

  std::size_t nmc() const { return nmc_; }
  int horizon() const { return horizon_; }
  int series() const { return m_; }
  std::uint64_t seed() const { return seed_; }

  /// r is the 1-based step ahead.
  double& at(std::size_t path, int r, int j) { return data_[index(path, r, j)]; }
  double at(std::size_t path, int r, int j) const { return data_[index(path, r, j)]; }

  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const PathTensor&, const PathTensor&) = default;

 private:
  std::size_t index(std::size_t path, int r, int j) const {
    return (path * static_cast<std::size_t>(horizon_) + static_cast<std::size_t>(r - 1)) * static_cast<std::size_t>(m_) +
           static_cast<std::size_t>(j);
  }

  std::size_t nmc_ = 0;
  int horizon_ = 0;
  int m_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> data_;
};

/// A model available to the simulator. `state` is non-owning and must outlive the call.
struct SimulationModel {
  double prob = 1.0;
  const NormalGammaState* state = nullptr;
  DiscountPair disc;
  int lag = 0;
  std::vector<int> parents;
};

struct SimulationRequest {
  std::vector<std::vector<SimulationModel>> series;  // per series, its model mixture
  Matrix history;                                    // chronological rows x series, most recent last
  int horizon = 1;
  std::size_t nmc = 10'000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // separates independent uses of one seed
  int workers = 1;
};

/// Samples nmc joint trajectories y_{t+1:t+k}. Each path draws one model per
/// series from its mixture, then simulates r = 1..k from the conditional T
/// forecasts with the k-step priors, feeding simulated parents and own lags
/// forward. Series run m..1 within each path; every (path, series) pair owns
/// its random stream.
inline PathTensor simulate_paths(const SimulationRequest& req) {
  const int m = static_cast<int>(req.series.size());
  if (req.nmc < 2) throw ConfigError("nmc must be >= 2");
  if (req.horizon < 1) throw ConfigError("forecast horizon must be >= 1");
  if (req.history.cols() != m) throw StructuralError("history has the wrong number of series");

  struct Prepared {
    std::vector<double> cumulative;
    std::vector<const SimulationModel*> models;
    std::vector<std::vector<double>> inv_delta_pow;  // per model, 1/delta^r for r = 1..k
  };
  std::vector<Prepared> prep(static_cast<std::size_t>(m));
  Eigen::Index max_dim = 1;
  for (int j = 0; j < m; ++j) {
    auto& p = prep[static_cast<std::size_t>(j)];
    double acc = 0.0;
    for (const auto& model : req.series[static_cast<std::size_t>(j)]) {
      if (model.state == nullptr) throw StructuralError("simulation model without state");
      if (model.lag > req.history.rows()) {
        throw DataError("warm-up: series " + std::to_string(j) + " needs " + std::to_string(model.lag) +
                        " lags of history");
      }
      if (model.state->dim() != 1 + model.lag + static_cast<Eigen::Index>(model.parents.size())) {
        throw StructuralError("simulation model state dimension mismatch");
      }
      for (int pa : model.parents)
        if (pa <= j || pa >= m) throw StructuralError("invalid parent in simulation model");
      acc += model.prob;
      p.cumulative.push_back(acc);
      p.models.push_back(&model);
      std::vector<double> pw(static_cast<std::size_t>(req.horizon));
      double v = 1.0;
      for (int r = 0; r < req.horizon; ++r) {
        v /= model.disc.delta;
        pw[static_cast<std::size_t>(r)] = v;
      }
      p.inv_delta_pow.push_back(std::move(pw));
      max_dim = std::max(max_dim, model.state->dim());
    }
    if (p.models.empty()) throw StructuralError("series " + std::to_string(j) + " has no models");
    if (std::abs(acc - 1.0) > 1e-9) throw StructuralError("model probabilities of series " + std::to_string(j) + " do not sum to 1");
    p.cumulative.back() = 1.0;
  }

  PathTensor paths(req.nmc, req.horizon, m, req.seed);
  const Eigen::Index H = req.history.rows();

  parallel_for(req.nmc, req.workers, [&](std::size_t begin, std::size_t end) {
    Vector F(max_dim);
    Vector CF(max_dim);
    for (std::size_t i = begin; i < end; ++i) {
      for (int j = m - 1; j >= 0; --j) {
        const auto& p = prep[static_cast<std::size_t>(j)];
        auto rng = stream_engine(req.seed, req.stream, i, static_cast<std::uint64_t>(j));
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const std::size_t mu = static_cast<std::size_t>(
            std::upper_bound(p.cumulative.begin(), p.cumulative.end(), u) - p.cumulative.begin());
        const std::size_t pick = std::min(mu, p.models.size() - 1);
        const SimulationModel& model = *p.models[pick];
        const NormalGammaState& st = *model.state;
        const Eigen::Index dim = st.dim();
        const double dof = model.disc.beta * st.n;
        std::student_t_distribution<double> tdist(dof);

        for (int r = 1; r <= req.horizon; ++r) {
          F(0) = 1.0;
          for (int l = 1; l <= model.lag; ++l) {
            const int back = r - l;  // steps ahead of t for lag l
            F(l) = back >= 1 ? paths.at(i, back, j) : req.history(H - 1 + back, j);
          }
          for (std::size_t a = 0; a < model.parents.size(); ++a) {
            F(1 + model.lag + static_cast<Eigen::Index>(a)) = paths.at(i, r, model.parents[a]);
          }
          const auto Fv = F.head(dim);
          const double f = Fv.dot(st.m);
          CF.head(dim).noalias() = st.C.selfadjointView<Eigen::Lower>() * Fv;
          const double q = st.s + Fv.dot(CF.head(dim)) * p.inv_delta_pow[pick][static_cast<std::size_t>(r - 1)];
          paths.at(i, r, j) = f + std::sqrt(q) * tdist(rng);
        }
      }
    }
  });
  return paths;
}

/// Forecast moments on the simple-returns scale for one horizon.
struct ReturnsMoments {
  Vector f;
  Matrix Q;
  int horizon = 1;
};

/// Sample mean and unbiased covariance of a per-path vector quantity.
template <typename ValueFn>
std::pair<Vector, Matrix> sample_moments(std::size_t nmc, int m, ValueFn&& value) {
  if (nmc < 2) throw NumericalError("need at least two samples for a covariance");
  Vector mean = Vector::Zero(m);
  Vector v(m);
  for (std::size_t i = 0; i < nmc; ++i) {
    value(i, v);
    mean += v;
  }
  mean /= static_cast<double>(nmc);
  Matrix cov = Matrix::Zero(m, m);
  for (std::size_t i = 0; i < nmc; ++i) {
    value(i, v);
    v -= mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(v);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(nmc - 1);
  return {mean, cov};
}

/// return_j = exp(y_{j,t+r} - y_{j,t}) - 1 per path, i.e. the cumulative simple
/// return over r steps; moments are the sample mean and unbiased covariance.
inline ReturnsMoments returns_moments(const PathTensor& paths, int r, const Vector& current) {
  if (r < 1 || r > paths.horizon()) throw StructuralError("paths do not contain horizon " + std::to_string(r));
  if (current.size() != paths.series()) throw StructuralError("current prices have the wrong dimension");
  if (paths.nmc() < 2) throw NumericalError("insufficient Monte Carlo sample for return moments");
  const int m = paths.series();
  auto [f, Q] = sample_moments(paths.nmc(), m, [&](std::size_t i, Vector& v) {
    for (int j = 0; j < m; ++j) v(j) = std::expm1(paths.at(i, r, j) - current(j));
  });
  return {std::move(f), std::move(Q), r};
}

/// Sample mean and covariance of simulated log prices at horizon r.
inline std::pair<Vector, Matrix> path_moments(const PathTensor& paths, int r) {
  if (r < 1 || r > paths.horizon()) throw StructuralError("paths do not contain horizon " + std::to_string(r));
  const int m = paths.series();
  return sample_moments(paths.nmc(), m, [&](std::size_t i, Vector& v) {
    for (int j = 0; j < m; ++j) v(j) = paths.at(i, r, j);
  });
}

/// Empirical quantile (linear interpolation between order statistics).
inline double path_quantile(const PathTensor& paths, int r, int j, double prob) {
  std::vector<double> v(paths.nmc());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = paths.at(i, r, j);
  std::sort(v.begin(), v.end());
  const double pos = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace ddnm
