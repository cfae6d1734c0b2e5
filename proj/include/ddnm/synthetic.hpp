#pragma once

// Synthetic DDNM panels with known structure, for recovery checks and demos.
//   y_jt = a_j + sum_l phi_jl y_{j,t-l} + sum_{i in pa(j)} gamma_ji y_it + nu_jt
// By default coefficients are fixed (or drift as plain random walks) and nu_jt
// is normal. With `discount` set, each series is instead drawn sequentially from
// its own discount DLM 1-step predictive, started from a tight prior on the
// stated coefficients, so states and volatility evolve as the model assumes.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "ddnm/dlm.hpp"
#include "ddnm/graph.hpp"
#include "ddnm/random.hpp"

namespace ddnm {

struct SyntheticSeries {
  std::vector<int> parents;
  std::vector<double> gamma;  // one per parent
  std::vector<double> phi;    // own-lag coefficients, lag 1 first
  double level = 0.0;         // stationary mean of y
  double sd = 0.01;
};

struct SyntheticSpec {
  std::vector<SyntheticSeries> series;
  std::size_t length = 500;
  double coef_drift_sd = 0.0;  // random-walk sd of every coefficient per step
  std::uint64_t seed = 1;
  std::optional<DiscountPair> discount;
  double state_scale = 1e-6;  // initial C = state_scale * I in discount mode
  double n0 = 200.0;          // initial dof in discount mode
};

/// T x m matrix of y values. Series are drawn m..1 so parents are available.
inline Matrix simulate_ddnm(const SyntheticSpec& spec) {
  const int m = static_cast<int>(spec.series.size());
  std::vector<std::vector<int>> pa;
  for (const auto& s : spec.series) pa.push_back(s.parents);
  const ParentalStructure structure(pa);  // validates ordering
  int max_lag = 0;
  for (const auto& s : spec.series) {
    if (s.gamma.size() != s.parents.size()) throw ConfigError("synthetic series needs one gamma per parent");
    max_lag = std::max(max_lag, static_cast<int>(s.phi.size()));
  }
  // Intercepts that put the stationary mean at `level` for the initial coefficients.
  std::vector<double> a(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    const auto& s = spec.series[static_cast<std::size_t>(j)];
    double phis = 0.0;
    for (double p : s.phi) phis += p;
    double pa_mean = 0.0;
    for (std::size_t k = 0; k < s.parents.size(); ++k) pa_mean += s.gamma[k] * spec.series[static_cast<std::size_t>(s.parents[k])].level;
    a[static_cast<std::size_t>(j)] = s.level * (1.0 - phis) - pa_mean;
  }
  auto series = spec.series;
  auto rng = stream_engine(spec.seed, 0x5E17);
  std::normal_distribution<double> z;
  const auto T = static_cast<Eigen::Index>(spec.length);
  Matrix y(T, m);
  if (spec.discount) {
    std::vector<NormalGammaState> states;
    for (int j = 0; j < m; ++j) {
      const auto& s = series[static_cast<std::size_t>(j)];
      NormalGammaState st;
      st.m.resize(static_cast<Eigen::Index>(1 + s.phi.size() + s.parents.size()));
      st.m(0) = a[static_cast<std::size_t>(j)];
      for (std::size_t l = 0; l < s.phi.size(); ++l) st.m(static_cast<Eigen::Index>(1 + l)) = s.phi[l];
      for (std::size_t k = 0; k < s.parents.size(); ++k) st.m(static_cast<Eigen::Index>(1 + s.phi.size() + k)) = s.gamma[k];
      st.C = Matrix::Identity(st.m.size(), st.m.size()) * spec.state_scale;
      st.n = spec.n0;
      st.s = s.sd * s.sd;
      states.push_back(std::move(st));
    }
    FilterWorkspace ws;
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int j = m - 1; j >= 0; --j) {
        const auto& s = series[static_cast<std::size_t>(j)];
        auto& st = states[static_cast<std::size_t>(j)];
        Vector F(st.m.size());
        F(0) = 1.0;
        for (std::size_t l = 0; l < s.phi.size(); ++l) {
          const Eigen::Index back = t - 1 - static_cast<Eigen::Index>(l);
          F(static_cast<Eigen::Index>(1 + l)) = back >= 0 ? y(back, j) : s.level;
        }
        for (std::size_t k = 0; k < s.parents.size(); ++k) F(static_cast<Eigen::Index>(1 + s.phi.size() + k)) = y(t, s.parents[k]);
        const auto fc = forecast(evolve_prior(st, *spec.discount), F);
        std::student_t_distribution<double> td(fc.r);
        y(t, j) = fc.f + std::sqrt(fc.q) * td(rng);
        filter_step(st, *spec.discount, F, y(t, j), ws);
      }
    }
    return y;
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    if (spec.coef_drift_sd > 0.0 && t > 0) {
      for (auto& s : series) {
        for (double& g : s.gamma) g += spec.coef_drift_sd * z(rng);
        for (double& p : s.phi) p += spec.coef_drift_sd * z(rng);
      }
    }
    for (int j = m - 1; j >= 0; --j) {
      const auto& s = series[static_cast<std::size_t>(j)];
      double v = a[static_cast<std::size_t>(j)];
      for (std::size_t l = 0; l < s.phi.size(); ++l) {
        const Eigen::Index back = t - 1 - static_cast<Eigen::Index>(l);
        v += s.phi[l] * (back >= 0 ? y(back, j) : s.level);
      }
      for (std::size_t k = 0; k < s.parents.size(); ++k) v += s.gamma[k] * y(t, s.parents[k]);
      y(t, j) = v + s.sd * z(rng);
    }
  }
  return y;
}

/// A sparse m-series panel: series j < m-1 gets one parent, AR(1) own dynamics,
/// log levels around zero.
inline SyntheticSpec sparse_panel_spec(int m, std::size_t length, std::uint64_t seed, double phi = 0.9,
                                       double gamma = 0.6, double sd = 0.01) {
  SyntheticSpec spec;
  spec.length = length;
  spec.seed = seed;
  auto rng = stream_engine(seed, 0xA11);
  for (int j = 0; j < m; ++j) {
    SyntheticSeries s;
    s.phi = {phi};
    s.sd = sd;
    if (j < m - 1) {
      std::uniform_int_distribution<int> pick(j + 1, m - 1);
      s.parents = {pick(rng)};
      s.gamma = {(j % 2 == 0 ? 1.0 : -1.0) * gamma};
    }
    spec.series.push_back(s);
  }
  return spec;
}

}  // namespace ddnm
