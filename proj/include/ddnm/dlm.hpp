#pragma once

// Univariate conjugate dynamic linear model with random-walk state evolution
// and discount volatility. Every series/model pair in the engine runs one of
// these filters.

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "ddnm/error.hpp"

namespace ddnm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// State (delta) and volatility (beta) discount factors, both in (0, 1].
struct DiscountPair {
  double delta = 1.0;
  double beta = 1.0;

  static DiscountPair make(double delta, double beta) {
    if (!(delta > 0.0 && delta <= 1.0) || !(beta > 0.0 && beta <= 1.0)) {
      throw ConfigError("discount factors must lie in (0,1]: delta=" + std::to_string(delta) +
                        " beta=" + std::to_string(beta));
    }
    return {delta, beta};
  }

  friend bool operator==(const DiscountPair&, const DiscountPair&) = default;
};

/// Normal/gamma posterior (m, C, n, s) of the state vector and observation precision.
struct NormalGammaState {
  Vector m;
  Matrix C;
  double n = 1.0;
  double s = 1.0;

  Eigen::Index dim() const { return m.size(); }
};

/// Normal/gamma prior (a, R, r, s) for the next time point.
struct DlmPrior {
  Vector a;
  Matrix R;
  double r = 1.0;
  double s = 1.0;

  Eigen::Index dim() const { return a.size(); }
};

/// Student-t forecast with dof r, location f and scale q.
struct TForecast {
  double f = 0.0;
  double q = 1.0;
  double r = 1.0;

  bool has_variance() const { return r > 2.0; }
  double variance() const { return q * r / (r - 2.0); }
};

/// Settings for the t=0 normal/gamma state shared by every model.
struct InitialPrior {
  double c0 = 1.0;  // C0 = c0 * I
  double n0 = 5.0;
  double s0 = 1e-4;
};

inline NormalGammaState initial_state(Eigen::Index dim, const InitialPrior& init) {
  NormalGammaState st;
  st.m = Vector::Zero(dim);
  st.C = Matrix::Identity(dim, dim) * init.c0;
  st.n = init.n0;
  st.s = init.s0;
  return st;
}

/// Sample variance of first differences over the first `window` values, floored.
inline double initial_variance_estimate(std::span<const double> prefix, std::size_t window = 20,
                                        double floor = 1e-4) {
  const std::size_t n = std::min(window, prefix.size());
  if (n < 3) return floor;
  double mean = 0.0;
  for (std::size_t i = 1; i < n; ++i) mean += prefix[i] - prefix[i - 1];
  mean /= static_cast<double>(n - 1);
  double ss = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = prefix[i] - prefix[i - 1] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 2);
  return std::max(var, floor);
}

inline DlmPrior evolve_prior(const NormalGammaState& post, const DiscountPair& disc) {
  return DlmPrior{post.m, post.C / disc.delta, disc.beta * post.n, post.s};
}

/// Prior for time t+k standing at t: R(k) = R(k-1)/delta with R(1) = C/delta.
/// The dof does not compound in k.
inline DlmPrior k_step_prior(const NormalGammaState& post, int k, const DiscountPair& disc) {
  if (k < 1) throw StructuralError("k_step_prior requires k >= 1");
  DlmPrior prior = evolve_prior(post, disc);
  for (int step = 2; step <= k; ++step) prior.R /= disc.delta;
  return prior;
}

/// Forecast of y given the full regression vector F = (x; y_pa).
inline TForecast forecast(const DlmPrior& prior, const Vector& F) {
  if (F.size() != prior.dim()) {
    throw StructuralError("regression vector has length " + std::to_string(F.size()) +
                          " but state has dimension " + std::to_string(prior.dim()));
  }
  return {F.dot(prior.a), prior.s + F.dot(prior.R * F), prior.r};
}

/// Forecast conditional on parental values using the (phi, gamma) partition of the state.
inline TForecast conditional_forecast(const DlmPrior& prior, const Vector& x, const Vector& y_pa) {
  const Eigen::Index px = x.size();
  const Eigen::Index pg = y_pa.size();
  if (px + pg != prior.dim()) {
    throw StructuralError("dim(x)+dim(y_pa) = " + std::to_string(px + pg) +
                          " does not match state dimension " + std::to_string(prior.dim()));
  }
  const auto a_phi = prior.a.head(px);
  const auto a_gam = prior.a.tail(pg);
  const auto R_phi = prior.R.topLeftCorner(px, px);
  const auto R_gam = prior.R.bottomRightCorner(pg, pg);
  const auto R_pg = prior.R.topRightCorner(px, pg);

  TForecast fc;
  fc.f = x.dot(a_phi) + y_pa.dot(a_gam);
  fc.q = prior.s + y_pa.dot(R_gam * y_pa) + 2.0 * y_pa.dot(R_pg.transpose() * x) + x.dot(R_phi * x);
  fc.r = prior.r;
  return fc;
}

namespace detail {
inline void check_scale(double q, double s) {
  if (!(q >= 1e-12 * (1.0 + s))) {
    throw NumericalError("degenerate forecast scale q=" + std::to_string(q));
  }
}
}  // namespace detail

inline NormalGammaState update_posterior(const DlmPrior& prior, const Vector& F, double y) {
  if (F.size() != prior.dim()) throw StructuralError("update_posterior: dimension mismatch");
  const Vector RF = prior.R * F;
  const double e = y - F.dot(prior.a);
  const double q = prior.s + F.dot(RF);
  detail::check_scale(q, prior.s);
  const Vector A = RF / q;
  const double z = (prior.r + e * e / q) / (prior.r + 1.0);

  NormalGammaState post;
  post.m = prior.a + A * e;
  post.C = (prior.R - A * A.transpose() * q) * z;
  post.C = 0.5 * (post.C + post.C.transpose()).eval();
  post.n = prior.r + 1.0;
  post.s = prior.s * z;
  return post;
}

/// log of the Student-t density with dof r, location f and scale q at y.
inline double log_predictive_density(const TForecast& fc, double y) {
  const double r = fc.r;
  const double u = (y - fc.f) * (y - fc.f) / (r * fc.q);
  return std::lgamma(0.5 * (r + 1.0)) - std::lgamma(0.5 * r) -
         0.5 * std::log(r * std::numbers::pi * fc.q) - 0.5 * (r + 1.0) * std::log1p(u);
}

/// Scratch space reused across in-place filter steps.
struct FilterWorkspace {
  Vector RF;
};

/// Evolve, score and update `state` in place for observation y with regressors F.
/// Equivalent to update_posterior(evolve_prior(state, disc), F, y); returns the
/// log predictive density of y under the evolved prior.
inline double filter_step(NormalGammaState& state, const DiscountPair& disc, const Vector& F,
                          double y, FilterWorkspace& ws) {
  const Eigen::Index p = state.dim();
  if (F.size() != p) throw StructuralError("filter_step: dimension mismatch");
  const double r = disc.beta * state.n;
  ws.RF.resize(p);
  ws.RF.noalias() = state.C.selfadjointView<Eigen::Lower>() * F;
  ws.RF /= disc.delta;
  const double e = y - F.dot(state.m);
  const double q = state.s + F.dot(ws.RF);
  detail::check_scale(q, state.s);

  const double u = e * e / (r * q);
  const double logpdf = std::lgamma(0.5 * (r + 1.0)) - std::lgamma(0.5 * r) -
                        0.5 * std::log(r * std::numbers::pi * q) - 0.5 * (r + 1.0) * std::log1p(u);

  // C <- (C/delta - RF RF'/q) z, lower triangle first then mirrored.
  const double z = (r + e * e / q) / (r + 1.0);
  state.m.noalias() += ws.RF * (e / q);
  state.C *= z / disc.delta;
  state.C.selfadjointView<Eigen::Lower>().rankUpdate(ws.RF, -z / q);
  for (Eigen::Index c = 1; c < p; ++c)
    for (Eigen::Index r2 = 0; r2 < c; ++r2) state.C(r2, c) = state.C(c, r2);
  state.n = r + 1.0;
  state.s *= z;
  return logpdf;
}

}  // namespace ddnm
