#pragma once

// Triangular parental structure over the m series, regressor assembly, and
// recoupling of the decoupled univariate forecasts into joint 1-step moments.

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "ddnm/dlm.hpp"

namespace ddnm {

/// Parent sets pa(j), 0-based. Every parent of j is strictly greater than j, so
/// the last series has no parents and the graph is acyclic by construction.
class ParentalStructure {
 public:
  ParentalStructure() = default;

  explicit ParentalStructure(std::vector<std::vector<int>> parents) : parents_(std::move(parents)) {
    const int m = size();
    for (int j = 0; j < m; ++j) {
      auto& pa = parents_[j];
      std::sort(pa.begin(), pa.end());
      if (std::adjacent_find(pa.begin(), pa.end()) != pa.end()) {
        throw StructuralError("duplicate parent in pa(" + std::to_string(j) + ")");
      }
      for (int p : pa) {
        if (p <= j || p >= m) {
          throw StructuralError("parent " + std::to_string(p) + " of series " + std::to_string(j) +
                                " must lie in (" + std::to_string(j) + ", " + std::to_string(m) + ")");
        }
      }
    }
  }

  static ParentalStructure empty(int m) { return ParentalStructure(std::vector<std::vector<int>>(m)); }

  int size() const { return static_cast<int>(parents_.size()); }
  const std::vector<int>& parents(int j) const { return parents_.at(j); }

 private:
  std::vector<std::vector<int>> parents_;
};

/// Intercept and own-lag predictors x plus contemporaneous parental values y_pa.
struct Regressors {
  Vector x;
  Vector y_pa;

  Vector stacked() const {
    Vector F(x.size() + y_pa.size());
    F << x, y_pa;
    return F;
  }
};

/// x = (1, y_{t-1}, ..., y_{t-lag}) from chronological own history (most recent
/// value last); y_pa holds contemporaneous values of `parents` in increasing index order.
inline Regressors assemble_regressor(int lag, std::span<const double> own_history,
                                     std::span<const int> parents, std::span<const double> current) {
  if (lag < 0) throw StructuralError("negative TVAR lag");
  if (static_cast<std::size_t>(lag) > own_history.size()) {
    throw DataError("warm-up: lag " + std::to_string(lag) + " needs " + std::to_string(lag) +
                    " past values, have " + std::to_string(own_history.size()));
  }
  Regressors reg;
  reg.x.resize(1 + lag);
  reg.x(0) = 1.0;
  const std::size_t h = own_history.size();
  for (int i = 1; i <= lag; ++i) reg.x(i) = own_history[h - static_cast<std::size_t>(i)];
  reg.y_pa.resize(static_cast<Eigen::Index>(parents.size()));
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const int p = parents[i];
    if (p < 0 || static_cast<std::size_t>(p) >= current.size()) {
      throw StructuralError("parent index " + std::to_string(p) + " has no contemporaneous value");
    }
    reg.y_pa(static_cast<Eigen::Index>(i)) = current[static_cast<std::size_t>(p)];
  }
  return reg;
}

/// One series' ingredients for recoupling: its 1-step prior, predictors and parents.
struct SeriesPredictor {
  DlmPrior prior;
  Vector x;
  std::vector<int> parents;
};

/// Joint 1-step predictive mean f, variance Q and precision K, plus the
/// covariance vectors cov(y_j, y_{j+1:m}) produced by the backward pass.
struct JointMoments {
  Vector f;
  Matrix Q;
  Matrix K;
  std::vector<Vector> cov;
};

/// Conditional moments of y_j under one model given the moments of y_{j+1:m}.
struct ConditionalMoments {
  double f = 0.0;
  double q = 0.0;
  Vector cov;  // Q_{j+1:m} times the zero-padded parental coefficients
};

namespace detail {

inline void require_variance(double r, int j) {
  if (!(r > 2.0)) {
    throw NumericalError("forecast variance for series " + std::to_string(j) +
                         " does not exist: dof " + std::to_string(r) + " <= 2");
  }
}

/// f_sub and Q_sub are the moments of y_{j+1:m}; parents are absolute indices.
inline ConditionalMoments conditional_moments(const SeriesPredictor& sp, int j, const Vector& f_sub,
                                              const Matrix& Q_sub) {
  const auto& prior = sp.prior;
  const Eigen::Index px = sp.x.size();
  const Eigen::Index pg = static_cast<Eigen::Index>(sp.parents.size());
  if (px + pg != prior.dim()) {
    throw StructuralError("series " + std::to_string(j) + ": predictor dimension " +
                          std::to_string(px + pg) + " does not match state dimension " +
                          std::to_string(prior.dim()));
  }
  require_variance(prior.r, j);

  const Eigen::Index width = f_sub.size();
  Vector f_pa(pg);
  Matrix Q_pa(pg, pg);
  for (Eigen::Index a = 0; a < pg; ++a) {
    const Eigen::Index ia = sp.parents[a] - j - 1;
    if (ia < 0 || ia >= width) throw StructuralError("parent outside the higher-indexed block");
    f_pa(a) = f_sub(ia);
    for (Eigen::Index b = 0; b < pg; ++b) Q_pa(a, b) = Q_sub(ia, sp.parents[b] - j - 1);
  }

  const auto a_phi = prior.a.head(px);
  const auto a_gam = prior.a.tail(pg);
  const auto R_phi = prior.R.topLeftCorner(px, px);
  const auto R_gam = prior.R.bottomRightCorner(pg, pg);
  const auto R_pg = prior.R.topRightCorner(px, pg);

  const double u = f_pa.dot(R_gam * f_pa) + (R_gam * Q_pa).trace() + 2.0 * sp.x.dot(R_pg * f_pa) +
                   sp.x.dot(R_phi * sp.x);
  ConditionalMoments out;
  out.f = sp.x.dot(a_phi) + f_pa.dot(a_gam);
  out.q = (prior.s + u) * prior.r / (prior.r - 2.0) + a_gam.dot(Q_pa * a_gam);

  Vector padded = Vector::Zero(width);
  for (Eigen::Index a = 0; a < pg; ++a) padded(sp.parents[a] - j - 1) = a_gam(a);
  out.cov = Q_sub * padded;
  return out;
}

inline void insert_moments(JointMoments& jm, int j, double f, double q, const Vector& cov) {
  const int m = static_cast<int>(jm.f.size());
  jm.f(j) = f;
  jm.Q(j, j) = q;
  for (int h = 0; h < m - j - 1; ++h) {
    jm.Q(j, j + 1 + h) = cov(h);
    jm.Q(j + 1 + h, j) = cov(h);
  }
  jm.cov[static_cast<std::size_t>(j)] = cov;
}

}  // namespace detail

/// Precision K = Q^{-1} by backward block recursion over the covariance vectors,
/// without a general matrix inversion. q holds the diagonal of Q.
inline Matrix joint_precision(std::span<const double> q, std::span<const Vector> cov) {
  const int m = static_cast<int>(q.size());
  if (m == 0) return Matrix(0, 0);
  if (cov.size() != q.size()) throw StructuralError("joint_precision: need one covariance vector per series");
  Matrix K = Matrix::Zero(m, m);
  if (!(q[m - 1] > 0.0)) throw NumericalError("non-positive predictive variance for last series");
  K(m - 1, m - 1) = 1.0 / q[m - 1];
  for (int j = m - 2; j >= 0; --j) {
    const int w = m - j - 1;
    const Vector& c = cov[static_cast<std::size_t>(j)];
    if (c.size() != w) throw StructuralError("joint_precision: covariance vector length mismatch");
    const auto Ksub = K.bottomRightCorner(w, w);
    const Vector v = Ksub * c;
    const double kinv = q[j] - c.dot(v);
    if (!(kinv > 0.0)) {
      throw NumericalError("precision recursion lost positivity at series " + std::to_string(j));
    }
    const double k = 1.0 / kinv;
    // h = -k c'K_sub, H = K_sub + kinv h'h = K_sub + k v v'
    K.bottomRightCorner(w, w) += k * v * v.transpose();
    K(j, j) = k;
    K.row(j).tail(w) = -k * v.transpose();
    K.col(j).tail(w) = -k * v;
  }
  return K;
}

inline Matrix joint_precision(const JointMoments& jm) {
  const Vector diag = jm.Q.diagonal();
  return joint_precision(std::span<const double>(diag.data(), static_cast<std::size_t>(diag.size())),
                         std::span<const Vector>(jm.cov));
}

/// Analytic joint 1-step predictive mean and variance by the backward pass
/// j = m..1, followed by the precision recursion.
inline JointMoments joint_one_step_moments(std::span<const SeriesPredictor> series) {
  const int m = static_cast<int>(series.size());
  JointMoments jm;
  jm.f = Vector::Zero(m);
  jm.Q = Matrix::Zero(m, m);
  jm.cov.resize(static_cast<std::size_t>(m));
  for (int j = m - 1; j >= 0; --j) {
    const int w = m - j - 1;
    const Vector f_sub = jm.f.tail(w);
    const Matrix Q_sub = jm.Q.bottomRightCorner(w, w);
    const auto cm = detail::conditional_moments(series[static_cast<std::size_t>(j)], j, f_sub, Q_sub);
    detail::insert_moments(jm, j, cm.f, cm.q, cm.cov);
  }
  jm.K = joint_precision(jm);
  return jm;
}

/// Omega = (I - Gamma)' Lambda (I - Gamma) for strictly upper-triangular Gamma
/// and diagonal precisions Lambda.
inline Matrix implied_omega(const Matrix& gamma, const Vector& lambda) {
  const Eigen::Index m = gamma.rows();
  if (gamma.cols() != m || lambda.size() != m) throw StructuralError("implied_omega: shape mismatch");
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index c = 0; c <= i; ++c)
      if (gamma(i, c) != 0.0) throw StructuralError("implied_omega: Gamma must be strictly upper triangular");
  const Matrix IminusG = Matrix::Identity(m, m) - gamma;
  return IminusG.transpose() * lambda.asDiagonal() * IminusG;
}

}  // namespace ddnm
