#pragma once

// Shared helpers for unit and acceptance tests: random DDNM instances,
// a compositional sampler for the joint predictive, and QP oracles.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ddnm/forecast.hpp"
#include "ddnm/graph.hpp"
#include "ddnm/portfolio.hpp"

namespace ddnm::testing {

inline Matrix random_spd(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0, double ridge = 0.1) {
  std::normal_distribution<double> z;
  Matrix A(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k) A(i, k) = z(rng);
  Matrix S = A * A.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
  return scale * S;
}

/// Random parents of series j in a model with m series, each included w.p. 1/2.
inline std::vector<int> random_parents(int j, int m, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<int> pa;
  for (int i = j + 1; i < m; ++i)
    if (coin(rng)) pa.push_back(i);
  return pa;
}

/// Random 1-step predictor for series j with given parents and lag.
inline SeriesPredictor random_predictor(int lag, const std::vector<int>& parents, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Index px = 1 + lag;
  const Eigen::Index p = px + static_cast<Eigen::Index>(parents.size());
  SeriesPredictor sp;
  sp.parents = parents;
  sp.prior.a = Vector(p);
  for (Eigen::Index i = 0; i < p; ++i) sp.prior.a(i) = 0.5 * z(rng);
  sp.prior.R = random_spd(p, rng, 0.02, 0.05);
  sp.prior.r = 8.0 + 20.0 * u(rng);
  sp.prior.s = 0.05 + 0.2 * u(rng);
  sp.x = Vector(px);
  sp.x(0) = 1.0;
  for (Eigen::Index i = 1; i < px; ++i) sp.x(i) = z(rng);
  return sp;
}

/// One draw of y_j given sampled parent values: theta | phi ~ N(a, R/(s phi)),
/// phi ~ Gamma(r/2, rate r s / 2), y = x'theta_x + y_pa'theta_pa + N(0, 1/phi).
inline double draw_series(const SeriesPredictor& sp, const Vector& y, std::mt19937_64& rng,
                          std::normal_distribution<double>& z) {
  const auto& pr = sp.prior;
  std::gamma_distribution<double> g(pr.r / 2.0, 2.0 / (pr.r * pr.s));
  const double phi = g(rng);
  const Eigen::Index p = pr.dim();
  const Eigen::LLT<Matrix> llt(pr.R / (pr.s * phi));
  Vector e(p);
  for (Eigen::Index i = 0; i < p; ++i) e(i) = z(rng);
  const Vector theta = pr.a + llt.matrixL() * e;
  const Eigen::Index px = sp.x.size();
  double v = sp.x.dot(theta.head(px));
  for (std::size_t k = 0; k < sp.parents.size(); ++k) v += theta(px + static_cast<Eigen::Index>(k)) * y(sp.parents[k]);
  return v + z(rng) / std::sqrt(phi);
}

/// draw_series with the Cholesky factor of R computed once.
class SeriesSampler {
 public:
  explicit SeriesSampler(const SeriesPredictor& sp)
      : sp_(&sp), L_(Eigen::LLT<Matrix>(sp.prior.R).matrixL()), g_(sp.prior.r / 2.0, 2.0 / (sp.prior.r * sp.prior.s)),
        e_(sp.prior.dim()) {}

  double draw(const Vector& y, std::mt19937_64& rng, std::normal_distribution<double>& z) {
    const auto& pr = sp_->prior;
    const double phi = g_(rng);
    for (Eigen::Index i = 0; i < e_.size(); ++i) e_(i) = z(rng);
    const Vector theta = pr.a + (L_ * e_) / std::sqrt(pr.s * phi);
    const Eigen::Index px = sp_->x.size();
    double v = sp_->x.dot(theta.head(px));
    for (std::size_t k = 0; k < sp_->parents.size(); ++k) v += theta(px + static_cast<Eigen::Index>(k)) * y(sp_->parents[k]);
    return v + z(rng) / std::sqrt(phi);
  }

 private:
  const SeriesPredictor* sp_;
  Matrix L_;
  std::gamma_distribution<double> g_;
  Vector e_;
};

/// Sample mean, covariance and standard errors of entries from n draws.
struct SampleMoments {
  Vector mean;
  Matrix cov;
  Vector se_mean;
  Matrix se_cov;
};

template <typename Draw>
SampleMoments sample(int m, std::size_t n, Draw&& draw) {
  Matrix ys(m, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) ys.col(static_cast<Eigen::Index>(i)) = draw();
  SampleMoments sm;
  const double nn = static_cast<double>(n);
  sm.mean = ys.rowwise().sum() / nn;
  ys.colwise() -= sm.mean;
  Matrix c2 = ys * ys.transpose();
  Matrix c4 = Matrix::Zero(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b <= a; ++b) {
      c4(a, b) = (ys.row(a).array() * ys.row(b).array()).square().sum();
      c4(b, a) = c4(a, b);
    }
  sm.cov = c2 / (nn - 1.0);
  sm.se_mean = (sm.cov.diagonal() / nn).cwiseSqrt();
  // se of a sample covariance entry: sqrt(Var(d_i d_j) / n)
  sm.se_cov = ((c4 / nn - (c2 / nn).cwiseProduct(c2 / nn)) / nn).cwiseSqrt();
  return sm;
}

/// Generic equality-constrained QP via the dense KKT system.
inline Vector kkt_solve(const Matrix& Q, const Matrix& A, const Vector& b) {
  const Eigen::Index m = Q.rows(), c = A.rows();
  Matrix K = Matrix::Zero(m + c, m + c);
  K.topLeftCorner(m, m) = 2.0 * Q;
  K.topRightCorner(m, c) = A.transpose();
  K.bottomLeftCorner(c, m) = A;
  Vector rhs = Vector::Zero(m + c);
  rhs.tail(c) = b;
  return Eigen::FullPivLU<Matrix>(K).solve(rhs).head(m);
}

/// Exhaustive active-set oracle for min w'Qw s.t. w'1 = 1, w'f = r, w >= 0.
/// Returns the best objective over all feasible free-set KKT points.
inline double exhaustive_long_only(const Vector& f, const Matrix& Q, double r, Vector* best_w = nullptr) {
  const Eigen::Index m = f.size();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask >> i & 1u) idx.push_back(i);
    const auto k = static_cast<Eigen::Index>(idx.size());
    Matrix Qs(k, k);
    Matrix A(2, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      A(0, a) = 1.0;
      A(1, a) = f(idx[a]);
      for (Eigen::Index b = 0; b < k; ++b) Qs(a, b) = Q(idx[a], idx[b]);
    }
    // Free-set subproblem; with one asset the equality system may be unsolvable.
    Matrix KK = Matrix::Zero(k + 2, k + 2);
    KK.topLeftCorner(k, k) = 2.0 * Qs;
    KK.topRightCorner(k, 2) = A.transpose();
    KK.bottomLeftCorner(2, k) = A;
    Vector rhs = Vector::Zero(k + 2);
    rhs(k) = 1.0;
    rhs(k + 1) = r;
    const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(KK);
    const Vector sol = cod.solve(rhs);
    if ((KK * sol - rhs).cwiseAbs().maxCoeff() > 1e-9) continue;
    const Vector ws = sol.head(k);
    if (ws.minCoeff() < -1e-12) continue;
    Vector w = Vector::Zero(m);
    for (Eigen::Index a = 0; a < k; ++a) w(idx[a]) = ws(a);
    const double obj = w.dot(Q * w);
    if (obj < best) {
      best = obj;
      if (best_w) *best_w = w;
    }
  }
  return best;
}

}  // namespace ddnm::testing
