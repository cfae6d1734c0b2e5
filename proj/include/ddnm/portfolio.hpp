#pragma once

// Mean-variance allocation rules on forecast return moments and the running
// performance measures of a rebalanced portfolio.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddnm/error.hpp"

namespace ddnm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Rule { Target, Constrained, Neutral };

inline const char* rule_name(Rule r) {
  switch (r) {
    case Rule::Target: return "target";
    case Rule::Constrained: return "constrained";
    case Rule::Neutral: return "neutral";
  }
  return "?";
}

struct PortfolioWeights {
  Vector w;
  Rule rule = Rule::Target;
  double target = 0.0;
  bool regularized = false;   // Q was singular and received a diagonal ridge
  double kkt_residual = 0.0;  // stationarity residual of the returned solution
};

namespace detail {

struct Factored {
  Matrix Q;
  Eigen::LLT<Matrix> llt;
  bool regularized = false;
};

/// Cholesky of Q; a PSD-but-singular Q gets 1e-10 * trace(Q)/m on the diagonal.
inline Factored factor_covariance(const Matrix& Q) {
  const Eigen::Index m = Q.rows();
  if (Q.cols() != m || m == 0) throw StructuralError("covariance matrix must be square and nonempty");
  Factored fx{Q, Eigen::LLT<Matrix>(Q), false};
  if (fx.llt.info() == Eigen::Success) {
    const Vector d = fx.llt.matrixLLT().diagonal();
    const double lo = d.minCoeff();
    const double hi = d.maxCoeff();
    if (lo > 0.0 && lo * lo > 1e-14 * hi * hi) return fx;
  }
  const double ridge = 1e-10 * Q.trace() / static_cast<double>(m);
  fx.Q = Q;
  fx.Q.diagonal().array() += ridge;
  fx.llt.compute(fx.Q);
  fx.regularized = true;
  if (fx.llt.info() != Eigen::Success || !(ridge > 0.0)) {
    throw NumericalError("forecast covariance matrix is not positive definite");
  }
  return fx;
}

/// Minimizes w'Qw subject to A w = b using K = Q^{-1}: w = K A' (A K A')^+ b.
/// Redundant but consistent constraints are tolerated; inconsistent ones throw.
inline Vector equality_min_variance(const Factored& fx, const Matrix& A_in, const Vector& b_in, const char* what) {
  // Rows are equilibrated first; f and benchmark covariances differ in scale by orders of magnitude.
  Matrix A = A_in;
  Vector b = b_in;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double nrm = A.row(i).norm();
    if (nrm > 0.0) {
      A.row(i) /= nrm;
      b(i) /= nrm;
    }
  }
  const Matrix KAt = fx.llt.solve(A.transpose());
  const Matrix G = A * KAt;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(G);
  cod.setThreshold(1e-12);
  const Vector lambda = cod.solve(b);
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if ((G * lambda - b).cwiseAbs().maxCoeff() > 1e-9 * scale || !lambda.allFinite()) {
    throw NumericalError(std::string("degenerate constraint set for the ") + what +
                         " portfolio: the constraint vectors are linearly dependent and inconsistent");
  }
  return KAt * lambda;
}

}  // namespace detail

/// Rule 1: minimum variance subject to w'f = r and w'1 = 1.
inline PortfolioWeights target_portfolio(const Vector& f, const Matrix& Q, double r) {
  const Eigen::Index m = f.size();
  if (Q.rows() != m) throw StructuralError("target_portfolio: dimension mismatch");
  const auto fx = detail::factor_covariance(Q);
  Matrix A(2, m);
  A.row(0).setOnes();
  A.row(1) = f.transpose();
  const Vector b = (Vector(2) << 1.0, r).finished();
  PortfolioWeights pw;
  pw.w = detail::equality_min_variance(fx, A, b, "target");
  pw.rule = Rule::Target;
  pw.target = r;
  pw.regularized = fx.regularized;
  return pw;
}

/// Rule 3: rule 1 plus zero forecast covariance with a benchmark, aiming at a
/// return that exceeds the benchmark forecast s_bench by r.
inline PortfolioWeights benchmark_neutral_portfolio(const Vector& f, const Matrix& Q, const Vector& q_bench,
                                                    double s_bench, double r) {
  const Eigen::Index m = f.size();
  if (Q.rows() != m || q_bench.size() != m) throw StructuralError("benchmark_neutral_portfolio: dimension mismatch");
  const auto fx = detail::factor_covariance(Q);
  Matrix A(3, m);
  A.row(0).setOnes();
  A.row(1) = f.transpose();
  A.row(2) = q_bench.transpose();
  const Vector b = (Vector(3) << 1.0, r + s_bench, 0.0).finished();
  PortfolioWeights pw;
  pw.w = detail::equality_min_variance(fx, A, b, "benchmark-neutral");
  pw.rule = Rule::Neutral;
  pw.target = r;
  pw.regularized = fx.regularized;
  return pw;
}

namespace detail {

/// Orthonormal basis of the null space of A (columns), by SVD with rank cut.
inline Matrix null_space(const Matrix& A) {
  const Eigen::Index n = A.cols();
  if (n == 0) return Matrix(0, 0);
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double tol = 1e-12 * std::max<double>(1.0, sv.size() ? sv(0) : 0.0) * static_cast<double>(std::max(A.rows(), n));
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

}  // namespace detail

/// Rule 2: rule 1 plus w >= 0, by a primal active-set method. Starts from the
/// rule-1 solution when it is already long-only, else from a feasible two-asset
/// vertex. Working-set ties are broken by the lowest index.
inline PortfolioWeights constrained_target_portfolio(const Vector& f, const Matrix& Q, double r) {
  const Eigen::Index m = f.size();
  if (Q.rows() != m || m == 0) throw StructuralError("constrained_target_portfolio: dimension mismatch");
  Eigen::Index lo = 0;
  Eigen::Index hi = 0;
  for (Eigen::Index i = 1; i < m; ++i) {
    if (f(i) < f(lo)) lo = i;
    if (f(i) > f(hi)) hi = i;
  }
  const double span_tol = 1e-12 * std::max(1.0, f.cwiseAbs().maxCoeff());
  if (r < f(lo) - span_tol || r > f(hi) + span_tol) {
    throw NumericalError("infeasible long-only target " + std::to_string(r) + ": attainable returns are [" +
                         std::to_string(f(lo)) + ", " + std::to_string(f(hi)) + "]");
  }

  const auto fx = detail::factor_covariance(Q);
  const Matrix& Qr = fx.Q;
  Matrix A(2, m);
  A.row(0).setOnes();
  A.row(1) = f.transpose();

  PortfolioWeights pw;
  pw.rule = Rule::Constrained;
  pw.target = r;
  pw.regularized = fx.regularized;

  Vector w = Vector::Zero(m);
  bool warm = false;
  try {
    const Vector w1 = target_portfolio(f, Q, r).w;
    if (w1.minCoeff() >= 0.0) {
      w = w1;
      warm = true;
    }
  } catch (const NumericalError&) {
  }
  if (!warm) {
    if (std::abs(r - f(lo)) <= span_tol) {
      w(lo) = 1.0;
    } else if (std::abs(r - f(hi)) <= span_tol) {
      w(hi) = 1.0;
    } else {
      w(lo) = (f(hi) - r) / (f(hi) - f(lo));
      w(hi) = 1.0 - w(lo);
    }
  }

  std::vector<bool> active(static_cast<std::size_t>(m), false);
  for (Eigen::Index i = 0; i < m; ++i) active[static_cast<std::size_t>(i)] = (w(i) == 0.0);

  const double scale = std::max(1.0, Qr.cwiseAbs().maxCoeff());
  const int max_iter = 100 * static_cast<int>(m) + 100;
  bool converged = false;
  Vector bound_mult = Vector::Zero(m);
  Vector eq_mult = Vector::Zero(2);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < m; ++i)
      if (!active[static_cast<std::size_t>(i)]) free.push_back(i);
    const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
    const Vector g = Qr * w;

    Matrix AF(2, nf);
    Matrix QFF(nf, nf);
    Vector gF(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      AF.col(a) = A.col(free[a]);
      gF(a) = g(free[a]);
      for (Eigen::Index b = 0; b < nf; ++b) QFF(a, b) = Qr(free[a], free[b]);
    }
    Vector pF = Vector::Zero(nf);
    const Matrix Z = detail::null_space(AF);
    if (Z.cols() > 0) {
      const Matrix H = Z.transpose() * QFF * Z;
      pF = -Z * H.ldlt().solve(Z.transpose() * gF);
    }

    if (pF.cwiseAbs().maxCoeff() <= 1e-13 * std::max(1.0, w.cwiseAbs().maxCoeff()) || nf == 0) {
      // Multipliers: g = A' nu + mu with mu_i = 0 off the working set.
      eq_mult = nf > 0 ? Vector(AF.transpose().completeOrthogonalDecomposition().solve(gF)) : Vector::Zero(2);
      bound_mult = g - A.transpose() * eq_mult;
      Eigen::Index leave = -1;
      double most_negative = -1e-12 * scale;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        if (bound_mult(i) < most_negative) {
          most_negative = bound_mult(i);
          leave = i;
        }
      }
      if (leave < 0) {
        converged = true;
        break;
      }
      active[static_cast<std::size_t>(leave)] = false;
      continue;
    }

    double step = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index a = 0; a < nf; ++a) {
      if (pF(a) < 0.0) {
        const double ratio = -w(free[a]) / pF(a);
        if (ratio < step) {
          step = ratio;
          blocking = free[a];
        }
      }
    }
    for (Eigen::Index a = 0; a < nf; ++a) w(free[a]) += step * pF(a);
    if (blocking >= 0) {
      w(blocking) = 0.0;
      active[static_cast<std::size_t>(blocking)] = true;
    }
  }
  if (!converged) throw NumericalError("long-only portfolio active-set iteration did not converge");

  for (Eigen::Index i = 0; i < m; ++i) {
    if (active[static_cast<std::size_t>(i)]) {
      w(i) = 0.0;
      bound_mult(i) = std::max(bound_mult(i), 0.0);
    } else {
      bound_mult(i) = 0.0;
    }
  }
  pw.w = w;
  pw.kkt_residual = (Qr * w - A.transpose() * eq_mult - bound_mult).cwiseAbs().maxCoeff();
  return pw;
}

/// One rebalance period's measures plus running aggregates over periods 1..t.
struct PerformanceRecord {
  double realized = 0.0;           // RR_t
  double projected_risk = 0.0;     // PR_t
  double projected_sharpe = 0.0;   // PSR_t, NaN when PR_t = 0
  double cumulative = 1.0;         // CR_t
  double mean_realized = 0.0;      // MRR_t
  double risk = 0.0;               // R_t, sample standard deviation of RR_{1:t}
  double sharpe = 0.0;             // SR_t = MRR_t / R_t, NaN when R_t = 0
  double sharpe_annualized = 0.0;  // SR_t * sqrt(periods per year)
  bool sharpe_defined = false;
};

/// Running CR, MRR, R and SR over a sequence of rebalance periods.
class PerformanceTracker {
 public:
  explicit PerformanceTracker(double periods_per_year = 252.0) : periods_per_year_(periods_per_year) {}

  PerformanceRecord evaluate_period(const Vector& w, const Vector& f, const Matrix& Q, const Vector& realized_returns) {
    if (w.size() != f.size() || w.size() != realized_returns.size() || Q.rows() != w.size()) {
      throw StructuralError("evaluate_period: dimension mismatch");
    }
    PerformanceRecord rec;
    rec.realized = w.dot(realized_returns);
    rec.projected_risk = std::sqrt(std::max(0.0, w.dot(Q * w)));
    const double expected = w.dot(f);
    if (rec.projected_risk > 0.0) {
      rec.projected_sharpe = expected / rec.projected_risk;
    } else if (expected != 0.0) {
      throw NumericalError("degenerate projected risk: zero variance with nonzero expected return");
    } else {
      rec.projected_sharpe = std::numeric_limits<double>::quiet_NaN();
    }
    return push(rec);
  }

  /// Records an externally realized return (e.g. a benchmark index) with no projection.
  PerformanceRecord record_realized(double rr) {
    PerformanceRecord rec;
    rec.realized = rr;
    rec.projected_sharpe = std::numeric_limits<double>::quiet_NaN();
    return push(rec);
  }

  const std::vector<double>& realized() const { return returns_; }
  double periods_per_year() const { return periods_per_year_; }

 private:
  PerformanceRecord push(PerformanceRecord rec) {
    returns_.push_back(rec.realized);
    cumulative_ *= 1.0 + rec.realized;
    const auto n = static_cast<double>(returns_.size());
    double mean = 0.0;
    for (double x : returns_) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : returns_) ss += (x - mean) * (x - mean);
    rec.cumulative = cumulative_;
    rec.mean_realized = mean;
    rec.risk = returns_.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    if (rec.risk > 0.0) {
      rec.sharpe = mean / rec.risk;
      rec.sharpe_annualized = rec.sharpe * std::sqrt(periods_per_year_);
      rec.sharpe_defined = true;
    } else {
      rec.sharpe = std::numeric_limits<double>::quiet_NaN();
      rec.sharpe_annualized = rec.sharpe;
      rec.sharpe_defined = false;
    }
    return rec;
  }

  double periods_per_year_;
  double cumulative_ = 1.0;
  std::vector<double> returns_;
};

}  // namespace ddnm
