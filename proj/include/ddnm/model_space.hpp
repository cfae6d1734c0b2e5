#pragma once

// Discrete per-series model sets {pa(j), TVAR lag, (delta, beta)}, their priors,
// power-discounted sequential probabilities, pruning and marginal summaries.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddnm/dlm.hpp"

namespace ddnm {

inline constexpr int kMaxSeries = 63;

/// One candidate model for one series. Parents are a bitmask over series indices.
struct ModelSpec {
  int series = 0;
  std::uint64_t parent_mask = 0;
  int lag = 0;
  int discount = 0;  // index into the discount grid

  std::vector<int> parents() const {
    std::vector<int> out;
    for (std::uint64_t mask = parent_mask; mask != 0; mask &= mask - 1) out.push_back(std::countr_zero(mask));
    return out;
  }
  int parent_count() const { return std::popcount(parent_mask); }
  bool has_parent(int i) const { return (parent_mask >> i) & 1U; }
  Eigen::Index state_dim() const { return 1 + lag + parent_count(); }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Optional limits on the parental sets considered for each series.
struct ParentRestriction {
  std::optional<int> max_parents;
  std::map<int, std::vector<int>> candidates;  // series -> allowed parents
};

struct ModelSpaceSettings {
  int m = 1;
  int max_lag = 2;
  std::vector<DiscountPair> discounts{DiscountPair{}};
  double rho = 0.3;
  ParentRestriction restriction;
  std::uint64_t max_models = 2'000'000;
};

namespace detail {

inline std::uint64_t candidate_mask(const ModelSpaceSettings& s, int j) {
  std::uint64_t mask = 0;
  for (int i = j + 1; i < s.m; ++i) mask |= std::uint64_t{1} << i;
  if (auto it = s.restriction.candidates.find(j); it != s.restriction.candidates.end()) {
    std::uint64_t allowed = 0;
    for (int i : it->second) {
      if (i <= j || i >= s.m) {
        throw ConfigError("candidate parent " + std::to_string(i) + " is not above series " + std::to_string(j));
      }
      allowed |= std::uint64_t{1} << i;
    }
    mask &= allowed;
  }
  return mask;
}

/// All submasks of `cand` obeying the size cap, in increasing numeric order.
inline std::vector<std::uint64_t> parent_sets(const ModelSpaceSettings& s, int j) {
  const std::uint64_t cand = candidate_mask(s, j);
  std::vector<std::uint64_t> sets;
  std::uint64_t sub = 0;
  do {
    if (!s.restriction.max_parents || std::popcount(sub) <= *s.restriction.max_parents) sets.push_back(sub);
    sub = (sub - cand) & cand;
  } while (sub != 0);
  return sets;
}

inline std::uint64_t count_parent_sets(const ModelSpaceSettings& s, int j) {
  const int c = std::popcount(candidate_mask(s, j));
  if (!s.restriction.max_parents) return std::uint64_t{1} << c;
  std::uint64_t total = 0;
  std::uint64_t binom = 1;  // C(c, i)
  for (int i = 0; i <= std::min(c, *s.restriction.max_parents); ++i) {
    total += binom;
    binom = binom * static_cast<std::uint64_t>(c - i) / static_cast<std::uint64_t>(i + 1);
  }
  return total;
}

inline void validate(const ModelSpaceSettings& s) {
  if (s.m < 1 || s.m > kMaxSeries) throw ConfigError("number of series must be in 1.." + std::to_string(kMaxSeries));
  if (s.max_lag < 0) throw ConfigError("max lag d must be >= 0");
  if (s.discounts.empty()) throw ConfigError("discount grid is empty");
  if (!(s.rho > 0.0 && s.rho < 1.0)) throw ConfigError("rho must lie in (0,1)");
}

}  // namespace detail

/// Number of models per series: |parent sets| * (d+1) * k.
inline std::vector<std::uint64_t> count_models(const ModelSpaceSettings& s) {
  detail::validate(s);
  std::vector<std::uint64_t> counts;
  for (int j = 0; j < s.m; ++j) {
    counts.push_back(detail::count_parent_sets(s, j) * static_cast<std::uint64_t>(s.max_lag + 1) *
                     s.discounts.size());
  }
  return counts;
}

/// (2^m - 1)(d+1)k, the unrestricted total over all series.
inline std::uint64_t unrestricted_model_count(int m, int d, std::uint64_t k) {
  return ((std::uint64_t{1} << m) - 1) * static_cast<std::uint64_t>(d + 1) * k;
}

/// log10 of the joint model-space size 2^{m(m-1)/2} (d+1)^m k^m.
inline double log10_joint_space_size(int m, int d, std::uint64_t k) {
  return 0.5 * m * (m - 1) * std::log10(2.0) + m * std::log10(d + 1.0) + m * std::log10(static_cast<double>(k));
}

/// Per-series model lists. Ordered by parent mask, then lag, then discount index.
inline std::vector<std::vector<ModelSpec>> enumerate_models(const ModelSpaceSettings& s) {
  const auto counts = count_models(s);
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total > s.max_models) {
    throw ConfigError("model space has " + std::to_string(total) + " univariate models, above the limit of " +
                      std::to_string(s.max_models) +
                      "; restrict parental sets (max_parents or candidates.<series>) or raise max_models");
  }
  std::vector<std::vector<ModelSpec>> out(static_cast<std::size_t>(s.m));
  for (int j = 0; j < s.m; ++j) {
    auto& list = out[static_cast<std::size_t>(j)];
    list.reserve(counts[static_cast<std::size_t>(j)]);
    for (std::uint64_t mask : detail::parent_sets(s, j))
      for (int lag = 0; lag <= s.max_lag; ++lag)
        for (int k = 0; k < static_cast<int>(s.discounts.size()); ++k) list.push_back({j, mask, lag, k});
  }
  return out;
}

/// Unrestricted prior rho^c (1-rho)^{m-j-c} / ((d+1) k) with j 1-based, i.e.
/// m-j-1 potential parents for 0-based series j.
inline double model_prior(const ModelSpec& spec, double rho, int m, int d, std::size_t k) {
  const int possible = m - spec.series - 1;
  const int c = spec.parent_count();
  return std::pow(rho, c) * std::pow(1.0 - rho, possible - c) / static_cast<double>(k) / (d + 1.0);
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

/// Normalized log prior over a series' model list; renormalizes under restrictions.
inline std::vector<double> log_model_priors(std::span<const ModelSpec> specs, const ModelSpaceSettings& s) {
  std::vector<double> lp;
  lp.reserve(specs.size());
  for (const auto& spec : specs)
    lp.push_back(std::log(model_prior(spec, s.rho, s.m, s.max_lag, s.discounts.size())));
  const double z = log_sum_exp(lp);
  for (double& x : lp) x -= z;
  return lp;
}

/// Power-discounted update p_new ∝ p_old^alpha * p(y | model) in log space.
/// Returns log sum_mu p~_mu p(y|mu), where p~ is the normalized p_old^alpha, i.e.
/// the series' 1-step log predictive density under the discounted weights.
inline double update_model_probs(std::vector<double>& log_prob, std::span<const double> log_lik, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("power discount alpha must lie in (0,1]");
  if (log_lik.size() != log_prob.size()) throw StructuralError("update_model_probs: size mismatch");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  double mx_prior = neg_inf;
  double mx_post = neg_inf;
  for (std::size_t i = 0; i < log_prob.size(); ++i) {
    const double lp = alpha * log_prob[i];
    if (std::isnan(log_lik[i])) throw NumericalError("non-finite model likelihood");
    log_prob[i] = lp;
    mx_prior = std::max(mx_prior, lp);
    mx_post = std::max(mx_post, lp + log_lik[i]);
  }
  if (!std::isfinite(mx_post)) throw NumericalError("all model likelihoods underflowed to zero");
  double z_prior = 0.0;
  double z_post = 0.0;
  for (std::size_t i = 0; i < log_prob.size(); ++i) {
    z_prior += std::exp(log_prob[i] - mx_prior);
    log_prob[i] += log_lik[i];
    z_post += std::exp(log_prob[i] - mx_post);
  }
  const double log_z_post = mx_post + std::log(z_post);
  for (double& x : log_prob) x -= log_z_post;
  return log_z_post - (mx_prior + std::log(z_prior));
}

inline std::vector<double> to_probabilities(std::span<const double> log_prob) {
  std::vector<double> p(log_prob.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_prob[i]);
  return p;
}

/// Indices of models whose probability is not strictly below th. The most
/// probable model (lowest index on ties) always survives.
inline std::vector<std::size_t> prune_survivors(std::span<const double> probs, double th) {
  if (!(th >= 0.0 && th < 1.0)) throw ConfigError("prune threshold must lie in [0,1)");
  std::vector<std::size_t> keep;
  std::size_t best = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
    if (!(probs[i] < th)) keep.push_back(i);
  }
  if (keep.empty() && !probs.empty()) keep.push_back(best);
  return keep;
}

/// Survivors of `prune_survivors` with probabilities renormalized to sum to 1.
inline std::vector<double> prune(std::span<const double> probs, double th) {
  const auto keep = prune_survivors(probs, th);
  std::vector<double> out;
  double z = 0.0;
  for (auto i : keep) z += probs[i];
  for (auto i : keep) out.push_back(probs[i] / z);
  return out;
}

enum class Feature { Alpha, Delta, Beta, Lag, ParentInclusion, ParentCount };

inline Feature parse_feature(const std::string& name) {
  if (name == "alpha") return Feature::Alpha;
  if (name == "delta") return Feature::Delta;
  if (name == "beta") return Feature::Beta;
  if (name == "lag") return Feature::Lag;
  if (name == "parent") return Feature::ParentInclusion;
  if (name == "parent_count") return Feature::ParentCount;
  throw StructuralError("unknown model feature '" + name + "'");
}

/// Discrete distribution as (value, probability) pairs sorted by value.
using Distribution = std::vector<std::pair<double, double>>;

/// Marginal posterior of one structural feature of a series' models by summing
/// probabilities over models sharing the feature value. `parent` is only used
/// for ParentInclusion, where the values are 0 (absent) and 1 (present).
inline Distribution marginal_posterior(std::span<const ModelSpec> specs, std::span<const double> probs,
                                       std::span<const DiscountPair> grid, Feature feature, int parent = -1) {
  if (specs.size() != probs.size()) throw StructuralError("marginal_posterior: size mismatch");
  std::map<double, double> acc;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    double value = 0.0;
    switch (feature) {
      case Feature::Delta: value = grid[static_cast<std::size_t>(s.discount)].delta; break;
      case Feature::Beta: value = grid[static_cast<std::size_t>(s.discount)].beta; break;
      case Feature::Lag: value = s.lag; break;
      case Feature::ParentCount: value = s.parent_count(); break;
      case Feature::ParentInclusion:
        if (parent <= s.series || parent >= kMaxSeries) {
          throw StructuralError("parent " + std::to_string(parent) + " cannot be a parent of series " +
                                std::to_string(s.series));
        }
        value = s.has_parent(parent) ? 1.0 : 0.0;
        break;
      case Feature::Alpha:
        throw StructuralError("alpha is a replica-level feature; use alpha_posterior");
    }
    acc[value] += probs[i];
  }
  if (feature == Feature::ParentInclusion) {
    acc.try_emplace(0.0, 0.0);
    acc.try_emplace(1.0, 0.0);
  }
  return Distribution(acc.begin(), acc.end());
}

inline double expectation(const Distribution& dist) {
  double e = 0.0;
  for (const auto& [v, p] : dist) e += v * p;
  return e;
}

/// p(alpha | D_t) ∝ p(alpha) * replica marginal likelihood, uniform prior over the grid.
inline std::vector<double> alpha_posterior(std::span<const double> replica_log_marginal) {
  std::vector<double> lp(replica_log_marginal.begin(), replica_log_marginal.end());
  const double z = log_sum_exp(lp);
  for (double& x : lp) x = std::exp(x - z);
  return lp;
}

inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace ddnm
