#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "ddnm/model_space.hpp"

using namespace ddnm;

namespace {

ModelSpaceSettings settings(int m, int d, int k) {
  ModelSpaceSettings s;
  s.m = m;
  s.max_lag = d;
  s.discounts.clear();
  for (int i = 0; i < k; ++i) s.discounts.push_back(DiscountPair::make(0.99 - 0.005 * i, 0.98));
  return s;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Enumerate, SmallestSpace) {
  const auto models = enumerate_models(settings(2, 0, 1));
  ASSERT_EQ(models.size(), 2u);
  ASSERT_EQ(models[0].size(), 2u);
  EXPECT_EQ(models[0][0].parent_mask, 0u);
  EXPECT_EQ(models[0][1].parents(), std::vector<int>{1});
  EXPECT_EQ(models[1].size(), 1u);
}

TEST(Enumerate, CountsMatchFormula) {
  for (auto [m, d, k] : {std::tuple{2, 0, 1}, {4, 1, 2}, {6, 2, 3}}) {
    const auto s = settings(m, d, k);
    const auto counts = count_models(s);
    const auto models = enumerate_models(s);
    std::uint64_t total = 0;
    for (int j = 0; j < m; ++j) {
      EXPECT_EQ(counts[j], (std::uint64_t{1} << (m - j - 1)) * (d + 1) * k);
      EXPECT_EQ(models[j].size(), counts[j]);
      total += counts[j];
    }
    EXPECT_EQ(total, unrestricted_model_count(m, d, k));
  }
  EXPECT_EQ(unrestricted_model_count(4, 1, 2), 60u);
  EXPECT_EQ(unrestricted_model_count(13, 2, 25), 614325u);
  EXPECT_GT(log10_joint_space_size(13, 2, 25), std::log10(7.0) + 47.0);
}

TEST(Enumerate, RestrictionsAndCapacity) {
  auto s = settings(5, 0, 1);
  s.restriction.max_parents = 1;
  EXPECT_EQ(count_models(s)[0], 5u);
  s.restriction.max_parents.reset();
  s.restriction.candidates[0] = {2, 4};
  EXPECT_EQ(count_models(s)[0], 4u);
  const auto restricted = enumerate_models(s);
  for (const auto& spec : restricted[0]) EXPECT_FALSE(spec.has_parent(1) || spec.has_parent(3));
  s.restriction.candidates[1] = {0};
  EXPECT_THROW(count_models(s), ConfigError);

  auto big = settings(13, 2, 25);
  big.max_models = 100000;
  EXPECT_THROW(enumerate_models(big), ConfigError);
}

TEST(Prior, ClosedFormValues) {
  ModelSpec last{3, 0, 0, 0};
  EXPECT_DOUBLE_EQ(model_prior(last, 0.3, 4, 0, 1), 1.0);
  ModelSpec one{0, 0b0010, 0, 0};
  EXPECT_NEAR(model_prior(one, 0.3, 4, 0, 1), 0.147, 1e-15);
}

TEST(Prior, SumsToOnePerSeries) {
  const auto s = settings(5, 2, 3);
  for (const auto& list : enumerate_models(s)) {
    double total = 0.0;
    for (const auto& spec : list) total += model_prior(spec, s.rho, s.m, s.max_lag, s.discounts.size());
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(sum(to_probabilities(log_model_priors(list, s))), 1.0, 1e-12);
  }
}

TEST(Update, PowerDiscountExample) {
  std::vector<double> lp{std::log(0.9), std::log(0.1)};
  const std::vector<double> ll{-1.3, -1.3};
  update_model_probs(lp, ll, 0.5);
  const auto p = to_probabilities(lp);
  EXPECT_NEAR(p[0], 0.75, 1e-12);
  EXPECT_NEAR(p[1], 0.25, 1e-12);
}

TEST(Update, AlphaOneIsBayes) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::normal_distribution<double> z;
  std::vector<double> prior(7), ll(7);
  for (auto& p : prior) p = u(rng);
  for (auto& l : ll) l = 3.0 * z(rng);
  const double zp = sum(prior);
  std::vector<double> lp;
  for (double& p : prior) lp.push_back(std::log(p /= zp));
  const double log_pred = update_model_probs(lp, ll, 1.0);
  double evidence = 0.0;
  for (std::size_t i = 0; i < 7; ++i) evidence += prior[i] * std::exp(ll[i]);
  EXPECT_NEAR(log_pred, std::log(evidence), 1e-12);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(std::exp(lp[i]), prior[i] * std::exp(ll[i]) / evidence, 1e-12);
}

TEST(Update, UniformStaysUniformAndEntropyGrows) {
  std::vector<double> uni(4, std::log(0.25));
  update_model_probs(uni, std::vector<double>(4, -7.0), 0.9);
  for (double x : uni) EXPECT_NEAR(std::exp(x), 0.25, 1e-15);

  const std::vector<double> start{std::log(0.7), std::log(0.2), std::log(0.1)};
  auto a1 = start, a95 = start;
  update_model_probs(a1, std::vector<double>(3, 0.4), 1.0);
  update_model_probs(a95, std::vector<double>(3, 0.4), 0.95);
  EXPECT_GT(entropy(to_probabilities(a95)), entropy(to_probabilities(a1)));
  EXPECT_GT(entropy(to_probabilities(a95)), entropy(to_probabilities(start)));
}

TEST(Update, ErrorsOnBadInput) {
  std::vector<double> lp{0.0};
  EXPECT_THROW(update_model_probs(lp, std::vector<double>{0.0}, 0.0), ConfigError);
  EXPECT_THROW(update_model_probs(lp, std::vector<double>{-INFINITY}, 1.0), NumericalError);
  EXPECT_THROW(update_model_probs(lp, std::vector<double>{0.0, 0.0}, 1.0), StructuralError);
}

TEST(Prune, BoundaryAndRenormalization) {
  const std::vector<double> a{0.6, 0.399, 0.001};
  EXPECT_EQ(prune(a, 0.001).size(), 3u);
  EXPECT_EQ(prune(a, 0.0), a);
  const auto b = prune(std::vector<double>{0.999, 0.0005, 0.0005}, 0.001);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], 1.0);
  const auto c = prune_survivors(std::vector<double>{0.3, 0.4, 0.3}, 0.5);
  EXPECT_EQ(c, std::vector<std::size_t>{1});
  EXPECT_THROW(prune(a, 1.0), ConfigError);
}

TEST(Marginals, MatchGroupByOracle) {
  const auto s = settings(4, 2, 3);
  const auto specs = enumerate_models(s)[0];
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u;
  std::vector<double> p(specs.size());
  for (auto& x : p) x = u(rng);
  const double z = sum(p);
  for (auto& x : p) x /= z;

  for (int lag = 0; lag <= 2; ++lag) {
    double oracle = 0.0;
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i].lag == lag) oracle += p[i];
    const auto dist = marginal_posterior(specs, p, s.discounts, Feature::Lag);
    EXPECT_NEAR(dist[static_cast<std::size_t>(lag)].second, oracle, 1e-14);
  }
  for (int parent = 1; parent < 4; ++parent) {
    double oracle = 0.0;
    for (std::size_t i = 0; i < specs.size(); ++i)
      if ((specs[i].parent_mask >> parent) & 1U) oracle += p[i];
    const auto dist = marginal_posterior(specs, p, s.discounts, Feature::ParentInclusion, parent);
    EXPECT_NEAR(expectation(dist), oracle, 1e-14);
  }
  double delta = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) delta += p[i] * s.discounts[specs[i].discount].delta;
  EXPECT_NEAR(expectation(marginal_posterior(specs, p, s.discounts, Feature::Delta)), delta, 1e-14);
}

TEST(Marginals, PointMassAndSymmetry) {
  const auto s = settings(2, 0, 1);
  const auto specs = enumerate_models(s)[0];
  const auto half = marginal_posterior(specs, std::vector<double>{0.5, 0.5}, s.discounts, Feature::ParentInclusion, 1);
  EXPECT_DOUBLE_EQ(expectation(half), 0.5);
  const auto point = marginal_posterior(specs, std::vector<double>{0.0, 1.0}, s.discounts, Feature::ParentCount);
  EXPECT_DOUBLE_EQ(expectation(point), 1.0);
  EXPECT_THROW(parse_feature("volatility"), StructuralError);
  EXPECT_EQ(parse_feature("lag"), Feature::Lag);
  EXPECT_THROW(marginal_posterior(specs, std::vector<double>{0.5, 0.5}, s.discounts, Feature::Alpha), StructuralError);
}

TEST(AlphaPosterior, NormalizesReplicaScores) {
  const auto p = alpha_posterior(std::vector<double>{-1000.0, -1000.0 + std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-12);
  EXPECT_NEAR(p[1], 0.75, 1e-12);
}
