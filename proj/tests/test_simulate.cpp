#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cit;

namespace {

SimSetting setting(SettingKind k, std::size_t n, std::uint64_t seed = 1) {
  SimSetting s;
  s.kind = k;
  s.n = n;
  s.seed = seed;
  return s;
}

Tree stump_on(const Schema& s, int j, double c) {
  Tree t;
  t.schema = s;
  t.add_root(100, fixtures::effect_of(3.5));
  SplitRule r;
  r.covariate = j;
  r.threshold = c;
  t.split_node(0, r, 10, 50, fixtures::effect_of(2), 50, fixtures::effect_of(5));
  return t;
}

}  // namespace

TEST(Generate, TruthValues) {
  const auto het = generate(setting(SettingKind::heterogeneous, 10));
  const auto hom = generate(setting(SettingKind::homogeneous, 10));
  const Dataset rows(simulation_schema(SettingKind::heterogeneous),
                     {{0, 0}, {0, 0}, {0, 0}, {1, -1}, {0, 0}, {0, 0}}, {0, 0}, {0, 0});
  EXPECT_EQ(het.oracle.true_cate(rows, 0), 5.0);
  EXPECT_EQ(het.oracle.true_cate(rows, 1), 2.0);
  EXPECT_EQ(hom.oracle.true_cate(rows, 0), 2.0);
  EXPECT_EQ(hom.oracle.true_cate(rows, 1), 2.0);
}

TEST(Generate, Deterministic) {
  for (auto k : {SettingKind::homogeneous, SettingKind::heterogeneous, SettingKind::binary_mixed}) {
    EXPECT_TRUE(generate(setting(k, 300, 4)).data == generate(setting(k, 300, 4)).data);
    EXPECT_FALSE(generate(setting(k, 300, 4)).data == generate(setting(k, 300, 5)).data);
  }
}

TEST(Generate, CovarianceAndMoments) {
  const auto g = generate(setting(SettingKind::heterogeneous, 200000, 3));
  const auto& d = g.data;
  auto mean = [&](std::size_t j) {
    double s = 0;
    for (std::size_t i = 0; i < d.n(); ++i) s += d.x(j, i);
    return s / d.n();
  };
  auto cov = [&](std::size_t a, std::size_t b) {
    const double ma = mean(a), mb = mean(b);
    double s = 0;
    for (std::size_t i = 0; i < d.n(); ++i) s += (d.x(a, i) - ma) * (d.x(b, i) - mb);
    return s / (d.n() - 1);
  };
  EXPECT_NEAR(cov(0, 1), 0.3, 0.01);
  EXPECT_NEAR(cov(2, 5), 0.3, 0.01);
  EXPECT_NEAR(cov(3, 3), 1.0, 0.02);
  EXPECT_NEAR(mean(4), 0.0, 0.01);
  // Treated share under the logistic propensity is one half by symmetry.
  double a = 0;
  for (std::size_t i = 0; i < d.n(); ++i) a += d.a(i);
  EXPECT_NEAR(a / d.n(), 0.5, 0.01);
}

TEST(Generate, BinaryMixedShape) {
  const auto g = generate(setting(SettingKind::binary_mixed, 2000, 2));
  const auto& s = g.data.schema();
  EXPECT_EQ(s.columns[3].kind.levels.size(), 4u);
  EXPECT_EQ(s.columns[4].kind.levels.size(), 5u);
  EXPECT_EQ(s.columns[5].kind.levels.size(), 6u);
  for (std::size_t i = 0; i < g.data.n(); ++i) EXPECT_TRUE(g.data.y(i) == 0.0 || g.data.y(i) == 1.0);
}

TEST(Mse, Examples) {
  const auto g = generate(setting(SettingKind::heterogeneous, 1000, 6));
  const Tree perfect = stump_on(g.data.schema(), 3, 0.0);
  // x4 == 0 exactly has probability zero, so "x4 < 0" matches the oracle's "x4 > 0" complement.
  EXPECT_EQ(mse(perfect, g.data, g.oracle), 0.0);

  Tree constant;
  constant.add_root(4, fixtures::effect_of(3.5));
  const Dataset half(simulation_schema(SettingKind::heterogeneous),
                     {{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {1, -1, 2, -2}, {0, 0, 0, 0}, {0, 0, 0, 0}},
                     {0, 0, 0, 0}, {0, 0, 0, 0});
  EXPECT_EQ(mse(constant, half, g.oracle), 2.25);
}

TEST(Mse, MatchesRowByRow) {
  const auto g = generate(setting(SettingKind::heterogeneous, 1000, 7));
  Tree t = stump_on(g.data.schema(), 0, 0.3);
  SplitRule r;
  r.covariate = 3;
  r.threshold = 0.1;
  t.split_node(2, r, 4, 25, fixtures::effect_of(1.5), 25, fixtures::effect_of(4.5));
  double s = 0;
  for (std::size_t i = 0; i < g.data.n(); ++i) {
    const double x1 = g.data.x(0, i), x4 = g.data.x(3, i);
    const double pred = x1 < 0.3 ? 2 : (x4 < 0.1 ? 1.5 : 4.5);
    const double truth = x4 > 0 ? 5 : 2;
    s += (pred - truth) * (pred - truth);
  }
  EXPECT_NEAR(mse(t, g.data, g.oracle), s / 1000, 1e-12);
}

TEST(TreeMetrics, CorrectnessNoiseAndFirstSplit) {
  const auto het = generate(setting(SettingKind::heterogeneous, 10)).oracle;
  const auto hom = generate(setting(SettingKind::homogeneous, 10)).oracle;
  const Schema s = simulation_schema(SettingKind::heterogeneous);
  Tree root;
  root.schema = s;
  root.add_root(10, NodeEffect{});
  EXPECT_TRUE(is_correct_tree(root, hom));
  EXPECT_FALSE(is_correct_tree(root, het));
  EXPECT_EQ(noise_split_count(root, het), 0u);
  EXPECT_FALSE(correct_first_split(root, het));

  const Tree x4 = stump_on(s, 3, 0.07);
  EXPECT_TRUE(is_correct_tree(x4, het));
  EXPECT_FALSE(is_correct_tree(x4, hom));
  EXPECT_TRUE(correct_first_split(x4, het));
  EXPECT_EQ(noise_split_count(x4, hom), 1u);

  Tree x4x1 = x4;
  SplitRule r;
  r.covariate = 0;
  x4x1.split_node(1, r, 5, 25, NodeEffect{}, 25, NodeEffect{});
  EXPECT_FALSE(is_correct_tree(x4x1, het));
  EXPECT_EQ(noise_split_count(x4x1, het), 1u);
  EXPECT_TRUE(correct_first_split(x4x1, het));

  Tree twice = x4;
  r.covariate = 3;
  twice.split_node(2, r, 5, 25, NodeEffect{}, 25, NodeEffect{});
  EXPECT_FALSE(is_correct_tree(twice, het));

  const Tree x1 = stump_on(s, 0, 0.0), x2 = stump_on(s, 1, 0.0);
  EXPECT_EQ(noise_split_count(x1, het), 1u);
  EXPECT_FALSE(correct_first_split(x2, het));

  // Hand count over a five-split tree: x1, x4, x2, x6, x4.
  Tree mixed;
  mixed.schema = s;
  mixed.add_root(100, NodeEffect{});
  NodeId next = 0;
  for (int j : {0, 3, 1, 5, 3}) {
    SplitRule q;
    q.covariate = j;
    next = mixed.split_node(next, q, 5, 50, NodeEffect{}, 50, NodeEffect{}).first;
  }
  EXPECT_EQ(noise_split_count(mixed, het), 3u);
  EXPECT_EQ(noise_split_count(mixed, hom), 5u);
}

TEST(TreeMetrics, DiscretePartitionMustMatch) {
  const auto o = generate(setting(SettingKind::binary_mixed, 10)).oracle;
  const Schema s = simulation_schema(SettingKind::binary_mixed);
  auto levels = [&](std::vector<int> l, std::vector<int> r) {
    Tree t;
    t.schema = s;
    t.add_root(100, NodeEffect{});
    SplitRule q;
    q.covariate = 3;
    q.form = SplitRule::Form::levels;
    q.left_levels = std::move(l);
    q.right_levels = std::move(r);
    t.split_node(0, q, 5, 50, NodeEffect{}, 50, NodeEffect{});
    return t;
  };
  EXPECT_TRUE(is_correct_tree(levels({1, 3}, {0, 2}), o));
  EXPECT_TRUE(is_correct_tree(levels({0, 2}, {1, 3}), o));
  EXPECT_FALSE(is_correct_tree(levels({1}, {0, 2, 3}), o));
  EXPECT_TRUE(correct_first_split(levels({0, 2}, {1, 3}), o));
  EXPECT_FALSE(correct_first_split(levels({0, 1}, {2, 3}), o));
}

TEST(PairwiseSimilarity, Examples) {
  std::vector<int> one(1000, 0), halves(1000);
  for (int i = 0; i < 1000; ++i) halves[i] = i < 500 ? 0 : 1;
  EXPECT_NEAR(pairwise_similarity(one, halves), 1 - 250000.0 / 499500.0, 1e-15);
  EXPECT_NEAR(pairwise_similarity(one, halves), 0.49950, 5e-6);
  EXPECT_EQ(pairwise_similarity(halves, halves), 1.0);
  std::vector<int> relabelled(1000);
  for (int i = 0; i < 1000; ++i) relabelled[i] = 7 - 3 * halves[i];
  EXPECT_EQ(pairwise_similarity(halves, relabelled), 1.0);
  EXPECT_THROW(pairwise_similarity(std::vector<int>{1}, std::vector<int>{1}), Error);
}

TEST(PairwiseSimilarity, MatchesPairLoopAndIsSymmetric) {
  std::mt19937_64 eng(17);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t m = 2 + eng() % 300;
    const int ka = 1 + static_cast<int>(eng() % 6), kb = 1 + static_cast<int>(eng() % 6);
    std::vector<int> a(m), b(m);
    for (std::size_t i = 0; i < m; ++i) {
      a[i] = static_cast<int>(eng() % ka);
      b[i] = static_cast<int>(eng() % kb);
    }
    EXPECT_DOUBLE_EQ(pairwise_similarity(a, b), oracles::pps_pair_loop(a, b));
    EXPECT_EQ(pairwise_similarity(a, b), pairwise_similarity(b, a));
  }
}

TEST(PairwiseSimilarity, TreesOnRows) {
  const auto g = generate(setting(SettingKind::heterogeneous, 500, 8));
  const Tree a = stump_on(g.data.schema(), 3, 0.0), b = stump_on(g.data.schema(), 3, 0.0);
  EXPECT_EQ(pairwise_similarity(a, b, g.data), 1.0);
  const Tree c = stump_on(g.data.schema(), 0, 0.0);
  EXPECT_LT(pairwise_similarity(a, c, g.data), 1.0);
  EXPECT_EQ(pairwise_similarity(a, c, g.data), pairwise_similarity(c, a, g.data));
}

TEST(ParseAlgo, OptionsAndErrors) {
  const auto s = setting(SettingKind::heterogeneous, 100);
  const auto a = parse_algo("dr,prop=mis-func,scope=whole,min-node=40,lambda=2", s);
  EXPECT_EQ(a.fit.grow.estimator, EstimatorKind::dr);
  EXPECT_EQ(a.fit.grow.scope, NuisanceScope::whole);
  EXPECT_EQ(a.fit.grow.min_node, 40u);
  EXPECT_EQ(a.fit.lambda, 2.0);
  EXPECT_EQ(a.fit.grow.propensity_spec->str(), "1 + exp(x1) + exp(x2) + exp(x3) + exp(x4) + exp(x5) + exp(x6)");
  EXPECT_EQ(parse_algo("g,out=unmeasured-cov", s).fit.grow.exclude_columns, std::vector<std::string>{"x2"});
  EXPECT_FALSE(parse_algo("g", s).fit.grow.propensity_spec);
  EXPECT_THROW(parse_algo("rf", s), ConfigError);
  EXPECT_THROW(parse_algo("dr,prop=nope", s), ConfigError);
  EXPECT_THROW(parse_algo("dr,depth", s), ConfigError);
  EXPECT_THROW(parse_setting("circle"), ConfigError);
}

TEST(RunExperiment, SingleReplicateEchoesItsMetrics) {
  const auto s = setting(SettingKind::heterogeneous, 400);
  const auto algo = parse_algo("g", s);
  const auto r = run_replicate(s, algo, 9, 0);
  ASSERT_TRUE(r.ok) << r.error;
  const auto sum = run_experiment(s, algo, 1, 9);
  EXPECT_EQ(sum.mse, r.mse);
  EXPECT_EQ(sum.pps, r.pps);
  EXPECT_EQ(sum.correct_tree_prop, r.correct ? 1.0 : 0.0);
  EXPECT_EQ(*sum.correct_first_split_prop, r.first ? 1.0 : 0.0);
  EXPECT_EQ(sum.mean_noise_splits, static_cast<double>(r.noise));
  EXPECT_EQ(sum.failures, 0u);
}

TEST(RunExperiment, ThreadCountDoesNotChangeResults) {
  const auto s = setting(SettingKind::heterogeneous, 300);
  const auto algo = parse_algo("dr,scope=whole", s);
  const auto a = run_experiment(s, algo, 6, 3, 1), b = run_experiment(s, algo, 6, 3, 3);
  EXPECT_EQ(to_json(a, false).dump(), to_json(b, false).dump());
  EXPECT_THROW(run_experiment(s, algo, 0, 3), ConfigError);
}

TEST(RunExperiment, FailuresAreCounted) {
  auto s = setting(SettingKind::heterogeneous, 5);  // too small for an 80/20 fit with a propensity model
  const auto sum = run_experiment(s, parse_algo("ipw", s), 3, 1);
  EXPECT_EQ(sum.reps, 3u);
  EXPECT_EQ(sum.failures, 3u);
  ASSERT_EQ(sum.failure_messages.size(), 3u);
  EXPECT_FALSE(sum.failure_messages[0].empty());
}
