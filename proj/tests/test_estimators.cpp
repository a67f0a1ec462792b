#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cit;

namespace {

using namespace oracles;

struct Side {
  RowList rows;
  Vec beta;
};

// Per-child-fit variance estimator. The child corrections carry 1/p_s and
// opposite signs, as the influence function of tau_l - tau_r requires.
double s4_oracle(const Dataset& d, const Side& l, const Side& r) {
  const double np = l.rows.size() + r.rows.size(), pl = l.rows.size() / np, pr = r.rows.size() / np;
  const auto L = side_stats(d, l.rows, l.beta, l.rows), R = side_stats(d, r.rows, r.beta, r.rows);
  const double T = L.tau - R.tau;
  const Vec vl = mat_vec(inverse(L.E), L.H), vr = mat_vec(inverse(R.E), R.H);
  double sum = 0;
  for (const Side* s : {&l, &r}) {
    const bool left = s == &l;
    for (Row i : s->rows) {
      const Vec x = xrow(d, i);
      const double e = sigmoid(dot(x, s->beta)), a = d.a(i), y = d.y(i);
      const double ps = left ? pl : pr, sign = left ? 1 : -1;
      const double I = sign * (a * y / (ps * e) - (1 - a) * y / (ps * (1 - e))) - T -
                       sign * (a - e) * dot(left ? vl : vr, x) / ps;
      sum += I * I;
    }
  }
  const double K = std::pow(pr * L.tau + pl * R.tau, 2) / (pl * pr);
  return (sum / np - K) / np;
}

std::pair<RowList, RowList> split_on_x3(const Dataset& d) {
  RowList l, r;
  for (Row i = 0; i < d.n(); ++i) (d.x(2, i) < 0 ? l : r).push_back(i);
  return {l, r};
}

NuisanceModels ipw_models(const Dataset& d, const RowList& rows) {
  NuisanceModels m;
  m.propensity = std::make_shared<const LogisticFit>(fit_logistic(d, rows, compile(DesignSpec::parse(kProp), d.schema())));
  return m;
}

Dataset four_rows() {
  return fixtures::make(fixtures::continuous_schema(3), {{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}},
                        {1, 1, 0, 0, 1}, {2, 4, 1, 3, 5});
}

NuisanceModels half_propensity(const Dataset& d) {
  NuisanceModels m;
  const RowList rows{0, 1, 2, 3};
  m.propensity = std::make_shared<const LogisticFit>(fit_logistic(d, rows, compile(DesignSpec::parse("1"), d.schema())));
  return m;
}

}  // namespace

TEST(EstimateIpw, ConstantPropensityArithmetic) {
  const auto d = four_rows();
  const auto m = half_propensity(d);
  const RowList rows{0, 1, 2, 3};
  const auto e = estimate_ipw(d, SubgroupMask::from_rows(5, rows), m);
  EXPECT_NEAR(e.mu1, 3.0, 1e-12);
  EXPECT_NEAR(e.mu0, 2.0, 1e-12);
  EXPECT_NEAR(e.effect, 1.0, 1e-12);
  EXPECT_EQ(e.effect, e.mu1 - e.mu0);
}

TEST(EstimateIpw, SingleTreatedRow) {
  const auto d = four_rows();
  const RowList one{4};
  const auto e = estimate_ipw(d, SubgroupMask::from_rows(5, one), half_propensity(d));
  EXPECT_NEAR(e.mu1, 10.0, 1e-12);
  EXPECT_TRUE(e.degenerate);
}

TEST(EstimateIpw, EmptySubgroupIsAnError) {
  const auto d = four_rows();
  EXPECT_THROW(estimate_ipw(d, SubgroupMask(5), half_propensity(d)), Error);
}

TEST(EstimateIpw, ReducesToArmSumOverConstant) {
  const auto d = fixtures::random_data(30, 3, 2);
  NuisanceModels m;
  m.propensity = std::make_shared<const LogisticFit>(
      fit_logistic(d, d.all_rows(), compile(DesignSpec::parse("1"), d.schema())));
  const double c = expit(m.propensity->coefficients[0]);
  double s1 = 0;
  for (Row i = 0; i < d.n(); ++i) s1 += d.a(i) * d.y(i);
  const auto e = estimate(d, d.all_rows(), EstimatorKind::ipw, m);
  EXPECT_NEAR(e.mu1, s1 / c / 30, 1e-12);
}

TEST(EstimateIpw, MatchesEquationOnFixture) {
  const auto d = fixtures::random_data(8, 3, 17);
  const auto m = ipw_models(d, d.all_rows());
  const RowList w{0, 2, 3, 5, 6};
  const auto e = estimate_ipw(d, SubgroupMask::from_rows(8, w), m);
  double m1 = 0, m0 = 0;
  for (Row i : w) {
    const double p = std::clamp(sigmoid(dot(xrow(d, i), coef(*m.propensity))), 0.01, 0.99);
    m1 += d.a(i) * d.y(i) / p;
    m0 += (1 - d.a(i)) * d.y(i) / (1 - p);
  }
  EXPECT_NEAR(e.mu1, m1 / w.size(), 1e-10);
  EXPECT_NEAR(e.mu0, m0 / w.size(), 1e-10);
}

TEST(EstimateIpw, TruncatesPropensities) {
  const auto d = fixtures::random_data(60, 3, 9);
  auto m = ipw_models(d, d.all_rows());
  m.epsilon = 0.3;
  const auto e = estimate(d, d.all_rows(), EstimatorKind::ipw, m);
  double m1 = 0;
  for (Row i = 0; i < d.n(); ++i)
    m1 += d.a(i) * d.y(i) / std::clamp(sigmoid(dot(xrow(d, i), coef(*m.propensity))), 0.3, 0.7);
  EXPECT_NEAR(e.mu1, m1 / 60, 1e-10);
}

TEST(EstimateG, ConstantPredictions) {
  const auto d = fixtures::make(fixtures::continuous_schema(1), {{1, 2, 3, 4}}, {1, 0, 1, 0}, {4, 1, 4, 1});
  NuisanceModels m;
  m.outcome = std::make_shared<const LinearFit>(fit_ols(d, d.all_rows(), compile(DesignSpec::parse("1 + A"), d.schema())));
  const auto e = estimate_g(d, SubgroupMask(4, true), m);
  EXPECT_NEAR(e.effect, 3.0, 1e-12);
}

TEST(EstimateG, MeanOfArmPredictions) {
  const auto d = fixtures::make(fixtures::continuous_schema(1), {{1, 2, 3, 4}}, {1, 0, 0, 1}, {1, 2, 3, 4});
  NuisanceModels m;
  m.outcome =
      std::make_shared<const LinearFit>(fit_ols(d, d.all_rows(), compile(DesignSpec::parse("1 + A + x1"), d.schema())));
  const RowList w{0, 1, 2};
  EXPECT_NEAR(estimate_g(d, SubgroupMask::from_rows(4, w), m).mu1, 2.0, 1e-10);
}

TEST(EstimateG, MatchesPredictionAveraging) {
  const auto d = fixtures::random_data(8, 3, 23);
  NuisanceModels m;
  m.outcome = std::make_shared<const LinearFit>(
      fit_ols(d, d.all_rows(), compile(DesignSpec::parse("1 + A + x1 + A:x2"), d.schema())));
  const Vec b(m.outcome->coefficients.data(), m.outcome->coefficients.data() + 4);
  const RowList w{1, 2, 4, 7};
  double m1 = 0, m0 = 0;
  for (Row i : w) {
    m1 += b[0] + b[1] + b[2] * d.x(0, i) + b[3] * d.x(1, i);
    m0 += b[0] + b[2] * d.x(0, i);
  }
  const auto e = estimate_g(d, SubgroupMask::from_rows(8, w), m);
  EXPECT_NEAR(e.mu1, m1 / 4, 1e-10);
  EXPECT_NEAR(e.mu0, m0 / 4, 1e-10);
}

TEST(EstimateDr, VanishingResidualsGiveG) {
  auto d = fixtures::random_data(40, 3, 31);
  std::vector<std::vector<double>> x(3);
  std::vector<double> a, y;
  for (int j = 0; j < 3; ++j) x[j] = d.column(j);
  for (Row i = 0; i < d.n(); ++i) {
    a.push_back(d.a(i));
    y.push_back(1 + 2 * d.a(i) - d.x(0, i) + 0.5 * d.a(i) * d.x(1, i));
  }
  d = Dataset(d.schema(), x, a, y);
  auto m = ipw_models(d, d.all_rows());
  m.outcome = std::make_shared<const LinearFit>(
      fit_ols(d, d.all_rows(), compile(DesignSpec::parse("1 + A + x1 + A:x2"), d.schema())));
  const auto dr = estimate(d, d.all_rows(), EstimatorKind::dr, m);
  const auto g = estimate(d, d.all_rows(), EstimatorKind::g, m);
  EXPECT_NEAR(dr.mu1, g.mu1, 1e-10);
  EXPECT_NEAR(dr.mu0, g.mu0, 1e-10);
}

TEST(EstimateDr, ZeroOutcomeModelGivesIpw) {
  const auto d = fixtures::random_data(40, 3, 32);
  auto m = ipw_models(d, d.all_rows());
  LinearFit zero = fit_ols(d, d.all_rows(), compile(DesignSpec::parse("1 + A + x1"), d.schema()));
  zero.coefficients.setZero();
  m.outcome = std::make_shared<const LinearFit>(zero);
  const auto dr = estimate(d, d.all_rows(), EstimatorKind::dr, m);
  const auto ipw = estimate(d, d.all_rows(), EstimatorKind::ipw, m);
  EXPECT_EQ(dr.mu1, ipw.mu1);
  EXPECT_EQ(dr.mu0, ipw.mu0);
}

TEST(EstimateDr, MatchesEquationOnFixture) {
  const auto d = fixtures::random_data(8, 3, 17);
  auto m = ipw_models(d, d.all_rows());
  m.outcome =
      std::make_shared<const LinearFit>(fit_ols(d, d.all_rows(), compile(DesignSpec::parse("1 + A + x1"), d.schema())));
  const Vec b(m.outcome->coefficients.data(), m.outcome->coefficients.data() + 3);
  double m1 = 0, m0 = 0;
  for (Row i = 0; i < 8; ++i) {
    const double e = std::clamp(sigmoid(dot(xrow(d, i), coef(*m.propensity))), 0.01, 0.99);
    const double g1 = b[0] + b[1] + b[2] * d.x(0, i), g0 = b[0] + b[2] * d.x(0, i);
    m1 += g1 + d.a(i) * (d.y(i) - g1) / e;
    m0 += g0 + (1 - d.a(i)) * (d.y(i) - g0) / (1 - e);
  }
  const auto e = estimate_dr(d, SubgroupMask(8, true), m);
  EXPECT_NEAR(e.mu1, m1 / 8, 1e-10);
  EXPECT_NEAR(e.mu0, m0 / 8, 1e-10);
}

TEST(IfVariance, Examples) {
  const Vec two{1.0, -1.0};
  EXPECT_NEAR(*pooled_influence_variance(two, 2), 1.0, 1e-15);
  const Vec same{0.5, 0.5, 0.5};
  EXPECT_EQ(pooled_influence_variance(same, 3).reason(), Inadmissible::nonpositive_variance);
  const Vec one{1.0};
  EXPECT_EQ(pooled_influence_variance(one, 1).reason(), Inadmissible::too_few_observations);
}

TEST(IfVariance, PoolsScaledChildContributions) {
  NodeEffect l, r;
  l.influence = {1, -1};
  r.influence = {2, 0, -2};
  // phi = 5/2 * {1,-1} and -5/3 * {2,0,-2}
  const Vec phi{2.5, -2.5, -10.0 / 3, 0, 10.0 / 3};
  EXPECT_NEAR(*if_variance(l, r, 5), *pooled_influence_variance(phi, 5), 1e-15);
}

TEST(SplitContrast, StatisticDefinition) {
  const auto c = detail::finish(2.0, 1.0, 0, 0);
  ASSERT_TRUE(c.ok());
  EXPECT_EQ(c->statistic, 4.0);
  EXPECT_FALSE(detail::finish(2.0, 0.0, 0, 0).ok());
}

TEST(SplitContrast, IdenticalChildrenGiveZero) {
  // The right half duplicates the left half, differing only in x3.
  const auto base = fixtures::random_data(40, 3, 12);
  std::vector<std::vector<double>> x(3);
  std::vector<double> a, y;
  for (int copy = 0; copy < 2; ++copy)
    for (Row i = 0; i < base.n(); ++i) {
      x[0].push_back(base.x(0, i));
      x[1].push_back(base.x(1, i));
      x[2].push_back(copy ? 1.0 : -1.0);
      a.push_back(base.a(i));
      y.push_back(base.y(i));
    }
  const Dataset d(base.schema(), x, a, y);
  SubgroupMask l(80), r(80);
  for (Row i = 0; i < 80; ++i) (i < 40 ? l : r).set(i, true);
  for (auto kind : {EstimatorKind::ipw, EstimatorKind::dr}) {
    const auto plan = ModelPlan::make(kind, DesignSpec::parse("1 + x1 + x2"), DesignSpec::parse("1 + A + x1"),
                                      d.schema(), 0.01);
    const auto c = split_contrast(d, l, r, plan, NuisanceScope::parent);
    ASSERT_TRUE(c.ok()) << describe(c.reason());
    EXPECT_NEAR(c->t_hat, 0.0, 1e-12);
    EXPECT_NEAR(c->statistic, 0.0, 1e-20);
  }
}

TEST(SplitContrast, IpwParentMatchesPooledOracle) {
  const auto d = fixtures::random_data(40, 3, 77);
  const auto [l, r] = split_on_x3(d);
  const auto plan = ModelPlan::make(EstimatorKind::ipw, DesignSpec::parse(kProp), std::nullopt, d.schema(), 0.01);
  const auto c = split_contrast(d, SubgroupMask::from_rows(40, l), SubgroupMask::from_rows(40, r), plan,
                                NuisanceScope::parent);
  ASSERT_TRUE(c.ok()) << describe(c.reason());

  const auto fit = fit_logistic(d, d.all_rows(), plan.propensity);
  const Vec beta = coef(fit);
  for (Row i = 0; i < 40; ++i) {
    const double e = sigmoid(dot(xrow(d, i), beta));
    ASSERT_TRUE(e > 0.01 && e < 0.99);  // truncation inactive, so the oracle needs none
  }
  const double var = s1_oracle(d, l, r, beta);
  const auto L = side_stats(d, l, beta, l), R = side_stats(d, r, beta, r);
  const double T = L.tau - R.tau;
  EXPECT_NEAR(c->t_hat, T, 1e-10);
  EXPECT_NEAR(c->variance, var, 1e-8 * std::abs(var));
  EXPECT_NEAR(c->statistic, T * T / var, 1e-8 * (T * T / var));

  const auto direct = ipw_variance_pooled(d, l, r, fit, 0.01);
  EXPECT_NEAR(*direct, var, 1e-8 * std::abs(var));
}

TEST(SplitContrast, IpwChildMatchesPerChildOracle) {
  const auto d = fixtures::random_data(80, 3, 78);
  const auto [l, r] = split_on_x3(d);
  const auto plan = ModelPlan::make(EstimatorKind::ipw, DesignSpec::parse(kProp), std::nullopt, d.schema(), 0.01);
  const auto c = split_contrast(d, SubgroupMask::from_rows(80, l), SubgroupMask::from_rows(80, r), plan,
                                NuisanceScope::child);
  ASSERT_TRUE(c.ok()) << describe(c.reason());
  const auto fl = fit_logistic(d, l, plan.propensity), fr = fit_logistic(d, r, plan.propensity);
  for (Row i : l) ASSERT_TRUE(std::abs(sigmoid(dot(xrow(d, i), coef(fl))) - 0.5) < 0.49);
  for (Row i : r) ASSERT_TRUE(std::abs(sigmoid(dot(xrow(d, i), coef(fr))) - 0.5) < 0.49);
  const double var = s4_oracle(d, {l, coef(fl)}, {r, coef(fr)});
  EXPECT_NEAR(c->variance, var, 1e-8 * std::abs(var));
  EXPECT_NEAR(*ipw_variance_per_child(d, l, r, fl, fr, 0.01), var, 1e-8 * std::abs(var));
}

TEST(SplitContrast, SwappingChildrenKeepsVarianceAndStatistic) {
  const auto d = fixtures::random_data(120, 3, 79, 1.5);
  const auto [l, r] = split_on_x3(d);
  const auto ml = SubgroupMask::from_rows(120, l), mr = SubgroupMask::from_rows(120, r);
  for (auto kind : {EstimatorKind::ipw, EstimatorKind::g, EstimatorKind::dr})
    for (auto scope : {NuisanceScope::whole, NuisanceScope::parent, NuisanceScope::child}) {
      const auto plan =
          ModelPlan::make(kind, DesignSpec::parse(kProp), DesignSpec::parse("1 + A + x1 + A:x3"), d.schema(), 0.01);
      const auto whole = plan.fit(d, d.all_rows());
      const auto a = split_contrast(d, ml, mr, plan, scope, VarianceMethod::automatic, &whole);
      const auto b = split_contrast(d, mr, ml, plan, scope, VarianceMethod::automatic, &whole);
      ASSERT_TRUE(a.ok() && b.ok());
      EXPECT_NEAR(a->t_hat, -b->t_hat, 1e-10);
      EXPECT_NEAR(a->variance, b->variance, 1e-10 * a->variance);
      EXPECT_NEAR(a->statistic, b->statistic, 1e-8 * a->statistic);
    }
}

TEST(SplitContrast, PooledSandwichWithWholeFitAddsFitRows) {
  // A whole-sample fit on exactly the union is the ordinary pooled case.
  const auto d = fixtures::random_data(60, 3, 80);
  const auto [l, r] = split_on_x3(d);
  const auto fit = fit_logistic(d, d.all_rows(), compile(DesignSpec::parse(kProp), d.schema()));
  EXPECT_NEAR(*ipw_variance_pooled(d, l, r, fit, 0.01), s1_oracle(d, l, r, coef(fit)), 1e-10);
}

TEST(SplitContrast, HomogeneousGFormulaSplitHasNoVariance) {
  // A correct outcome model without effect modifiers gives every row the same
  // effect, so the g-formula contrast is exactly zero with zero variance.
  const auto d = fixtures::random_data(200, 3, 81);
  const auto plan = ModelPlan::make(EstimatorKind::g, std::nullopt, DesignSpec::parse("1 + A + x1"), d.schema(), 0.01);
  const auto [l, r] = split_on_x3(d);
  const auto c = split_contrast(d, SubgroupMask::from_rows(200, l), SubgroupMask::from_rows(200, r), plan,
                                NuisanceScope::parent);
  EXPECT_EQ(c.reason(), Inadmissible::nonpositive_variance);
}

TEST(SplitContrast, GFormulaEffectModifierSplitIsAdmissible) {
  const auto d = fixtures::random_data(200, 3, 82, 3.0);
  const auto plan =
      ModelPlan::make(EstimatorKind::g, std::nullopt, DesignSpec::parse("1 + A + x1 + A:x3gt0"), d.schema(), 0.01);
  const auto [l, r] = split_on_x3(d);
  const auto c = split_contrast(d, SubgroupMask::from_rows(200, l), SubgroupMask::from_rows(200, r), plan,
                                NuisanceScope::parent);
  ASSERT_TRUE(c.ok());
  EXPECT_GT(c->statistic, 3.84);
}

TEST(SplitContrast, OneArmChildIsInadmissible) {
  const auto d = fixtures::random_data(60, 3, 83);
  RowList l, r;
  for (Row i = 0; i < 60; ++i) (d.a(i) == 1 && l.size() < 10 ? l : r).push_back(i);
  const auto plan = ModelPlan::make(EstimatorKind::ipw, DesignSpec::parse(kProp), std::nullopt, d.schema(), 0.01);
  const auto c = split_contrast(d, SubgroupMask::from_rows(60, l), SubgroupMask::from_rows(60, r), plan,
                                NuisanceScope::parent);
  EXPECT_EQ(c.reason(), Inadmissible::arm_too_small);
}

TEST(ResolveVariance, DefaultsAndConflicts) {
  using V = VarianceMethod;
  EXPECT_EQ(resolve_variance(V::automatic, EstimatorKind::ipw, NuisanceScope::parent), V::pooled_sandwich);
  EXPECT_EQ(resolve_variance(V::automatic, EstimatorKind::ipw, NuisanceScope::whole), V::pooled_sandwich);
  EXPECT_EQ(resolve_variance(V::automatic, EstimatorKind::ipw, NuisanceScope::child), V::per_child_sandwich);
  EXPECT_EQ(resolve_variance(V::automatic, EstimatorKind::dr, NuisanceScope::parent), V::influence);
  EXPECT_EQ(resolve_variance(V::automatic, EstimatorKind::g, NuisanceScope::child), V::influence);
  EXPECT_EQ(resolve_variance(V::influence, EstimatorKind::ipw, NuisanceScope::parent), V::influence);
  EXPECT_THROW(resolve_variance(V::pooled_sandwich, EstimatorKind::dr, NuisanceScope::parent), ConfigError);
  EXPECT_THROW(resolve_variance(V::pooled_sandwich, EstimatorKind::ipw, NuisanceScope::child), ConfigError);
  EXPECT_THROW(resolve_variance(V::per_child_sandwich, EstimatorKind::ipw, NuisanceScope::parent), ConfigError);
}

TEST(ModelPlan, ValidatesSpecs) {
  const auto s = fixtures::continuous_schema(2);
  EXPECT_THROW(ModelPlan::make(EstimatorKind::ipw, std::nullopt, std::nullopt, s, 0.01), ConfigError);
  EXPECT_THROW(ModelPlan::make(EstimatorKind::g, std::nullopt, DesignSpec::parse("1 + x1"), s, 0.01), ConfigError);
  EXPECT_THROW(ModelPlan::make(EstimatorKind::ipw, DesignSpec::parse("1 + A"), std::nullopt, s, 0.01), ConfigError);
  EXPECT_THROW(ModelPlan::make(EstimatorKind::ipw, DesignSpec::parse("1"), std::nullopt, s, 0.5), ConfigError);
}

TEST(MonteCarlo, DrInfluenceVarianceTracksSamplingVariance) {
  SimSetting s;
  s.kind = SettingKind::heterogeneous;
  s.n = 2000;
  const auto plan = ModelPlan::make(EstimatorKind::dr, DesignSpec::parse("1 + x1 + x2 + x3"),
                                    DesignSpec::parse("1 + A + I(x1<0) + exp(x2) + A:I(x4>0) + cube(x5)"),
                                    simulation_schema(s.kind), 0.01);
  const int R = 2000;
  std::vector<double> t(R), v(R);
  for (int rep = 0; rep < R; ++rep) {
    s.seed = rng::derive_seed(99, "dr-variance", rep);
    const auto g = generate(s).data;
    SubgroupMask l(g.n());
    for (Row i = 0; i < g.n(); ++i) l.set(i, !(g.x(3, i) > 0));
    const auto c = split_contrast(g, l, l.complement(), plan, NuisanceScope::parent);
    ASSERT_TRUE(c.ok());
    t[rep] = c->t_hat;
    v[rep] = c->variance;
  }
  double mt = 0, mv = 0;
  for (int k = 0; k < R; ++k) {
    mt += t[k] / R;
    mv += v[k] / R;
  }
  double emp = 0;
  for (double x : t) emp += (x - mt) * (x - mt) / (R - 1);
  EXPECT_NEAR(mv / emp, 1.0, 0.15) << "mean estimate " << mv << " vs sampling variance " << emp;
}
