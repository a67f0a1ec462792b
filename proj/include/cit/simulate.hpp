#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cit/data.hpp"
#include "cit/error.hpp"
#include "cit/parallel.hpp"
#include "cit/rng.hpp"
#include "cit/select.hpp"
#include "cit/tree.hpp"

namespace cit {

enum class SettingKind { homogeneous, heterogeneous, binary_mixed };

struct SimSetting {
  SettingKind kind = SettingKind::heterogeneous;
  bool homogeneous = false;  // binary_mixed only
  std::size_t n = 1000;
  std::uint64_t seed = 1;

  bool effect_homogeneous() const { return kind == SettingKind::binary_mixed ? homogeneous : kind == SettingKind::homogeneous; }
};

inline std::string setting_name(const SimSetting& s) {
  switch (s.kind) {
    case SettingKind::homogeneous: return "homog";
    case SettingKind::heterogeneous: return "heterog";
    case SettingKind::binary_mixed: return s.homogeneous ? "binary-mixed-homog" : "binary-mixed";
  }
  return "?";
}

inline SimSetting parse_setting(std::string_view name) {
  SimSetting s;
  if (name == "homog") s.kind = SettingKind::homogeneous;
  else if (name == "heterog") s.kind = SettingKind::heterogeneous;
  else if (name == "binary-mixed") s.kind = SettingKind::binary_mixed;
  else if (name == "binary-mixed-homog") {
    s.kind = SettingKind::binary_mixed;
    s.homogeneous = true;
  } else {
    throw ConfigError("unknown setting '" + std::string(name) + "' (expected homog, heterog, binary-mixed or binary-mixed-homog)");
  }
  return s;
}

struct ExpectedSplit {
  std::size_t column = 0;
  std::size_t count = 1;
  std::vector<int> partition;  // discrete columns: codes of one side of the correct split
};

struct TruthOracle {
  std::function<double(const Dataset&, std::size_t)> true_cate;
  std::function<int(const Dataset&, std::size_t)> true_group;  // cell of the correct tree
  std::vector<ExpectedSplit> correct;
  std::vector<std::size_t> noise;
};

struct Generated {
  Dataset data;
  TruthOracle oracle;
};

inline Schema simulation_schema(SettingKind kind) {
  Schema s;
  auto letters = [](int k) {
    std::vector<std::string> v;
    for (int i = 0; i < k; ++i) v.push_back(std::string(1, static_cast<char>('A' + i)));
    return v;
  };
  if (kind == SettingKind::binary_mixed) {
    for (int j = 1; j <= 3; ++j) s.columns.push_back({"x" + std::to_string(j), CovariateKind::continuous()});
    for (int j = 4; j <= 6; ++j) s.columns.push_back({"x" + std::to_string(j), CovariateKind::categorical(letters(j))});
  } else {
    for (int j = 1; j <= 6; ++j) s.columns.push_back({"x" + std::to_string(j), CovariateKind::continuous()});
  }
  return s;
}

// Lower Cholesky factor of the equicorrelated covariance (unit variance, 0.3).
inline Eigen::MatrixXd equicorrelated_factor(int p, double rho = 0.3) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Constant(p, p, rho);
  S.diagonal().setOnes();
  return S.llt().matrixL();
}

inline Generated generate(const SimSetting& s) {
  const Schema schema = simulation_schema(s.kind);
  const std::size_t n = s.n;
  auto eng = rng::stream(s.seed, "generate");
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<double>> x(6, std::vector<double>(n));
  std::vector<double> a(n), y(n);
  const bool hom = s.effect_homogeneous();

  if (s.kind != SettingKind::binary_mixed) {
    static const Eigen::MatrixXd L = equicorrelated_factor(6);
    Eigen::VectorXd zz(6);
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < 6; ++j) zz[j] = z(eng);
      const Eigen::VectorXd v = L * zz;
      for (int j = 0; j < 6; ++j) x[j][i] = v[j];
      const double p = expit(0.6 * v[0] - 0.6 * v[1] + 0.6 * v[2]);
      a[i] = unif(eng) < p ? 1.0 : 0.0;
      const double eps = z(eng);
      const double x4 = v[3] > 0 ? 1.0 : 0.0;
      y[i] = 2 + 2 * a[i] + 2 * (v[0] < 0 ? 1.0 : 0.0) + std::exp(v[1]) + (hom ? 3.0 : 3.0 * a[i]) * x4 +
             v[4] * v[4] * v[4] + eps;
    }
  } else {
    static const Eigen::MatrixXd L = equicorrelated_factor(3);
    Eigen::VectorXd zz(3);
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) zz[j] = z(eng);
      const Eigen::VectorXd v = L * zz;
      for (int j = 0; j < 3; ++j) x[j][i] = v[j];
      for (int j = 3; j < 6; ++j) x[j][i] = static_cast<double>(std::uniform_int_distribution<int>(0, j)(eng));
      const double bc = (x[5][i] == 1 || x[5][i] == 2) ? 1.0 : 0.0;  // x6 in {B,C}
      const double bd = (x[3][i] == 1 || x[3][i] == 3) ? 1.0 : 0.0;  // x4 in {B,D}
      const double p = expit(0.3 * v[1] - 0.3 * v[2] + 0.3 * bc);
      a[i] = unif(eng) < p ? 1.0 : 0.0;
      double py = hom ? 0.15 + 0.1 * a[i] + expit(0.2 * v[1]) - 0.4 * bd
                      : 0.1 + 0.1 * a[i] + expit(0.2 * v[1]) - 0.4 * a[i] * bd;
      py = std::clamp(py, 0.0, 1.0);
      y[i] = unif(eng) < py ? 1.0 : 0.0;
    }
  }

  TruthOracle o;
  if (s.kind != SettingKind::binary_mixed) {
    if (hom) {
      o.true_cate = [](const Dataset&, std::size_t) { return 2.0; };
      o.true_group = [](const Dataset&, std::size_t) { return 0; };
      o.noise = {0, 1, 2, 3, 4, 5};
    } else {
      o.true_cate = [](const Dataset& d, std::size_t i) { return d.x(3, i) > 0 ? 5.0 : 2.0; };
      o.true_group = [](const Dataset& d, std::size_t i) { return d.x(3, i) > 0 ? 1 : 0; };
      o.correct = {{3, 1, {}}};
      o.noise = {0, 1, 2, 4, 5};
    }
  } else {
    auto bd = [](const Dataset& d, std::size_t i) { return d.x(3, i) == 1 || d.x(3, i) == 3; };
    if (hom) {
      o.true_cate = [](const Dataset&, std::size_t) { return 0.1; };
      o.true_group = [](const Dataset&, std::size_t) { return 0; };
      o.noise = {0, 1, 2, 3, 4, 5};
    } else {
      o.true_cate = [bd](const Dataset& d, std::size_t i) { return bd(d, i) ? -0.3 : 0.1; };
      o.true_group = [bd](const Dataset& d, std::size_t i) { return bd(d, i) ? 1 : 0; };
      o.correct = {{3, 1, {1, 3}}};
      o.noise = {0, 1, 2, 4, 5};
    }
  }
  return {Dataset(schema, std::move(x), std::move(a), std::move(y)), std::move(o)};
}

// ---- metrics ----

inline double mse(const Tree& tree, const Dataset& test, const TruthOracle& o) {
  if (test.n() == 0) throw Error("mse: empty test set");
  double s = 0;
  for (std::size_t i = 0; i < test.n(); ++i) {
    const double e = tree.predict(test, i) - o.true_cate(test, i);
    s += e * e;
  }
  return s / static_cast<double>(test.n());
}

namespace detail {

inline bool partition_matches(const SplitRule& rule, const Column& col, const std::vector<int>& side) {
  std::vector<int> other;
  for (int k = 0; k < static_cast<int>(col.kind.levels.size()); ++k)
    if (!std::binary_search(side.begin(), side.end(), k)) other.push_back(k);
  std::vector<int> l, r;
  if (rule.form == SplitRule::Form::levels) {
    l = rule.left_levels;
    r = rule.right_levels;
  } else if (rule.form == SplitRule::Form::ordinal) {
    for (int k = 0; k < static_cast<int>(col.kind.levels.size()); ++k) (k < rule.cut ? l : r).push_back(k);
  } else {
    return false;
  }
  return (l == side && r == other) || (l == other && r == side);
}

}  // namespace detail

inline bool is_correct_tree(const Tree& tree, const TruthOracle& o) {
  std::map<std::size_t, std::size_t> counts;
  for (NodeId id : tree.internal_ids()) {
    const auto& rule = tree.node(id).split->rule;
    const auto j = static_cast<std::size_t>(rule.covariate);
    ++counts[j];
    const auto it = std::find_if(o.correct.begin(), o.correct.end(), [&](const ExpectedSplit& e) { return e.column == j; });
    if (it == o.correct.end()) return false;
    if (!it->partition.empty() && !detail::partition_matches(rule, tree.schema.columns[j], it->partition)) return false;
  }
  for (const auto& e : o.correct)
    if (counts[e.column] != e.count) return false;
  for (const auto& [j, c] : counts) {
    const bool expected = std::any_of(o.correct.begin(), o.correct.end(), [&](const ExpectedSplit& e) { return e.column == j; });
    if (!expected && c > 0) return false;
  }
  return true;
}

inline std::size_t noise_split_count(const Tree& tree, const TruthOracle& o) {
  std::size_t k = 0;
  for (NodeId id : tree.internal_ids()) {
    const auto j = static_cast<std::size_t>(tree.node(id).split->rule.covariate);
    k += std::find(o.noise.begin(), o.noise.end(), j) != o.noise.end();
  }
  return k;
}

inline bool correct_first_split(const Tree& max_tree, const TruthOracle& o) {
  const auto& s = max_tree.node(max_tree.root).split;
  if (!s) return false;
  const auto j = static_cast<std::size_t>(s->rule.covariate);
  for (const auto& e : o.correct)
    if (e.column == j)
      return e.partition.empty() || detail::partition_matches(s->rule, max_tree.schema.columns[j], e.partition);
  return false;
}

// 1 - discordant co-membership pairs / C(m,2), from the contingency table of
// cell labels: discordant = sum C(a,2) + sum C(b,2) - 2 sum C(ab,2).
inline double pairwise_similarity(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("pairwise_similarity: need two labelings of m >= 2 rows");
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    cab[{a[i], b[i]}] += 1;
  }
  auto c2 = [](double k) { return k * (k - 1) / 2; };
  double sa = 0, sb = 0, sab = 0;
  for (const auto& [k, v] : ca) sa += c2(v);
  for (const auto& [k, v] : cb) sb += c2(v);
  for (const auto& [k, v] : cab) sab += c2(v);
  const double m = static_cast<double>(a.size());
  return 1.0 - (sa + sb - 2 * sab) / c2(m);
}

inline std::vector<int> terminal_labels(const Tree& t, const Dataset& d) {
  std::vector<int> out(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) out[i] = t.route(d, i);
  return out;
}

inline double pairwise_similarity(const Tree& a, const Tree& b, const Dataset& covariates) {
  const auto la = terminal_labels(a, covariates), lb = terminal_labels(b, covariates);
  return pairwise_similarity(la, lb);
}

// ---- model presets ----

struct Preset {
  DesignSpec spec;
  std::vector<std::string> exclude;  // covariates removed from the data
};

inline Preset design_preset(const SimSetting& s, std::string_view name, bool propensity) {
  const bool hom = s.effect_homogeneous();
  const bool bin = s.kind == SettingKind::binary_mixed;
  std::string text;
  std::vector<std::string> exclude;
  // " + x1 + ... + x6", optionally without x2 and with continuous columns exponentiated.
  auto covs = [&](bool drop_x2, bool exp_continuous) {
    std::string t;
    for (int j = 1; j <= 6; ++j) {
      if (drop_x2 && j == 2) continue;
      const std::string name = "x" + std::to_string(j);
      const bool cont = !bin || j <= 3;
      t += " + " + (exp_continuous && cont ? "exp(" + name + ")" : name);
    }
    return t;
  };
  if (name == "true") {
    if (propensity) text = bin ? "1 + x2 + x3 + I(x6 in {B,C})" : "1 + x1 + x2 + x3";
    else if (bin) text = hom ? "1 + A + x2 + I(x4 in {B,D})" : "1 + A + x2 + A:I(x4 in {B,D})";
    else text = hom ? "1 + A + I(x1<0) + exp(x2) + I(x4>0) + cube(x5)"
                    : "1 + A + I(x1<0) + exp(x2) + A:I(x4>0) + cube(x5)";
  } else if (name == "mis-func") {
    text = propensity ? "1" + covs(false, true) : "1 + A + . + A:.";
  } else if (name == "unmeasured-cov") {
    exclude = {"x2"};
    if (propensity) {
      text = "1" + covs(true, false);
    } else {
      text = "1 + A" + covs(true, false);
      for (int j = 1; j <= 6; ++j)
        if (j != 2) text += " + A:x" + std::to_string(j);
    }
  } else {
    throw ConfigError("unknown model preset '" + std::string(name) + "' (expected true, mis-func or unmeasured-cov)");
  }
  return {DesignSpec::parse(text), exclude};
}

// "<estimator>[,prop=<preset>][,out=<preset>][,scope=..][,min-node=..][,min-per-arm=..][,max-depth=..][,lambda=..]"
struct AlgoConfig {
  std::string text;
  FitConfig fit;
  std::string prop = "true", out = "true";
};

inline AlgoConfig parse_algo(std::string_view text, const SimSetting& s) {
  AlgoConfig a;
  a.text = std::string(text);
  const auto parts = detail::split_top(text, ',');
  if (parts.empty() || detail::trim(parts[0]).empty()) throw ConfigError("empty algorithm config");
  a.fit.grow.estimator = parse_estimator(detail::trim(parts[0]));
  std::string scope = "parent";
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const std::string kv(detail::trim(parts[k]));
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("algorithm option '" + kv + "' is not key=value");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    auto num = [&]() {
      auto v = detail::parse_real(val);
      if (!v) throw ConfigError("algorithm option '" + key + "' needs a number");
      return *v;
    };
    if (key == "prop") a.prop = val;
    else if (key == "out") a.out = val;
    else if (key == "scope") scope = val;
    else if (key == "min-node") a.fit.grow.min_node = static_cast<std::size_t>(num());
    else if (key == "min-per-arm") a.fit.grow.min_per_arm = static_cast<std::size_t>(num());
    else if (key == "max-depth") a.fit.grow.max_depth = static_cast<int>(num());
    else if (key == "lambda") a.fit.lambda = num();
    else if (key == "epsilon") a.fit.grow.epsilon = num();
    else if (key == "variance") a.fit.grow.variance = parse_variance(val);
    else throw ConfigError("unknown algorithm option '" + key + "'");
  }
  a.fit.grow.scope = parse_scope(scope);
  const auto& g = a.fit.grow;
  if (g.estimator != EstimatorKind::g) {
    auto p = design_preset(s, a.prop, true);
    a.fit.grow.propensity_spec = p.spec;
    for (auto& e : p.exclude) a.fit.grow.exclude_columns.push_back(e);
  }
  if (g.estimator != EstimatorKind::ipw) {
    auto p = design_preset(s, a.out, false);
    a.fit.grow.outcome_spec = p.spec;
    for (auto& e : p.exclude) a.fit.grow.exclude_columns.push_back(e);
  }
  auto& ex = a.fit.grow.exclude_columns;
  std::sort(ex.begin(), ex.end());
  ex.erase(std::unique(ex.begin(), ex.end()), ex.end());
  a.fit.validate();
  return a;
}

// ---- replication driver ----

struct ReplicateResult {
  bool ok = false;
  std::string error;
  double mse = 0, pps = 0, seconds = 0;
  bool correct = false, first = false;
  std::size_t noise = 0, internal = 0;
};

struct ExperimentSummary {
  std::string setting, algorithm;
  std::size_t n = 0, reps = 0, failures = 0;
  std::uint64_t seed = 0;
  double mse = 0, correct_tree_prop = 0, mean_noise_splits = 0, pps = 0;
  std::optional<double> correct_first_split_prop;
  double mean_internal_nodes = 0;
  double mean_fit_seconds = 0;
  std::vector<std::string> failure_messages;
};

inline ReplicateResult run_replicate(const SimSetting& setting, const AlgoConfig& algo, std::uint64_t seed,
                                     std::size_t r) {
  ReplicateResult out;
  SimSetting tr = setting, te = setting;
  tr.seed = rng::derive_seed(seed, "train", r);
  te.seed = rng::derive_seed(seed, "test", r);
  try {
    const Generated train = generate(tr);
    const Generated test = generate(te);
    FitConfig cfg = algo.fit;
    cfg.grow.seed = rng::derive_seed(seed, "fit", r);
    const auto t0 = std::chrono::steady_clock::now();
    const FitResult fit = fit_cit(train.data, cfg);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.mse = mse(fit.final_tree, test.data, test.oracle);
    out.correct = is_correct_tree(fit.final_tree, train.oracle);
    out.first = correct_first_split(fit.max_tree, train.oracle);
    out.noise = noise_split_count(fit.final_tree, train.oracle);
    out.internal = fit.final_tree.internal_count();
    std::vector<int> truth(test.data.n());
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = test.oracle.true_group(test.data, i);
    const auto labels = terminal_labels(fit.final_tree, test.data);
    out.pps = pairwise_similarity(labels, truth);
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

inline ExperimentSummary summarize(const SimSetting& setting, const AlgoConfig& algo, std::uint64_t seed,
                                   const std::vector<ReplicateResult>& reps) {
  ExperimentSummary s;
  s.setting = setting_name(setting);
  s.algorithm = algo.text;
  s.n = setting.n;
  s.reps = reps.size();
  s.seed = seed;
  double k = 0, first = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++s.failures;
      s.failure_messages.push_back(r.error);
      continue;
    }
    k += 1;
    s.mse += r.mse;
    s.correct_tree_prop += r.correct;
    s.mean_noise_splits += static_cast<double>(r.noise);
    s.pps += r.pps;
    first += r.first;
    s.mean_internal_nodes += static_cast<double>(r.internal);
    s.mean_fit_seconds += r.seconds;
  }
  if (k > 0) {
    s.mse /= k;
    s.correct_tree_prop /= k;
    s.mean_noise_splits /= k;
    s.pps /= k;
    s.mean_internal_nodes /= k;
    s.mean_fit_seconds /= k;
    if (!setting.effect_homogeneous()) s.correct_first_split_prop = first / k;
  }
  return s;
}

inline ExperimentSummary run_experiment(const SimSetting& setting, const AlgoConfig& algo, std::size_t R,
                                        std::uint64_t seed, unsigned threads = 1) {
  if (R < 1) throw ConfigError("replications must be at least 1");
  std::vector<ReplicateResult> reps(R);
  parallel_for(R, threads, [&](std::size_t r) { reps[r] = run_replicate(setting, algo, seed, r); });
  return summarize(setting, algo, seed, reps);
}

}  // namespace cit
