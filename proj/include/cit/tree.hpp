#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cit/data.hpp"
#include "cit/error.hpp"
#include "cit/estimators.hpp"

namespace cit {

using NodeId = int;

inline constexpr std::size_t kMaxCategoricalLevels = 15;

struct SplitRule {
  enum class Form { threshold, levels, ordinal };
  int covariate = 0;
  Form form = Form::threshold;
  double threshold = 0;           // threshold: left = {x < threshold}
  std::vector<int> left_levels;   // levels: codes sent left
  std::vector<int> right_levels;  // levels: codes present at the node and sent right
  int cut = 0;                    // ordinal: left = {code < cut}

  // nullopt when the value is a level the rule never saw.
  std::optional<bool> goes_left(double v) const {
    switch (form) {
      case Form::threshold: return v < threshold;
      case Form::ordinal: return v < cut;
      case Form::levels: {
        const int code = static_cast<int>(v);
        if (std::binary_search(left_levels.begin(), left_levels.end(), code)) return true;
        if (std::binary_search(right_levels.begin(), right_levels.end(), code)) return false;
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  std::string describe(const Schema& s) const {
    const Column& c = s.columns[covariate];
    auto names = [&](const std::vector<int>& codes) {
      std::string out = "{";
      for (std::size_t k = 0; k < codes.size(); ++k) out += (k ? "," : "") + c.kind.levels[codes[k]];
      return out + "}";
    };
    switch (form) {
      case Form::threshold: return c.name + " < " + format_double(threshold);
      case Form::ordinal: return c.name + " <= " + c.kind.levels[cut - 1];
      case Form::levels: return c.name + " in " + names(left_levels);
    }
    return {};
  }

  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

struct GrowConfig {
  EstimatorKind estimator = EstimatorKind::dr;
  NuisanceScope scope = NuisanceScope::parent;
  std::optional<DesignSpec> propensity_spec, outcome_spec;
  VarianceMethod variance = VarianceMethod::automatic;
  std::size_t min_node = 30, min_per_arm = 10;
  int max_depth = 10;
  double epsilon = 0.01;
  std::uint64_t seed = 1;
  std::vector<std::string> exclude_columns;  // covariates never split on

  void validate() const {
    if (min_per_arm < 1 || min_node < 2 * min_per_arm)
      throw ConfigError("need min_node >= 2*min_per_arm >= 2");
    if (max_depth < 1) throw ConfigError("max_depth must be at least 1");
    resolve_variance(variance, estimator, scope);
  }

  ModelPlan plan(const Schema& schema) const {
    return ModelPlan::make(estimator, propensity_spec, outcome_spec, schema, epsilon);
  }
};

struct SplitInfo {
  SplitRule rule;
  double statistic = 0, t_hat = 0, variance = 0;
  NodeId left = -1, right = -1;
};

struct TreeNode {
  NodeId id = 0, parent = -1;
  int depth = 0;
  std::shared_ptr<const RowList> rows;  // training rows, ascending
  std::size_t n = 0;
  NodeEffect effect;  // influence cleared after growth
  std::optional<SplitInfo> split;
  bool active = true;
  bool effect_fallback = false;  // effect used the parent's models
  std::shared_ptr<const NuisanceModels> models;  // fitted on this node's rows, if any
  std::size_t candidates = 0, inadmissible = 0;

  bool terminal() const { return !split.has_value(); }
};

struct Tree {
  std::vector<TreeNode> nodes;
  NodeId root = 0;
  GrowConfig config;
  Schema schema;
  std::shared_ptr<const NuisanceModels> whole;

  const TreeNode& node(NodeId id) const { return nodes.at(static_cast<std::size_t>(id)); }
  TreeNode& node(NodeId id) { return nodes.at(static_cast<std::size_t>(id)); }

  // Reachable node ids in ascending order.
  std::vector<NodeId> reachable() const {
    std::vector<NodeId> out, stack{root};
    while (!stack.empty()) {
      const NodeId id = stack.back();
      stack.pop_back();
      out.push_back(id);
      if (const auto& s = node(id).split) {
        stack.push_back(s->left);
        stack.push_back(s->right);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<NodeId> internal_ids() const {
    std::vector<NodeId> out;
    for (NodeId id : reachable())
      if (!node(id).terminal()) out.push_back(id);
    return out;
  }

  std::vector<NodeId> terminal_ids() const {
    std::vector<NodeId> out;
    for (NodeId id : reachable())
      if (node(id).terminal()) out.push_back(id);
    return out;
  }

  std::size_t internal_count() const { return internal_ids().size(); }

  // Routes a covariate row, given as x(j); unseen levels follow the larger child.
  template <class Get>
  NodeId route(Get&& x, std::size_t* fallbacks = nullptr) const {
    NodeId id = root;
    while (const auto& s = node(id).split) {
      auto left = s->rule.goes_left(x(s->rule.covariate));
      if (!left) {
        if (fallbacks) ++*fallbacks;
        left = node(s->left).n >= node(s->right).n;
      }
      id = *left ? s->left : s->right;
    }
    return id;
  }

  NodeId route(const Dataset& d, std::size_t i, std::size_t* fallbacks = nullptr) const {
    return route([&](int j) { return d.x(static_cast<std::size_t>(j), i); }, fallbacks);
  }

  double predict(const Dataset& d, std::size_t i) const { return node(route(d, i)).effect.effect; }

  // Convenience builders for hand-made trees.
  NodeId add_root(std::size_t n, NodeEffect effect) {
    nodes.clear();
    TreeNode t;
    t.n = n;
    t.effect = std::move(effect);
    nodes.push_back(std::move(t));
    root = 0;
    return 0;
  }

  std::pair<NodeId, NodeId> split_node(NodeId id, SplitRule rule, double statistic, std::size_t n_left,
                                       NodeEffect left, std::size_t n_right, NodeEffect right) {
    const int depth = node(id).depth + 1;
    const NodeId l = static_cast<NodeId>(nodes.size()), r = l + 1;
    for (auto [cid, n, eff] : {std::tuple{l, n_left, left}, std::tuple{r, n_right, right}}) {
      TreeNode c;
      c.id = cid;
      c.parent = id;
      c.depth = depth;
      c.n = n;
      c.effect = eff;
      nodes.push_back(std::move(c));
    }
    SplitInfo s;
    s.rule = std::move(rule);
    s.statistic = statistic;
    s.left = l;
    s.right = r;
    node(id).split = s;
    return {l, r};
  }
};

namespace detail {

inline std::vector<int> present_levels(const Dataset& d, std::span<const Row> rows, std::size_t j) {
  const std::size_t k = d.schema().columns[j].kind.levels.size();
  std::vector<std::uint8_t> seen(k, 0);
  for (Row i : rows) seen[static_cast<std::size_t>(d.x(j, i))] = 1;
  std::vector<int> out;
  for (std::size_t c = 0; c < k; ++c)
    if (seen[c]) out.push_back(static_cast<int>(c));
  return out;
}

// Canonical bitmasks over k present levels: one per unordered partition.
inline std::vector<std::uint32_t> canonical_subsets(std::size_t k) {
  std::vector<std::uint32_t> out;
  if (k < 2) return out;
  if (k > kMaxCategoricalLevels)
    throw ConfigError("categorical covariate with " + std::to_string(k) + " levels exceeds the limit of " +
                      std::to_string(kMaxCategoricalLevels));
  const std::uint32_t full = (1u << k) - 1;
  for (std::uint32_t m = 1; m < full; ++m) {
    const int c = std::popcount(m);
    if (2 * c < static_cast<int>(k) || (2 * c == static_cast<int>(k) && (m & 1u))) out.push_back(m);
  }
  return out;
}

inline SplitRule level_rule(int j, const std::vector<int>& present, std::uint32_t mask) {
  SplitRule r;
  r.covariate = j;
  r.form = SplitRule::Form::levels;
  for (std::size_t b = 0; b < present.size(); ++b) (mask >> b & 1u ? r.left_levels : r.right_levels).push_back(present[b]);
  return r;
}

inline bool splittable(const GrowConfig& cfg, const Schema& s, std::size_t j) {
  return std::find(cfg.exclude_columns.begin(), cfg.exclude_columns.end(), s.columns[j].name) ==
         cfg.exclude_columns.end();
}

}  // namespace detail

inline std::vector<SplitRule> enumerate_splits(const Dataset& d, std::span<const Row> rows) {
  std::vector<SplitRule> out;
  const Schema& s = d.schema();
  for (std::size_t j = 0; j < s.p(); ++j) {
    const auto& kind = s.columns[j].kind;
    if (kind.kind == Kind::continuous) {
      std::vector<double> v;
      v.reserve(rows.size());
      for (Row i : rows) v.push_back(d.x(j, i));
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      for (std::size_t k = 0; k + 1 < v.size(); ++k) {
        SplitRule r;
        r.covariate = static_cast<int>(j);
        double c = v[k] + (v[k + 1] - v[k]) / 2;
        if (!(c > v[k])) c = v[k + 1];
        r.threshold = c;
        out.push_back(r);
      }
    } else {
      const auto present = detail::present_levels(d, rows, j);
      if (kind.kind == Kind::categorical) {
        for (std::uint32_t m : detail::canonical_subsets(present.size()))
          out.push_back(detail::level_rule(static_cast<int>(j), present, m));
      } else {
        for (std::size_t k = 1; k < present.size(); ++k) {
          SplitRule r;
          r.covariate = static_cast<int>(j);
          r.form = SplitRule::Form::ordinal;
          r.cut = present[k];
          out.push_back(r);
        }
      }
    }
  }
  return out;
}

inline std::vector<SplitRule> enumerate_splits(const Dataset& d, const SubgroupMask& mask) {
  const RowList rows = mask.rows();
  return enumerate_splits(d, rows);
}

inline std::pair<RowList, RowList> partition_rows(const Dataset& d, std::span<const Row> rows, const SplitRule& rule) {
  RowList l, r;
  for (Row i : rows) (rule.goes_left(d.x(static_cast<std::size_t>(rule.covariate), i)).value_or(false) ? l : r).push_back(i);
  return {std::move(l), std::move(r)};
}

// ---- prefix-sum split scan for whole and parent scopes ----

namespace detail {

// Node-level per-row quantities that make every candidate O(k^2).
struct ScanInput {
  std::size_t n = 0;
  std::vector<double> a, c1, c0, dc;  // dc = delta minus the node mean
  std::vector<double> w2;             // squared IPW contrast (pooled sandwich)
  std::size_t K = 0;                  // width of the per-row vector block
  std::vector<double> vec;            // n x K: [h x | w r x | r x] or [t]
  std::size_t kp = 0, kg = 0;
  bool pooled = false, greg = false;
  Eigen::MatrixXd einv, q;  // pooled: inverse information, n_F * score outer product
  double nf = 0;
  Eigen::MatrixXd V;  // g: robust coefficient covariance
};

struct Acc {
  double n = 0, n1 = 0, s1 = 0, s0 = 0, sd = 0, sdd = 0, sw2 = 0;
  std::vector<double> v;

  explicit Acc(std::size_t K = 0) : v(K, 0.0) {}

  void add(const ScanInput& in, std::size_t r) {
    n += 1;
    n1 += in.a[r];
    s1 += in.c1[r];
    s0 += in.c0[r];
    sd += in.dc[r];
    sdd += in.dc[r] * in.dc[r];
    if (in.pooled) sw2 += in.w2[r];
    const double* row = in.vec.data() + r * in.K;
    for (std::size_t k = 0; k < in.K; ++k) v[k] += row[k];
  }

  void add(const Acc& o) {
    n += o.n;
    n1 += o.n1;
    s1 += o.s1;
    s0 += o.s0;
    sd += o.sd;
    sdd += o.sdd;
    sw2 += o.sw2;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += o.v[k];
  }

  Acc minus(const Acc& o) const {
    Acc r = *this;
    r.n -= o.n;
    r.n1 -= o.n1;
    r.s1 -= o.s1;
    r.s0 -= o.s0;
    r.sd -= o.sd;
    r.sdd -= o.sdd;
    r.sw2 -= o.sw2;
    for (std::size_t k = 0; k < v.size(); ++k) r.v[k] -= o.v[k];
    return r;
  }
};

inline Eigen::Map<const Eigen::VectorXd> block(const Acc& a, std::size_t off, std::size_t len) {
  return Eigen::Map<const Eigen::VectorXd>(a.v.data() + off, static_cast<Eigen::Index>(len));
}

inline ScanInput make_scan_input(const Dataset& d, std::span<const Row> rows, EstimatorKind kind,
                                 const NuisanceModels& m, VarianceMethod vm) {
  ScanInput in;
  in.n = rows.size();
  const RowTerms t = row_terms(d, rows, kind, m);
  in.a.resize(in.n);
  for (std::size_t r = 0; r < in.n; ++r) in.a[r] = d.a(rows[r]);
  in.c1 = t.c1;
  in.c0 = t.c0;
  in.dc = centred(t.delta);

  in.pooled = vm == VarianceMethod::pooled_sandwich;
  in.greg = kind == EstimatorKind::g;
  if (in.pooled) {
    const LogisticFit& fit = *m.propensity;
    in.kp = fit.retained.size();
    auto einv = safe_inverse(fit.information);
    if (!einv) throw FitError("singular information");
    in.einv = *einv;
    in.nf = static_cast<double>(fit.n);
    in.q = in.nf * fit.score_outer;
    in.K = 3 * in.kp;
    in.vec.assign(in.n * in.K, 0.0);
    in.w2.resize(in.n);
    std::vector<double> scratch(fit.design->width());
    for (std::size_t r = 0; r < in.n; ++r) {
      const Row i = rows[r];
      fit.design->fill_row(d, i, std::nullopt, scratch.data());
      const double e = t.e[r], a = in.a[r], y = d.y(i);
      const double w = t.delta[r];
      const double h = a * y * (1 - e) / e + (1 - a) * y * e / (1 - e);
      const double res = a - t.p[r];
      in.w2[r] = w * w;
      double* row = in.vec.data() + r * in.K;
      for (std::size_t k = 0; k < in.kp; ++k) {
        const double x = scratch[fit.retained[k]];
        row[k] = h * x;
        row[in.kp + k] = w * res * x;
        row[2 * in.kp + k] = res * x;
      }
    }
  } else if (in.greg) {
    const LinearFit& fit = *m.outcome;
    std::vector<std::size_t> active;  // retained positions that involve treatment
    for (std::size_t k = 0; k < fit.retained.size(); ++k)
      if (fit.design->columns()[fit.retained[k]].treatment) active.push_back(k);
    in.kg = active.size();
    in.K = in.kg;
    in.V.resize(static_cast<Eigen::Index>(in.kg), static_cast<Eigen::Index>(in.kg));
    for (std::size_t a = 0; a < in.kg; ++a)
      for (std::size_t b = 0; b < in.kg; ++b) in.V(a, b) = fit.robust_cov(active[a], active[b]);
    in.vec.assign(in.n * in.K, 0.0);
    std::vector<double> diff(fit.design->width());
    for (std::size_t r = 0; r < in.n; ++r) {
      fit.design->fill_diff(d, rows[r], diff.data());
      for (std::size_t k = 0; k < in.kg; ++k) in.vec[r * in.K + k] = diff[fit.retained[active[k]]];
    }
  }
  return in;
}

inline Checked<SplitContrast> scan_contrast(const ScanInput& in, const Acc& L, const Acc& total, std::size_t min_node,
                                            std::size_t min_per_arm) {
  const Acc R = total.minus(L);
  const double mn = static_cast<double>(min_node), ma = static_cast<double>(min_per_arm);
  if (L.n < mn || R.n < mn) return Inadmissible::child_too_small;
  if (L.n1 < ma || L.n - L.n1 < ma || R.n1 < ma || R.n - R.n1 < ma) return Inadmissible::arm_too_small;
  const double nl = L.n, nr = R.n, np = nl + nr;
  const double tl = L.s1 / nl - L.s0 / nl, tr = R.s1 / nr - R.s0 / nr;
  const double t = tl - tr;
  double var = 0;
  if (in.pooled) {
    const double pl = nl / np, pr = nr / np;
    const std::size_t k = in.kp;
    const Eigen::VectorXd dh = block(L, 0, k) / nl - block(R, 0, k) / nr;
    const Eigen::VectorXd v = in.einv * dh;
    const Eigen::VectorXd cross =
        block(L, k, k) / pl - block(R, k, k) / pr - t * (block(L, 2 * k, k) + block(R, 2 * k, k));
    const double saa = L.sw2 / (pl * pl) + R.sw2 / (pr * pr) - np * t * t;
    const double sab = -v.dot(cross);
    const double sbb = v.dot(in.q * v);
    const double K = (pr * tl + pl * tr) * (pr * tl + pl * tr) / (pl * pr);
    var = saa / (np * np) - K / np + sbb / (in.nf * in.nf) + 2 * sab / (np * in.nf);
  } else {
    const double ssl = std::max(0.0, L.sdd - L.sd * L.sd / nl), ssr = std::max(0.0, R.sdd - R.sd * R.sd / nr);
    var = ((np / nl) * (np / nl) * ssl + (np / nr) * (np / nr) * ssr) / ((np - 1) * np);
    if (in.greg && in.kg > 0) {
      const Eigen::VectorXd g = block(L, 0, in.kg) / nl - block(R, 0, in.kg) / nr;
      var += g.dot(in.V * g);
    }
  }
  return finish(t, var, tl, tr);
}

}  // namespace detail

struct SplitChoice {
  SplitRule rule;
  SplitContrast contrast;
};

struct SearchResult {
  std::optional<SplitChoice> best;
  std::size_t candidates = 0, inadmissible = 0;
};

inline void consider(SearchResult& res, const Checked<SplitContrast>& c, const SplitRule& rule) {
  ++res.candidates;
  if (!c) {
    ++res.inadmissible;
    return;
  }
  if (!res.best || c->statistic > res.best->contrast.statistic) res.best = SplitChoice{rule, *c};
}

// Scans all candidates of a node whose models are fixed (whole or parent scope).
inline SearchResult scan_node(const Dataset& d, std::span<const Row> rows, const GrowConfig& cfg,
                              const NuisanceModels& models) {
  SearchResult res;
  const VarianceMethod vm = resolve_variance(cfg.variance, cfg.estimator, cfg.scope);
  detail::ScanInput in;
  try {
    in = detail::make_scan_input(d, rows, cfg.estimator, models, vm);
  } catch (const Error&) {
    return res;
  }
  detail::Acc total(in.K);
  for (std::size_t r = 0; r < in.n; ++r) total.add(in, r);
  const Schema& s = d.schema();
  std::vector<std::size_t> order(in.n);

  for (std::size_t j = 0; j < s.p(); ++j) {
    if (!detail::splittable(cfg, s, j)) continue;
    const auto& kind = s.columns[j].kind;
    if (kind.kind == Kind::continuous) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return d.x(j, rows[a]) < d.x(j, rows[b]); });
      detail::Acc L(in.K);
      for (std::size_t k = 0; k + 1 < in.n; ++k) {
        L.add(in, order[k]);
        const double lo = d.x(j, rows[order[k]]), hi = d.x(j, rows[order[k + 1]]);
        if (!(lo < hi)) continue;
        SplitRule rule;
        rule.covariate = static_cast<int>(j);
        rule.threshold = lo + (hi - lo) / 2;
        if (!(rule.threshold > lo)) rule.threshold = hi;
        consider(res, detail::scan_contrast(in, L, total, cfg.min_node, cfg.min_per_arm), rule);
      }
      continue;
    }
    const auto present = detail::present_levels(d, rows, j);
    std::vector<int> slot(kind.levels.size(), -1);
    for (std::size_t b = 0; b < present.size(); ++b) slot[present[b]] = static_cast<int>(b);
    std::vector<detail::Acc> per(present.size(), detail::Acc(in.K));
    for (std::size_t r = 0; r < in.n; ++r) per[slot[static_cast<std::size_t>(d.x(j, rows[r]))]].add(in, r);
    if (kind.kind == Kind::categorical) {
      for (std::uint32_t m : detail::canonical_subsets(present.size())) {
        detail::Acc L(in.K);
        for (std::size_t b = 0; b < present.size(); ++b)
          if (m >> b & 1u) L.add(per[b]);
        consider(res, detail::scan_contrast(in, L, total, cfg.min_node, cfg.min_per_arm),
                 detail::level_rule(static_cast<int>(j), present, m));
      }
    } else {
      detail::Acc L(in.K);
      for (std::size_t b = 0; b + 1 < present.size(); ++b) {
        L.add(per[b]);
        SplitRule rule;
        rule.covariate = static_cast<int>(j);
        rule.form = SplitRule::Form::ordinal;
        rule.cut = present[b + 1];
        consider(res, detail::scan_contrast(in, L, total, cfg.min_node, cfg.min_per_arm), rule);
      }
    }
  }
  return res;
}

// Evaluates every candidate directly; used for child scope and as a reference.
inline SearchResult search_direct(const Dataset& d, std::span<const Row> rows, const GrowConfig& cfg,
                                  const ModelPlan& plan, const NuisanceModels* whole, const NuisanceModels* parent) {
  SearchResult res;
  SplitContext ctx;
  ctx.data = &d;
  ctx.plan = plan;
  ctx.scope = cfg.scope;
  ctx.variance = cfg.variance;
  ctx.whole = whole;
  ctx.parent = parent;
  ctx.min_node = cfg.min_node;
  ctx.min_per_arm = cfg.min_per_arm;
  for (const auto& rule : enumerate_splits(d, rows)) {
    if (!detail::splittable(cfg, d.schema(), static_cast<std::size_t>(rule.covariate))) continue;
    const auto [l, r] = partition_rows(d, rows, rule);
    consider(res, evaluate_split(ctx, l, r), rule);
  }
  return res;
}

namespace detail {

inline std::shared_ptr<const NuisanceModels> try_fit(const ModelPlan& plan, const Dataset& d,
                                                     std::span<const Row> rows) {
  try {
    return std::make_shared<const NuisanceModels>(plan.fit(d, rows));
  } catch (const FitError&) {
    return nullptr;
  }
}

inline std::optional<NodeEffect> try_estimate(const Dataset& d, std::span<const Row> rows, EstimatorKind kind,
                                              const NuisanceModels* m) {
  if (!m || rows.empty()) return std::nullopt;
  try {
    auto e = estimate(d, rows, kind, *m);
    e.influence.clear();
    return e;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

inline Tree grow_max_tree(const Dataset& d, std::span<const Row> root_rows, const GrowConfig& cfg) {
  cfg.validate();
  const ModelPlan plan = cfg.plan(d.schema());
  for (const auto& c : d.schema().columns)
    if (c.kind.kind == Kind::categorical && c.kind.levels.size() > kMaxCategoricalLevels)
      throw ConfigError("categorical covariate '" + c.name + "' has more than " +
                        std::to_string(kMaxCategoricalLevels) + " levels");

  Tree tree;
  tree.config = cfg;
  tree.schema = d.schema();
  const auto rows0 = std::make_shared<const RowList>(root_rows.begin(), root_rows.end());
  if (cfg.scope == NuisanceScope::whole) {
    try {
      tree.whole = std::make_shared<const NuisanceModels>(plan.fit(d, *rows0));
    } catch (const FitError& e) {
      throw FitError(std::string("whole-sample nuisance fit failed: ") + e.what());
    }
  }
  auto node_models = [&](std::span<const Row> rows) {
    return cfg.scope == NuisanceScope::whole ? tree.whole : detail::try_fit(plan, d, rows);
  };

  {
    TreeNode root;
    root.rows = rows0;
    root.n = rows0->size();
    root.models = node_models(*rows0);
    auto eff = detail::try_estimate(d, *rows0, cfg.estimator, root.models.get());
    if (!eff) throw FitError("cannot estimate the root effect (nuisance fit failed)");
    root.effect = *eff;
    tree.nodes.push_back(std::move(root));
  }

  std::deque<NodeId> queue{0};
  while (!queue.empty()) {
    const NodeId id = queue.front();
    queue.pop_front();
    TreeNode& nd = tree.node(id);
    if (nd.depth >= cfg.max_depth || nd.n < 2 * cfg.min_node) continue;
    const RowList& rows = *nd.rows;

    SearchResult res;
    if (cfg.scope == NuisanceScope::child) {
      res = search_direct(d, rows, cfg, plan, nullptr, nullptr);
    } else if (nd.models) {
      res = scan_node(d, rows, cfg, *nd.models);
    }
    nd.candidates = res.candidates;
    nd.inadmissible = res.inadmissible;
    if (!res.best) continue;

    auto [lr, rr] = partition_rows(d, rows, res.best->rule);
    const auto parent_models = nd.models;
    const int depth = nd.depth + 1;
    SplitInfo info;
    info.rule = res.best->rule;
    info.statistic = res.best->contrast.statistic;
    info.t_hat = res.best->contrast.t_hat;
    info.variance = res.best->contrast.variance;
    for (RowList* part : {&lr, &rr}) {
      TreeNode c;
      c.id = static_cast<NodeId>(tree.nodes.size());
      c.parent = id;
      c.depth = depth;
      c.rows = std::make_shared<const RowList>(std::move(*part));
      c.n = c.rows->size();
      c.models = node_models(*c.rows);
      auto eff = detail::try_estimate(d, *c.rows, cfg.estimator, c.models.get());
      if (!eff) {
        eff = detail::try_estimate(d, *c.rows, cfg.estimator, parent_models.get());
        c.effect_fallback = true;
      }
      if (!eff) throw FitError("cannot estimate the effect of node " + std::to_string(c.id));
      c.effect = *eff;
      (part == &lr ? info.left : info.right) = c.id;
      tree.nodes.push_back(std::move(c));
    }
    tree.node(id).split = info;
    queue.push_back(info.left);
    queue.push_back(info.right);
  }
  return tree;
}

inline Tree grow_max_tree(const Dataset& d, const SubgroupMask& mask, const GrowConfig& cfg) {
  const RowList rows = mask.rows();
  return grow_max_tree(d, rows, cfg);
}

}  // namespace cit
