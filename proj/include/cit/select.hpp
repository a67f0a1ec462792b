#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "cit/data.hpp"
#include "cit/estimators.hpp"
#include "cit/parallel.hpp"
#include "cit/prune.hpp"
#include "cit/rng.hpp"
#include "cit/tree.hpp"

namespace cit {

struct SelectOptions {
  double lambda = 3.84;
  bool reuse_training_fits = false;
};

// Recomputes internal-node statistics on validation rows. Node rows come from
// routing through a reference tree that contains every candidate, so a node's
// statistic is shared by all candidates and computed once.
class ValidationScorer {
 public:
  ValidationScorer(const Tree& reference, const Dataset& validation, SelectOptions opt = {})
      : ref_(reference), val_(validation), opt_(opt), plan_(reference.config.plan(validation.schema())),
        rows_(reference.nodes.size()) {
    for (std::size_t i = 0; i < val_.n(); ++i) {
      NodeId id = ref_.root;
      rows_[id].push_back(static_cast<Row>(i));
      while (const auto& s = ref_.node(id).split) {
        auto left = s->rule.goes_left(val_.x(static_cast<std::size_t>(s->rule.covariate), i));
        if (!left) left = ref_.node(s->left).n >= ref_.node(s->right).n;
        id = *left ? s->left : s->right;
        rows_[id].push_back(static_cast<Row>(i));
      }
    }
    if (ref_.config.scope == NuisanceScope::whole) {
      if (opt_.reuse_training_fits) {
        whole_ = ref_.whole;
      } else {
        try {
          whole_ = std::make_shared<const NuisanceModels>(plan_.fit(val_, val_.all_rows()));
        } catch (const FitError&) {
        }
      }
    }
  }

  const RowList& rows(NodeId id) const { return rows_.at(static_cast<std::size_t>(id)); }

  // Statistic of the reference split at h on validation data; 0 if incomputable.
  double statistic(NodeId h) {
    if (auto it = cache_.find(h); it != cache_.end()) return it->second;
    const double g = compute(h);
    cache_[h] = g;
    return g;
  }

  double complexity(const Tree& candidate) {
    double s = 0;
    std::size_t k = 0;
    for (NodeId id : candidate.internal_ids()) {
      s += statistic(id);
      ++k;
    }
    return s - opt_.lambda * static_cast<double>(k);
  }

 private:
  double compute(NodeId h) {
    const auto& split = ref_.node(h).split;
    if (!split) return 0.0;
    const GrowConfig& cfg = ref_.config;
    SplitContext ctx;
    ctx.data = &val_;
    ctx.plan = plan_;
    ctx.scope = cfg.scope;
    ctx.variance = cfg.variance;
    ctx.min_node = 1;
    ctx.min_per_arm = 1;
    switch (cfg.scope) {
      case NuisanceScope::whole:
        if (!whole_) return 0.0;
        ctx.whole = whole_.get();
        break;
      case NuisanceScope::parent:
        if (opt_.reuse_training_fits) {
          ctx.parent = ref_.node(h).models.get();
          if (!ctx.parent) return 0.0;
        }
        break;
      case NuisanceScope::child:
        if (opt_.reuse_training_fits) {
          ctx.left = ref_.node(split->left).models.get();
          ctx.right = ref_.node(split->right).models.get();
          if (!ctx.left || !ctx.right) return 0.0;
        }
        break;
    }
    try {
      const auto c = evaluate_split(ctx, rows(split->left), rows(split->right));
      return c ? c->statistic : 0.0;
    } catch (const Error&) {
      return 0.0;
    }
  }

  const Tree& ref_;
  const Dataset& val_;
  SelectOptions opt_;
  ModelPlan plan_;
  std::vector<RowList> rows_;
  std::shared_ptr<const NuisanceModels> whole_;
  std::map<NodeId, double> cache_;
};

inline double validation_complexity(const Tree& candidate, const Dataset& validation, SelectOptions opt = {}) {
  ValidationScorer scorer(candidate, validation, opt);
  return scorer.complexity(candidate);
}

struct Selection {
  std::vector<double> complexities;
  std::vector<std::size_t> internal_counts;
  std::size_t chosen = 0;
};

inline Selection select_index(const PruneSequence& seq, const Dataset& validation, SelectOptions opt = {}) {
  if (seq.trees.empty()) throw Error("select_final: empty sequence");
  ValidationScorer scorer(seq.trees.front(), validation, opt);
  Selection s;
  for (std::size_t m = 0; m < seq.trees.size(); ++m) {
    s.complexities.push_back(scorer.complexity(seq.trees[m]));
    s.internal_counts.push_back(seq.trees[m].internal_count());
    const bool better = s.complexities[m] > s.complexities[s.chosen] ||
                        (s.complexities[m] == s.complexities[s.chosen] &&
                         s.internal_counts[m] < s.internal_counts[s.chosen]);
    if (m > 0 && better) s.chosen = m;
  }
  return s;
}

inline Tree select_final(const PruneSequence& seq, const Dataset& validation, SelectOptions opt = {}) {
  return seq.trees.at(select_index(seq, validation, opt).chosen);
}

// ---- end to end ----

struct FitConfig {
  GrowConfig grow;
  double lambda = 3.84;
  double train_frac = 0.8;
  bool reuse_training_fits = false;

  void validate() const {
    grow.validate();
    if (!(train_frac > 0 && train_frac < 1)) throw ConfigError("train fraction must lie in (0, 1)");
    if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
  }
};

struct FitResult {
  RowList train_rows, validation_rows;
  Tree max_tree;
  PruneSequence sequence;
  Selection selection;
  Tree final_tree;
};

// Random train/validation partition of the rows, each part in ascending order.
inline std::pair<RowList, RowList> train_validation_split(std::size_t n, double train_frac, std::uint64_t seed) {
  RowList perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<Row>(i);
  auto eng = rng::stream(seed, "train-validation");
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> u(0, i - 1);
    std::swap(perm[i - 1], perm[u(eng)]);
  }
  const std::size_t nt = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  RowList tr(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nt));
  RowList va(perm.begin() + static_cast<std::ptrdiff_t>(nt), perm.end());
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  return {std::move(tr), std::move(va)};
}

inline FitResult fit_cit(const Dataset& d, const FitConfig& cfg) {
  cfg.validate();
  FitResult r;
  std::tie(r.train_rows, r.validation_rows) = train_validation_split(d.n(), cfg.train_frac, cfg.grow.seed);
  if (r.validation_rows.empty() || r.train_rows.empty()) throw ConfigError("train fraction leaves an empty part");
  r.max_tree = grow_max_tree(d, r.train_rows, cfg.grow);
  r.sequence = weakest_link_sequence(r.max_tree);
  const Dataset val = d.subset(r.validation_rows);
  r.selection = select_index(r.sequence, val, {cfg.lambda, cfg.reuse_training_fits});
  r.final_tree = r.sequence.trees[r.selection.chosen];
  return r;
}

// ---- bootstrap ----

// Type-7 sample quantile of sorted values.
inline double quantile7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::nan("");
  const double h = (static_cast<double>(sorted.size()) - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct TerminalInterval {
  NodeId id = 0;
  double point = 0, lower = 0, upper = 0;
};

struct BootstrapResult {
  std::vector<TerminalInterval> terminals;
  std::size_t requested = 0, used = 0, dropped = 0, redraws = 0;
  double level = 0.95;
};

// Terminal effects for a frozen tree structure on data d, with the configured
// estimator and scope. Rows are grouped by terminal via group[i].
inline std::optional<std::vector<double>> terminal_effects(const Tree& tree, const Dataset& d,
                                                           const std::vector<RowList>& groups) {
  const GrowConfig& cfg = tree.config;
  const ModelPlan plan = cfg.plan(d.schema());
  try {
    std::optional<NuisanceModels> whole;
    if (cfg.scope == NuisanceScope::whole) whole = plan.fit(d, d.all_rows());
    std::vector<double> out;
    for (const auto& rows : groups) {
      const std::size_t k = detail::treated(d, rows);
      if (rows.empty() || k == 0 || k == rows.size()) return std::nullopt;
      const NuisanceModels m = whole ? *whole : plan.fit(d, rows);
      out.push_back(estimate(d, rows, cfg.estimator, m).effect);
    }
    return out;
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline constexpr std::size_t kDefaultBootstrapReplicates = 1000;

inline BootstrapResult bootstrap_effects(const Tree& tree, const Dataset& d,
                                         std::size_t B = kDefaultBootstrapReplicates, double level = 0.95,
                                         std::uint64_t seed = 1, unsigned threads = 1) {
  if (B < 1) throw ConfigError("bootstrap count must be at least 1");
  if (!(level > 0 && level < 1)) throw ConfigError("interval level must lie in (0, 1)");
  const auto terms = tree.terminal_ids();
  std::vector<std::size_t> slot(tree.nodes.size(), 0);
  for (std::size_t k = 0; k < terms.size(); ++k) slot[static_cast<std::size_t>(terms[k])] = k;
  std::vector<std::size_t> where(d.n());
  std::vector<RowList> groups(terms.size());
  for (std::size_t i = 0; i < d.n(); ++i) {
    where[i] = slot[static_cast<std::size_t>(tree.route(d, i))];
    groups[where[i]].push_back(static_cast<Row>(i));
  }
  const auto point = terminal_effects(tree, d, groups);
  if (!point) throw FitError("cannot estimate terminal effects on the bootstrap data");

  std::vector<std::optional<std::vector<double>>> reps(B);
  std::vector<std::size_t> redraws(B, 0);
  parallel_for(B, threads, [&](std::size_t b) {
    auto eng = rng::stream(seed, "bootstrap", b);
    std::uniform_int_distribution<std::size_t> u(0, d.n() - 1);
    for (int attempt = 0; attempt <= 10; ++attempt) {
      RowList idx(d.n());
      for (auto& i : idx) i = static_cast<Row>(u(eng));
      const Dataset bs = d.subset(idx);
      std::vector<RowList> g(terms.size());
      for (std::size_t r = 0; r < idx.size(); ++r) g[where[idx[r]]].push_back(static_cast<Row>(r));
      if (auto eff = terminal_effects(tree, bs, g)) {
        reps[b] = std::move(eff);
        return;
      }
      if (attempt < 10) ++redraws[b];
    }
  });

  BootstrapResult res;
  res.requested = B;
  res.level = level;
  std::vector<std::vector<double>> by_term(terms.size());
  for (std::size_t b = 0; b < B; ++b) {
    res.redraws += redraws[b];
    if (!reps[b]) {
      ++res.dropped;
      continue;
    }
    ++res.used;
    for (std::size_t k = 0; k < terms.size(); ++k) by_term[k].push_back((*reps[b])[k]);
  }
  for (std::size_t k = 0; k < terms.size(); ++k) {
    auto& v = by_term[k];
    std::sort(v.begin(), v.end());
    res.terminals.push_back({terms[k], (*point)[k], quantile7(v, (1 - level) / 2), quantile7(v, (1 + level) / 2)});
  }
  return res;
}

}  // namespace cit
