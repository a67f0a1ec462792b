#pragma once

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "cit/data.hpp"
#include "cit/error.hpp"
#include "cit/prune.hpp"
#include "cit/select.hpp"
#include "cit/simulate.hpp"
#include "cit/tree.hpp"

namespace cit {

using json = nlohmann::json;

inline constexpr const char* kTreeFormat = "cit-tree/1";

inline json to_json(const Schema& s) {
  json cols = json::array();
  for (const auto& c : s.columns) {
    json j{{"name", c.name}, {"kind", kind_name(c.kind.kind)}};
    if (c.kind.is_discrete()) j["levels"] = c.kind.levels;
    cols.push_back(j);
  }
  return {{"treatment", s.treatment_column}, {"outcome", s.outcome_column}, {"covariates", cols}};
}

inline Schema schema_from_json(const json& j) {
  try {
    Schema s;
    s.treatment_column = j.at("treatment").get<std::string>();
    s.outcome_column = j.at("outcome").get<std::string>();
    for (const auto& c : j.at("covariates")) {
      const std::string kind = c.value("kind", "continuous");
      Column col{c.at("name").get<std::string>(), {}};
      if (kind == "continuous") col.kind = CovariateKind::continuous();
      else if (kind == "categorical") col.kind = CovariateKind::categorical(c.at("levels").get<std::vector<std::string>>());
      else if (kind == "ordinal") col.kind = CovariateKind::ordinal(c.at("levels").get<std::vector<std::string>>());
      else throw ConfigError("schema: unknown kind '" + kind + "' for column '" + col.name + "'");
      s.columns.push_back(std::move(col));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema '" + path + "'");
  try {
    return schema_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("schema '" + path + "': " + e.what());
  }
}

inline json to_json(const GrowConfig& c) {
  json j{{"estimator", to_string(c.estimator)},
         {"scope", to_string(c.scope)},
         {"variance", to_string(c.variance)},
         {"min_node", c.min_node},
         {"min_per_arm", c.min_per_arm},
         {"max_depth", c.max_depth},
         {"epsilon", c.epsilon},
         {"seed", c.seed},
         {"exclude_columns", c.exclude_columns}};
  j["propensity_spec"] = c.propensity_spec ? json(c.propensity_spec->str()) : json(nullptr);
  j["outcome_spec"] = c.outcome_spec ? json(c.outcome_spec->str()) : json(nullptr);
  return j;
}

inline GrowConfig grow_config_from_json(const json& j) {
  GrowConfig c;
  c.estimator = parse_estimator(j.at("estimator").get<std::string>());
  c.scope = parse_scope(j.at("scope").get<std::string>());
  c.variance = parse_variance(j.at("variance").get<std::string>());
  c.min_node = j.at("min_node").get<std::size_t>();
  c.min_per_arm = j.at("min_per_arm").get<std::size_t>();
  c.max_depth = j.at("max_depth").get<int>();
  c.epsilon = j.at("epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.exclude_columns = j.value("exclude_columns", std::vector<std::string>{});
  if (!j.at("propensity_spec").is_null()) c.propensity_spec = DesignSpec::parse(j["propensity_spec"].get<std::string>());
  if (!j.at("outcome_spec").is_null()) c.outcome_spec = DesignSpec::parse(j["outcome_spec"].get<std::string>());
  return c;
}

inline json to_json(const SplitRule& r, const Schema& s) {
  const Column& c = s.columns.at(static_cast<std::size_t>(r.covariate));
  json j{{"covariate", c.name}};
  auto names = [&](const std::vector<int>& codes) {
    std::vector<std::string> out;
    for (int k : codes) out.push_back(c.kind.levels.at(static_cast<std::size_t>(k)));
    return out;
  };
  switch (r.form) {
    case SplitRule::Form::threshold:
      j["type"] = "threshold";
      j["threshold"] = r.threshold;
      break;
    case SplitRule::Form::levels:
      j["type"] = "levels";
      j["left_levels"] = names(r.left_levels);
      j["right_levels"] = names(r.right_levels);
      break;
    case SplitRule::Form::ordinal:
      j["type"] = "ordinal";
      j["first_right"] = c.kind.levels.at(static_cast<std::size_t>(r.cut));
      break;
  }
  return j;
}

inline SplitRule split_rule_from_json(const json& j, const Schema& s) {
  SplitRule r;
  const auto col = s.find(j.at("covariate").get<std::string>());
  if (!col) throw DataError("tree: split on unknown covariate '" + j["covariate"].get<std::string>() + "'");
  r.covariate = static_cast<int>(*col);
  const auto& kind = s.columns[*col].kind;
  auto codes = [&](const json& arr) {
    std::vector<int> out;
    for (const auto& lv : arr) {
      auto k = kind.level_index(lv.get<std::string>());
      if (!k) throw DataError("tree: unknown level '" + lv.get<std::string>() + "'");
      out.push_back(*k);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  const std::string type = j.at("type").get<std::string>();
  if (type == "threshold") {
    r.form = SplitRule::Form::threshold;
    r.threshold = j.at("threshold").get<double>();
  } else if (type == "levels") {
    r.form = SplitRule::Form::levels;
    r.left_levels = codes(j.at("left_levels"));
    r.right_levels = codes(j.at("right_levels"));
  } else if (type == "ordinal") {
    r.form = SplitRule::Form::ordinal;
    auto k = kind.level_index(j.at("first_right").get<std::string>());
    if (!k) throw DataError("tree: unknown ordinal level");
    r.cut = *k;
  } else {
    throw DataError("tree: unknown split type '" + type + "'");
  }
  return r;
}

inline json to_json(const Tree& t) {
  json nodes = json::array();
  for (NodeId id : t.reachable()) {
    const TreeNode& nd = t.node(id);
    json j{{"id", id},
           {"parent", nd.parent},
           {"depth", nd.depth},
           {"n", nd.n},
           {"n_treated", nd.effect.n_treated},
           {"mu1", nd.effect.mu1},
           {"mu0", nd.effect.mu0},
           {"effect", nd.effect.effect},
           {"effect_fallback", nd.effect_fallback}};
    if (nd.split) {
      json s = to_json(nd.split->rule, t.schema);
      s["G"] = nd.split->statistic;
      s["t_hat"] = nd.split->t_hat;
      s["variance"] = nd.split->variance;
      s["left"] = nd.split->left;
      s["right"] = nd.split->right;
      j["split"] = s;
    } else {
      j["split"] = nullptr;
    }
    nodes.push_back(j);
  }
  return {{"format", kTreeFormat}, {"schema", to_json(t.schema)}, {"config", to_json(t.config)}, {"root", t.root},
          {"nodes", nodes}};
}

inline Tree tree_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kTreeFormat)
      throw DataError("tree: unsupported format '" + j["format"].get<std::string>() + "'");
    Tree t;
    t.schema = schema_from_json(j.at("schema"));
    t.config = grow_config_from_json(j.at("config"));
    t.root = j.at("root").get<NodeId>();
    NodeId max_id = 0;
    for (const auto& n : j.at("nodes")) max_id = std::max(max_id, n.at("id").get<NodeId>());
    t.nodes.resize(static_cast<std::size_t>(max_id) + 1);
    for (auto& nd : t.nodes) nd.active = false;
    for (const auto& n : j.at("nodes")) {
      TreeNode nd;
      nd.id = n.at("id").get<NodeId>();
      nd.parent = n.at("parent").get<NodeId>();
      nd.depth = n.at("depth").get<int>();
      nd.n = n.at("n").get<std::size_t>();
      nd.effect.n = nd.n;
      nd.effect.n_treated = n.at("n_treated").get<std::size_t>();
      nd.effect.mu1 = n.at("mu1").get<double>();
      nd.effect.mu0 = n.at("mu0").get<double>();
      nd.effect.effect = n.at("effect").get<double>();
      nd.effect.kind = t.config.estimator;
      nd.effect_fallback = n.value("effect_fallback", false);
      if (!n.at("split").is_null()) {
        const auto& s = n["split"];
        SplitInfo info;
        info.rule = split_rule_from_json(s, t.schema);
        info.statistic = s.at("G").get<double>();
        info.t_hat = s.value("t_hat", 0.0);
        info.variance = s.value("variance", 0.0);
        info.left = s.at("left").get<NodeId>();
        info.right = s.at("right").get<NodeId>();
        nd.split = info;
      }
      t.nodes.at(static_cast<std::size_t>(nd.id)) = std::move(nd);
    }
    auto valid = [&](NodeId id) { return id >= 0 && static_cast<std::size_t>(id) < t.nodes.size() && t.node(id).active; };
    if (!valid(t.root)) throw DataError("tree: root is not a listed node");
    for (const auto& nd : t.nodes)
      if (nd.active && nd.split && (!valid(nd.split->left) || !valid(nd.split->right)))
        throw DataError("tree: node " + std::to_string(nd.id) + " has a dangling child reference");
    std::vector<std::uint8_t> seen(t.nodes.size(), 0);
    std::vector<NodeId> stack{t.root};
    while (!stack.empty()) {
      const NodeId id = stack.back();
      stack.pop_back();
      if (seen[static_cast<std::size_t>(id)]++) throw DataError("tree: node " + std::to_string(id) + " is reached twice");
      if (const auto& sp = t.node(id).split) {
        stack.push_back(sp->left);
        stack.push_back(sp->right);
      }
    }
    return t;
  } catch (const json::exception& e) {
    throw DataError(std::string("tree: ") + e.what());
  }
}

inline Tree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open tree '" + path + "'");
  try {
    return tree_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError("tree '" + path + "': " + e.what());
  }
}

inline std::string fmt_num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string render_text(const Tree& t) {
  std::ostringstream out;
  auto rec = [&](auto&& self, NodeId id, const std::string& indent) -> void {
    const TreeNode& nd = t.node(id);
    out << indent << "[" << id << "] n=" << nd.n << " effect=" << fmt_num(nd.effect.effect)
        << " (mu1=" << fmt_num(nd.effect.mu1) << ", mu0=" << fmt_num(nd.effect.mu0) << ")";
    if (!nd.split) {
      out << " *\n";
      return;
    }
    out << " G=" << fmt_num(nd.split->statistic, 3) << "\n";
    const std::string rule = nd.split->rule.describe(t.schema);
    out << indent << "  if " << rule << ":\n";
    self(self, nd.split->left, indent + "    ");
    out << indent << "  else:\n";
    self(self, nd.split->right, indent + "    ");
  };
  rec(rec, t.root, "");
  return out.str();
}

// Path of split conditions leading to each node, for tables.
inline std::string node_path(const Tree& t, NodeId id) {
  std::vector<std::string> parts;
  while (t.node(id).parent >= 0) {
    const NodeId p = t.node(id).parent;
    const auto& s = *t.node(p).split;
    const std::string rule = s.rule.describe(t.schema);
    parts.push_back(s.left == id ? rule : "not(" + rule + ")");
    id = p;
  }
  std::string out;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out += (out.empty() ? "" : " & ") + *it;
  return out.empty() ? "(all)" : out;
}

inline std::string terminal_table(const Tree& t) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-6s %7s %10s %10s %10s  %s\n", "node", "n", "effect", "mu1", "mu0", "subgroup");
  out << buf;
  for (NodeId id : t.terminal_ids()) {
    const auto& e = t.node(id).effect;
    std::snprintf(buf, sizeof buf, "%-6d %7zu %10.4f %10.4f %10.4f  ", id, t.node(id).n, e.effect, e.mu1, e.mu0);
    out << buf << node_path(t, id) << "\n";
  }
  return out.str();
}

inline json to_json(const PruneSequence& seq) {
  json trees = json::array();
  for (const auto& t : seq.trees) trees.push_back(to_json(t));
  return {{"trees", trees}, {"pruned_nodes", seq.pruned}};
}

inline json selection_json(const PruneSequence& seq, const Selection& sel, double lambda) {
  json cands = json::array();
  for (std::size_t m = 0; m < seq.trees.size(); ++m)
    cands.push_back({{"index", m},
                     {"internal_nodes", sel.internal_counts[m]},
                     {"terminal_nodes", seq.trees[m].terminal_ids().size()},
                     {"complexity", sel.complexities[m]},
                     {"pruned_node", m == 0 ? json(nullptr) : json(seq.pruned[m - 1])}});
  return {{"lambda", lambda}, {"chosen", sel.chosen}, {"candidates", cands}};
}

inline json to_json(const BootstrapResult& b) {
  json terms = json::array();
  for (const auto& t : b.terminals)
    terms.push_back({{"node", t.id}, {"point", t.point}, {"lower", t.lower}, {"upper", t.upper}});
  return {{"replicates", b.requested}, {"used", b.used},   {"dropped", b.dropped},
          {"redraws", b.redraws},      {"level", b.level}, {"terminals", terms}};
}

inline json to_json(const ExperimentSummary& s, bool timing) {
  json j{{"setting", s.setting},
         {"algorithm", s.algorithm},
         {"n", s.n},
         {"reps", s.reps},
         {"seed", s.seed},
         {"failures", s.failures},
         {"mse", s.mse},
         {"correct_tree_prop", s.correct_tree_prop},
         {"mean_noise_splits", s.mean_noise_splits},
         {"pps", s.pps},
         {"mean_internal_nodes", s.mean_internal_nodes}};
  j["correct_first_split_prop"] = s.correct_first_split_prop ? json(*s.correct_first_split_prop) : json(nullptr);
  if (timing) j["mean_fit_seconds"] = s.mean_fit_seconds;
  if (!s.failure_messages.empty()) j["failure_messages"] = s.failure_messages;
  return j;
}

inline std::string summary_table(const ExperimentSummary& s) {
  char buf[512];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-10s %-28s %6s %8s %8s %8s %8s %8s %10s\n", "setting", "algorithm", "reps", "MSE",
                "correct", "noise", "PPS", "first", "fit_sec");
  out << buf;
  const std::string first = s.correct_first_split_prop ? fmt_num(*s.correct_first_split_prop, 3) : "-";
  std::snprintf(buf, sizeof buf, "%-10s %-28s %6zu %8.4f %8.3f %8.3f %8.3f %8s %10.5f\n", s.setting.c_str(),
                s.algorithm.c_str(), s.reps, s.mse, s.correct_tree_prop, s.mean_noise_splits, s.pps, first.c_str(),
                s.mean_fit_seconds);
  out << buf;
  if (s.failures) out << "failed replicates: " << s.failures << "\n";
  return out.str();
}

}  // namespace cit
