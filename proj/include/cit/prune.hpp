#pragma once

#include <limits>
#include <map>
#include <vector>

#include "cit/tree.hpp"

namespace cit {

inline double split_complexity(const Tree& tree, double lambda, const std::map<NodeId, double>& g_values) {
  double s = 0;
  std::size_t k = 0;
  for (NodeId id : tree.internal_ids()) {
    s += g_values.at(id);
    ++k;
  }
  return s - lambda * static_cast<double>(k);
}

// Uses the statistics recorded during growth.
inline double split_complexity(const Tree& tree, double lambda) {
  std::map<NodeId, double> g;
  for (NodeId id : tree.internal_ids()) g[id] = tree.node(id).split->statistic;
  return split_complexity(tree, lambda, g);
}

// Turns node id into a terminal node, detaching its descendants.
inline void collapse(Tree& tree, NodeId id) {
  std::vector<NodeId> stack;
  if (const auto& s = tree.node(id).split) stack = {s->left, s->right};
  while (!stack.empty()) {
    const NodeId c = stack.back();
    stack.pop_back();
    auto& nd = tree.node(c);
    if (nd.split) {
      stack.push_back(nd.split->left);
      stack.push_back(nd.split->right);
    }
    nd.active = false;
  }
  tree.node(id).split.reset();
}

struct PruneSequence {
  std::vector<Tree> trees;
  std::vector<NodeId> pruned;  // node pruned to get trees[i+1] from trees[i]
};

namespace detail {

// Sum and count of G over the internal nodes of the branch rooted at id.
inline std::pair<double, std::size_t> branch_g(const Tree& t, NodeId id) {
  const auto& s = t.node(id).split;
  if (!s) return {0.0, 0};
  auto [sl, kl] = branch_g(t, s->left);
  auto [sr, kr] = branch_g(t, s->right);
  return {s->statistic + sl + sr, 1 + kl + kr};
}

}  // namespace detail

inline PruneSequence weakest_link_sequence(const Tree& tree) {
  PruneSequence seq;
  seq.trees.push_back(tree);
  for (;;) {
    const Tree& cur = seq.trees.back();
    const auto internal = cur.internal_ids();
    if (internal.empty()) break;
    NodeId best = -1;
    double best_g = std::numeric_limits<double>::infinity();
    for (NodeId h : internal) {  // ascending ids, so ties keep the smaller id
      const auto [s, k] = detail::branch_g(cur, h);
      const double g = s / static_cast<double>(k);
      if (g < best_g) {
        best_g = g;
        best = h;
      }
    }
    if (best < 0) best = internal.front();
    Tree next = cur;
    collapse(next, best);
    seq.pruned.push_back(best);
    seq.trees.push_back(std::move(next));
  }
  return seq;
}

}  // namespace cit
