// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "cit/cit.hpp"
#include "oracles.hpp"

using namespace cit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 3) { return fmt_num(v, prec); }

SimSetting setting(SettingKind k, std::size_t n, std::uint64_t seed) {
  SimSetting s;
  s.kind = k;
  s.n = n;
  s.seed = seed;
  return s;
}

bool within(double got, double want, double tol) { return std::abs(got - want) <= tol + 1e-12; }

// ---- 1 and 2: Table 1 at desk scale ----

struct Table {
  ExperimentSummary g_hom, g_het, dr_het, ipw_het;
};

const Table& table() {
  static const Table t = [] {
    const std::size_t R = 200;
    const std::uint64_t seed = 2024;
    const unsigned threads = default_threads();
    const auto hom = setting(SettingKind::homogeneous, 1000, 0);
    const auto het = setting(SettingKind::heterogeneous, 1000, 0);
    Table out;
    out.g_hom = run_experiment(hom, parse_algo("g", hom), R, seed, threads);
    out.g_het = run_experiment(het, parse_algo("g", het), R, seed, threads);
    out.dr_het = run_experiment(het, parse_algo("dr", het), R, seed, threads);
    out.ipw_het = run_experiment(het, parse_algo("ipw", het), R, seed, threads);
    for (const auto* s : {&out.g_hom, &out.g_het, &out.dr_het, &out.ipw_het}) std::cout << summary_table(*s);
    return out;
  }();
  return t;
}

Outcome criterion1() {
  const Table& t = table();
  struct Cell {
    std::string name;
    double got, want;
    bool ok;
  };
  const std::vector<Cell> cells{
      {"G hom correct", t.g_hom.correct_tree_prop, 1.00, within(t.g_hom.correct_tree_prop, 1.00, 0.10)},
      {"G het correct", t.g_het.correct_tree_prop, 0.99, within(t.g_het.correct_tree_prop, 0.99, 0.10)},
      {"G het first", *t.g_het.correct_first_split_prop, 1.00, within(*t.g_het.correct_first_split_prop, 1.00, 0.10)},
      {"DR het correct", t.dr_het.correct_tree_prop, 0.94, within(t.dr_het.correct_tree_prop, 0.94, 0.10)},
      {"DR het PPS", t.dr_het.pps, 0.99, within(t.dr_het.pps, 0.99, 0.10)},
      {"DR het first", *t.dr_het.correct_first_split_prop, 1.00,
       within(*t.dr_het.correct_first_split_prop, 1.00, 0.10)},
      {"IPW het correct", t.ipw_het.correct_tree_prop, 0.06, t.ipw_het.correct_tree_prop <= 0.30},
  };
  Outcome o{true, ""};
  for (const auto& c : cells) {
    o.pass = o.pass && c.ok;
    o.detail += c.name + " " + num(c.got) + " (reference " + num(c.want, 2) + (c.ok ? "" : ", OUT") + "); ";
  }
  for (const auto* s : {&t.g_hom, &t.g_het, &t.dr_het, &t.ipw_het})
    if (s->failures) {
      o.pass = false;
      o.detail += s->algorithm + " had " + std::to_string(s->failures) + " failed replicates; ";
    }
  return o;
}

Outcome criterion2() {
  const Table& t = table();
  const double g = t.g_het.correct_tree_prop, dr = t.dr_het.correct_tree_prop, ipw = t.ipw_het.correct_tree_prop;
  return {g >= dr && dr >= ipw, "correct trees G " + num(g) + " >= DR " + num(dr) + " >= IPW " + num(ipw)};
}

// ---- 3 and 4: fixed split x4 < 0 ----

struct FixedSplit {
  Dataset data;
  RowList left, right;
};

FixedSplit fixed_split(SettingKind k, std::size_t n, std::uint64_t seed) {
  auto g = generate(setting(k, n, seed));
  FixedSplit f{std::move(g.data), {}, {}};
  for (std::size_t i = 0; i < f.data.n(); ++i) (f.data.x(3, i) < 0 ? f.left : f.right).push_back(static_cast<Row>(i));
  return f;
}

SplitContext context(const Dataset& d, EstimatorKind kind, NuisanceScope scope, const SimSetting& s) {
  SplitContext ctx;
  ctx.data = &d;
  ctx.scope = scope;
  std::optional<DesignSpec> prop, out;
  if (kind != EstimatorKind::g) prop = design_preset(s, "true", true).spec;
  if (kind != EstimatorKind::ipw) out = design_preset(s, "true", false).spec;
  ctx.plan = ModelPlan::make(kind, prop, out, d.schema(), 0.01);
  return ctx;
}

Outcome criterion3() {
  const std::size_t reps = 2000, n = 1000;
  const auto s = setting(SettingKind::homogeneous, n, 0);
  Outcome o{true, ""};
  for (auto kind : {EstimatorKind::ipw, EstimatorKind::dr}) {
    std::vector<int> exceed(reps, 0), usable(reps, 0);
    parallel_for(reps, default_threads(), [&](std::size_t r) {
      const auto f = fixed_split(SettingKind::homogeneous, n, rng::derive_seed(3, "null", r));
      const auto c = evaluate_split(context(f.data, kind, NuisanceScope::parent, s), f.left, f.right);
      if (!c) return;
      usable[r] = 1;
      exceed[r] = c->statistic > 3.84;
    });
    const double used = std::accumulate(usable.begin(), usable.end(), 0.0);
    const double rate = std::accumulate(exceed.begin(), exceed.end(), 0.0) / used;
    const bool ok = rate >= 0.03 && rate <= 0.08 && used == reps;
    o.pass = o.pass && ok;
    o.detail += std::string(to_string(kind)) + " exceedance " + num(rate, 4) + " over " + num(used, 0) + " reps; ";
  }
  return o;
}

Outcome criterion4() {
  const std::size_t reps = 2000, n = 2000;
  const auto s = setting(SettingKind::heterogeneous, n, 0);
  Outcome o{true, ""};
  for (auto scope : {NuisanceScope::parent, NuisanceScope::child}) {
    std::vector<double> t(reps, std::nan("")), v(reps, std::nan(""));
    parallel_for(reps, default_threads(), [&](std::size_t r) {
      const auto f = fixed_split(SettingKind::heterogeneous, n, rng::derive_seed(4, "variance", r));
      const auto c = evaluate_split(context(f.data, EstimatorKind::ipw, scope, s), f.left, f.right);
      if (!c) return;
      t[r] = c->t_hat;
      v[r] = c->variance;
    });
    double k = 0, mt = 0, mv = 0;
    for (std::size_t r = 0; r < reps; ++r)
      if (!std::isnan(t[r])) {
        k += 1;
        mt += t[r];
        mv += v[r];
      }
    mt /= k;
    mv /= k;
    double mc = 0;
    for (std::size_t r = 0; r < reps; ++r)
      if (!std::isnan(t[r])) mc += (t[r] - mt) * (t[r] - mt);
    mc /= k - 1;
    const double rel = mv / mc - 1;
    const bool ok = std::abs(rel) < 0.10 && k == reps;
    o.pass = o.pass && ok;
    o.detail += std::string(scope == NuisanceScope::parent ? "pooled" : "per-child") + " mean estimate " + num(mv, 5) +
                " vs Monte Carlo " + num(mc, 5) + " (rel " + num(rel, 3) + "); ";
  }
  return o;
}

// ---- 5: double robustness ----

Outcome criterion5() {
  const std::size_t reps = 40, n = 20000;
  const auto s = setting(SettingKind::heterogeneous, n, 0);
  struct Variant {
    std::string name;
    EstimatorKind kind;
    const char* prop;
    const char* out;
  };
  const std::vector<Variant> variants{{"DR true-prop/mis-outcome", EstimatorKind::dr, "true", "mis-func"},
                                      {"DR mis-prop/true-outcome", EstimatorKind::dr, "mis-func", "true"},
                                      {"G mis-outcome", EstimatorKind::g, nullptr, "mis-func"}};
  Outcome o{true, ""};
  for (const auto& var : variants) {
    std::optional<DesignSpec> prop, out;
    if (var.prop) prop = design_preset(s, var.prop, true).spec;
    if (var.out) out = design_preset(s, var.out, false).spec;
    // Per replicate: effects in x4 <= 0 (truth 2) and x4 > 0 (truth 5), whole-sample fits.
    std::vector<std::array<double, 2>> eff(reps);
    parallel_for(reps, default_threads(), [&](std::size_t r) {
      const auto f = fixed_split(SettingKind::heterogeneous, n, rng::derive_seed(5, "bias", r));
      const auto plan = ModelPlan::make(var.kind, prop, out, f.data.schema(), 0.01);
      const auto m = plan.fit(f.data, f.data.all_rows());
      eff[r] = {estimate(f.data, f.left, var.kind, m).effect, estimate(f.data, f.right, var.kind, m).effect};
    });
    double b0 = 0, b1 = 0;
    for (const auto& e : eff) {
      b0 += e[0] - 2.0;
      b1 += e[1] - 5.0;
    }
    const double bias = std::max(std::abs(b0), std::abs(b1)) / static_cast<double>(reps);
    const bool ok = var.kind == EstimatorKind::dr ? bias < 0.05 : bias > 0.05;
    o.pass = o.pass && ok;
    o.detail += var.name + " max |bias| " + num(bias, 4) + "; ";
  }
  return o;
}

// ---- 6 and 7: oracle equivalence ----

Outcome criterion6() {
  std::mt19937_64 eng(6);
  int match = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Tree t = oracles::random_tree(eng, 5);
    const auto seq = weakest_link_sequence(t);
    const auto want = oracles::brute_force_prune(t);
    bool same = seq.pruned == want.pruned && seq.trees.size() == want.internal.size();
    for (std::size_t m = 0; same && m < seq.trees.size(); ++m) {
      const auto ids = seq.trees[m].internal_ids();
      same = std::set<NodeId>(ids.begin(), ids.end()) == want.internal[m];
    }
    match += same;
  }
  return {match == 100, std::to_string(match) + "/100 sequences identical"};
}

Outcome criterion7() {
  std::mt19937_64 eng(7);
  int match = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const int ka = 1 + static_cast<int>(eng() % 8), kb = 1 + static_cast<int>(eng() % 8);
    std::vector<int> a(500), b(500);
    for (std::size_t i = 0; i < 500; ++i) {
      a[i] = static_cast<int>(eng() % static_cast<std::uint64_t>(ka));
      b[i] = static_cast<int>(eng() % static_cast<std::uint64_t>(kb));
    }
    match += pairwise_similarity(a, b) == oracles::pps_pair_loop(a, b);
  }
  return {match == 50, std::to_string(match) + "/50 pairs identical"};
}

// ---- 8: relative speed ----

Outcome criterion8() {
  const std::size_t datasets = 20;
  const auto s = setting(SettingKind::heterogeneous, 1000, 0);
  std::vector<Dataset> data;
  for (std::size_t r = 0; r < datasets; ++r) data.push_back(generate(setting(SettingKind::heterogeneous, 1000, 800 + r)).data);
  auto mean_time = [&](const char* algo) {
    const auto a = parse_algo(algo, s);
    fit_cit(data[0], a.fit);  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& d : data) fit_cit(d, a.fit);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / datasets;
  };
  const double dr = mean_time("dr"), ipw = mean_time("ipw"), g = mean_time("g");
  const bool ok = ipw / dr >= 2 && g / dr >= 2;
  return {ok, "mean fit seconds DR " + num(dr, 5) + ", IPW " + num(ipw, 5) + ", G " + num(g, 5) + "; IPW/DR " +
                  num(ipw / dr, 2) + "x, G/DR " + num(g / dr, 2) + "x"};
}

// ---- 9: CLI determinism ----

std::pair<int, std::string> capture(const std::string& cmd) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, out};
  char buf[4096];
  std::size_t k;
  while ((k = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, k);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

Outcome criterion9() {
  const std::string cmd = std::string(CIT_BINARY) +
                          " simulate --setting heterog --algo dr --reps 20 --n 1000 --seed 9 --threads 1 2>/dev/null";
  const auto a = capture(cmd), b = capture(cmd);
  const bool ok = a.first == 0 && b.first == 0 && !a.second.empty() && a.second == b.second;
  return {ok, std::to_string(a.second.size()) + " bytes, " + (a.second == b.second ? "identical" : "different")};
}

}  // namespace

int main() {
  const std::vector<std::function<Outcome()>> checks{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                     criterion6, criterion7, criterion8, criterion9};
  int failed = 0;
  for (std::size_t k = 0; k < checks.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[k]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << k + 1 << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " [" << num(sec, 1)
              << " s]" << std::endl;
  }
  return failed ? 1 : 0;
}
