// cit: fit, apply and simulate causal interaction trees.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cit/cit.hpp"

namespace fs = std::filesystem;
using namespace cit;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kFit = 4 };

struct FitArgs {
  std::string data, schema, estimator, propensity, outcome, scope = "parent", variance = "auto";
  std::string missing = "drop", out = "cit-out";
  std::vector<std::string> exclude;
  double lambda = 3.84, train_frac = 0.8, epsilon = 0.01, level = 0.95;
  std::size_t min_node = 30, min_per_arm = 10, bootstrap = 0;
  int max_depth = 10;
  std::uint64_t seed = 1;
  bool reuse = false, sequence = false;
  unsigned threads = default_threads();
};

struct PredictArgs {
  std::string tree, data;
};

struct GenerateArgs {
  std::string setting, out, schema_out;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
};

struct SimulateArgs {
  std::string setting, algo, json_path;
  std::size_t reps = 200, n = 1000;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  bool timing = false;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "' (check --out)");
  f << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

int run_fit(const FitArgs& a) {
  FitConfig cfg;
  cfg.grow.estimator = parse_estimator(a.estimator);
  cfg.grow.scope = parse_scope(a.scope);
  cfg.grow.variance = parse_variance(a.variance);
  if (cfg.grow.estimator != EstimatorKind::g && a.propensity.empty())
    throw ConfigError("--propensity-spec is required for estimator " + a.estimator);
  if (cfg.grow.estimator != EstimatorKind::ipw && a.outcome.empty())
    throw ConfigError("--outcome-spec is required for estimator " + a.estimator);
  try {
    if (!a.propensity.empty()) cfg.grow.propensity_spec = DesignSpec::parse(a.propensity);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--propensity-spec: ") + e.what());
  }
  try {
    if (!a.outcome.empty()) cfg.grow.outcome_spec = DesignSpec::parse(a.outcome);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--outcome-spec: ") + e.what());
  }
  cfg.grow.min_node = a.min_node;
  cfg.grow.min_per_arm = a.min_per_arm;
  cfg.grow.max_depth = a.max_depth;
  cfg.grow.epsilon = a.epsilon;
  cfg.grow.seed = a.seed;
  cfg.grow.exclude_columns = a.exclude;
  cfg.lambda = a.lambda;
  cfg.train_frac = a.train_frac;
  cfg.reuse_training_fits = a.reuse;
  cfg.validate();

  const Schema schema = load_schema(a.schema);
  for (const auto& c : a.exclude)
    if (!schema.find(c)) throw ConfigError("--exclude: unknown covariate '" + c + "'");
  cfg.grow.plan(schema);  // surfaces spec/schema mismatches as config errors

  const auto loaded = load_csv(a.data, schema, a.missing == "drop" ? MissingPolicy::drop_rows : MissingPolicy::reject);
  if (loaded.dropped_rows) std::cerr << "dropped " << loaded.dropped_rows << " rows with missing cells\n";
  const Dataset& d = loaded.data;
  std::cerr << "fitting " << a.estimator << " tree on " << d.n() << " rows\n";

  const FitResult r = fit_cit(d, cfg);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  write_file(out / "tree.json", dump(to_json(r.final_tree)));
  write_file(out / "tree.txt", render_text(r.final_tree));
  write_file(out / "selection.json", dump(selection_json(r.sequence, r.selection, cfg.lambda)));
  if (a.sequence) write_file(out / "sequence.json", dump(to_json(r.sequence)));
  if (a.bootstrap > 0) {
    const auto b = bootstrap_effects(r.final_tree, d, a.bootstrap, a.level, a.seed, a.threads);
    if (b.dropped) std::cerr << "bootstrap: dropped " << b.dropped << " of " << b.requested << " replicates\n";
    write_file(out / "bootstrap.json", dump(to_json(b)));
  }
  std::cout << terminal_table(r.final_tree);
  return kOk;
}

int run_predict(const PredictArgs& a) {
  const Tree tree = load_tree(a.tree);
  const Schema& s = tree.schema;
  std::ifstream in(a.data, std::ios::binary);
  if (!in) throw DataError("cannot open '" + a.data + "'");
  CsvReader reader(in);
  std::vector<std::string> rec;
  if (!reader.next(rec)) throw DataError("csv: empty file");
  const HeaderMap hm = map_header(s, rec, false);
  const std::size_t width = rec.size();

  std::ostream& out = std::cout;
  for (const auto& f : rec) out << csv_field(f) << ',';
  out << "effect,terminal_id\n";
  std::size_t line = 1, fallbacks = 0;
  while (reader.next(rec)) {
    ++line;
    if (rec.size() == 1 && detail::trim(rec[0]).empty()) continue;
    if (rec.size() != width)
      throw DataError("csv: line " + std::to_string(line) + " has " + std::to_string(rec.size()) + " fields, expected " +
                      std::to_string(width));
    // Only the cells on the routing path are parsed.
    const NodeId id = tree.route(
        [&](int j) {
          const auto& col = s.columns[static_cast<std::size_t>(j)];
          const std::string& cell = rec[hm.covariate[static_cast<std::size_t>(j)]];
          if (detail::is_missing(cell))
            throw DataError("missing '" + col.name + "' at line " + std::to_string(line));
          return parse_cell(col, cell, line);
        },
        &fallbacks);
    for (const auto& f : rec) out << csv_field(f) << ',';
    out << format_double(tree.node(id).effect.effect) << ',' << id << '\n';
  }
  if (fallbacks) std::cerr << fallbacks << " routing decisions met unseen levels and followed the larger child\n";
  return kOk;
}

int run_generate(const GenerateArgs& a) {
  SimSetting s = parse_setting(a.setting);
  s.n = a.n;
  s.seed = a.seed;
  const Generated g = generate(s);
  if (a.out.empty()) {
    write_csv(std::cout, g.data);
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + a.out + "' (check --out)");
    write_csv(f, g.data);
  }
  if (!a.schema_out.empty()) write_file(a.schema_out, dump(to_json(g.data.schema())));
  return kOk;
}

int run_simulate(const SimulateArgs& a) {
  SimSetting s = parse_setting(a.setting);
  s.n = a.n;
  if (s.n < 10) throw ConfigError("--n must be at least 10");
  const AlgoConfig algo = parse_algo(a.algo, s);
  const ExperimentSummary sum = run_experiment(s, algo, a.reps, a.seed, a.threads);
  const std::string js = dump(to_json(sum, a.timing));
  if (a.json_path.empty()) {
    std::cout << js;
    std::cerr << summary_table(sum);
  } else {
    write_file(a.json_path, js);
    std::cout << summary_table(sum);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal interaction trees: fit, predict and simulate"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Grow, prune and select a tree from a CSV file");
  fit->add_option("--data", fa.data, "Input CSV")->required();
  fit->add_option("--schema", fa.schema, "Schema JSON")->required();
  fit->add_option("--estimator", fa.estimator, "Subgroup effect estimator")
      ->required()
      ->check(CLI::IsMember({"ipw", "g", "dr"}));
  fit->add_option("--propensity-spec", fa.propensity, "Propensity model terms (ipw, dr)");
  fit->add_option("--outcome-spec", fa.outcome, "Outcome model terms (g, dr)");
  fit->add_option("--scope", fa.scope, "Data used for nuisance fits")->check(CLI::IsMember({"whole", "parent", "child"}));
  fit->add_option("--variance", fa.variance, "Variance method")
      ->check(CLI::IsMember({"auto", "pooled-sandwich", "per-child-sandwich", "influence"}));
  fit->add_option("--lambda", fa.lambda, "Complexity penalty per split");
  fit->add_option("--train-frac", fa.train_frac, "Share of rows used for growing");
  fit->add_option("--min-node", fa.min_node, "Minimum rows per child");
  fit->add_option("--min-per-arm", fa.min_per_arm, "Minimum treated and control rows per child");
  fit->add_option("--max-depth", fa.max_depth, "Maximum tree depth");
  fit->add_option("--epsilon", fa.epsilon, "Propensity truncation bound");
  fit->add_option("--exclude", fa.exclude, "Covariates never split on");
  fit->add_option("--missing", fa.missing, "Rows with missing cells")->check(CLI::IsMember({"reject", "drop"}));
  fit->add_flag("--reuse-training-fits", fa.reuse, "Score validation data with the training fits (default off)");
  fit->add_option("--seed", fa.seed, "Random seed");
  fit->add_option("--bootstrap", fa.bootstrap, "Bootstrap replicates for terminal effects (0 = none)");
  fit->add_option("--level", fa.level, "Bootstrap interval level");
  fit->add_flag("--sequence", fa.sequence, "Also write the pruning sequence (default off)");
  fit->add_option("--threads", fa.threads, "Worker threads")->check(CLI::PositiveNumber);
  fit->add_option("--out", fa.out, "Output directory");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Append effect and terminal_id columns to a CSV file");
  predict->add_option("--tree", pa.tree, "Tree JSON")->required();
  predict->add_option("--data", pa.data, "Input CSV")->required();

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write one simulated data set as CSV");
  gen->add_option("--setting", ga.setting, "homog, heterog, binary-mixed or binary-mixed-homog")->required();
  gen->add_option("--n", ga.n, "Rows")->check(CLI::PositiveNumber);
  gen->add_option("--seed", ga.seed, "Random seed");
  gen->add_option("--out", ga.out, "CSV path (default stdout)");
  gen->add_option("--schema-out", ga.schema_out, "Also write the schema JSON here");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run a simulation experiment");
  sim->add_option("--setting", sa.setting, "homog, heterog, binary-mixed or binary-mixed-homog")->required();
  sim->add_option("--algo", sa.algo, "Algorithm, e.g. dr,prop=true,out=mis-func,scope=parent")->required();
  sim->add_option("--reps", sa.reps, "Replications")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sa.seed, "Random seed");
  sim->add_option("--n", sa.n, "Training sample size");
  sim->add_option("--threads", sa.threads, "Worker threads")->check(CLI::PositiveNumber);
  sim->add_flag("--timing", sa.timing, "Include mean fit time in the JSON (default off)");
  sim->add_option("--json", sa.json_path, "Write JSON here and the table to stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*fit) return run_fit(fa);
    if (*predict) return run_predict(pa);
    if (*gen) return run_generate(ga);
    return run_simulate(sa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FitError& e) {
    std::cerr << "fit failed: " << e.what() << "\n";
    return kFit;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFit;
  }
}
