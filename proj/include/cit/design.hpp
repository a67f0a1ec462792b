#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cit/data.hpp"
#include "cit/error.hpp"

namespace cit {

// One factor of a model term, kept symbolic until bound to a schema.
struct Factor {
  enum class Type { var, exp, cube, cmp, in, all };
  Type type = Type::var;
  std::string name;
  std::string op;  // "<", ">", "<=", ">=" for cmp
  double value = 0;
  std::vector<std::string> levels;  // for in

  std::string str() const {
    switch (type) {
      case Type::var: return name;
      case Type::exp: return "exp(" + name + ")";
      case Type::cube: return "cube(" + name + ")";
      case Type::cmp: return "I(" + name + op + format_double(value) + ")";
      case Type::all: return ".";
      case Type::in: {
        std::string s = "I(" + name + " in {";
        for (std::size_t k = 0; k < levels.size(); ++k) s += (k ? "," : "") + levels[k];
        return s + "})";
      }
    }
    return {};
  }
};

using Term = std::vector<Factor>;  // empty term is the intercept

struct DesignSpec {
  std::vector<Term> terms;

  std::string str() const {
    std::string s;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (t) s += " + ";
      if (terms[t].empty()) {
        s += "1";
        continue;
      }
      for (std::size_t f = 0; f < terms[t].size(); ++f) s += (f ? ":" : "") + terms[t][f].str();
    }
    return s;
  }

  static DesignSpec parse(std::string_view text);
};

namespace detail {

inline std::vector<std::string> split_top(std::string_view s, char sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(' || c == '{') ++depth;
    if (c == ')' || c == '}') --depth;
    if (depth < 0) throw ConfigError("design spec: unbalanced brackets");
    if (c == sep && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (depth != 0) throw ConfigError("design spec: unbalanced brackets");
  out.push_back(cur);
  return out;
}

inline std::string strip_ws(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') out.push_back(c);
  return out;
}

inline const std::regex& ident_re() {
  static const std::regex re(R"([A-Za-z_][A-Za-z0-9_.]*)");
  return re;
}

inline Factor parse_factor(std::string_view raw) {
  const std::string s(trim(raw));
  std::smatch m;
  static const std::regex fn(R"(^(exp|cube)\s*\(\s*([A-Za-z_][A-Za-z0-9_.]*)\s*\)$)");
  static const std::regex cmp(R"(^I\s*\(\s*([A-Za-z_][A-Za-z0-9_.]*)\s*(<=|>=|<|>)\s*([-+0-9.eE]+)\s*\)$)");
  static const std::regex in(R"(^I\s*\(\s*([A-Za-z_][A-Za-z0-9_.]*)\s+in\s*\{([^}]*)\}\s*\)$)");
  Factor f;
  if (s == ".") {
    f.type = Factor::Type::all;
  } else if (std::regex_match(s, m, fn)) {
    f.type = m[1] == "exp" ? Factor::Type::exp : Factor::Type::cube;
    f.name = m[2];
  } else if (std::regex_match(s, m, cmp)) {
    f.type = Factor::Type::cmp;
    f.name = m[1];
    f.op = m[2];
    auto v = parse_real(m[3].str());
    if (!v) throw ConfigError("design spec: bad threshold in '" + s + "'");
    f.value = *v;
  } else if (std::regex_match(s, m, in)) {
    f.type = Factor::Type::in;
    f.name = m[1];
    for (const auto& lv : split_top(m[2].str(), ',')) {
      std::string l(trim(lv));
      if (l.empty()) throw ConfigError("design spec: empty level in '" + s + "'");
      f.levels.push_back(l);
    }
  } else if (std::regex_match(s, ident_re())) {
    f.name = s;
  } else {
    throw ConfigError("design spec: cannot parse factor '" + s + "'");
  }
  return f;
}

}  // namespace detail

inline DesignSpec DesignSpec::parse(std::string_view text) {
  DesignSpec spec;
  if (detail::strip_ws(text).empty()) throw ConfigError("design spec: empty");
  for (const auto& raw : detail::split_top(text, '+')) {
    const std::string t(detail::trim(raw));
    if (t.empty()) throw ConfigError("design spec: empty term in '" + std::string(text) + "'");
    if (t == "1") {
      spec.terms.emplace_back();
      continue;
    }
    Term term;
    for (const auto& f : detail::split_top(t, ':')) term.push_back(detail::parse_factor(f));
    spec.terms.push_back(std::move(term));
  }
  return spec;
}

// A bound atom; a model-matrix column is the product of its atoms.
struct Atom {
  enum class Op { treatment, value, exp, cube, lt, gt, le, ge, level_eq, level_in };
  Op op = Op::value;
  int col = -1;
  double c = 0;
  std::vector<std::uint8_t> in;  // level membership for level_in

  double eval(const Dataset& d, std::size_t i, double a) const {
    switch (op) {
      case Op::treatment: return a;
      case Op::value: return d.x(col, i);
      case Op::exp: return std::exp(d.x(col, i));
      case Op::cube: {
        double v = d.x(col, i);
        return v * v * v;
      }
      case Op::lt: return d.x(col, i) < c ? 1.0 : 0.0;
      case Op::gt: return d.x(col, i) > c ? 1.0 : 0.0;
      case Op::le: return d.x(col, i) <= c ? 1.0 : 0.0;
      case Op::ge: return d.x(col, i) >= c ? 1.0 : 0.0;
      case Op::level_eq: return d.x(col, i) == c ? 1.0 : 0.0;
      case Op::level_in: return in[static_cast<std::size_t>(d.x(col, i))] ? 1.0 : 0.0;
    }
    return 0;
  }
};

struct ModelColumn {
  std::string name;
  std::vector<Atom> atoms;
  bool treatment = false;
};

class CompiledDesign {
 public:
  CompiledDesign(DesignSpec spec, const Schema& schema);

  const DesignSpec& spec() const { return spec_; }
  std::size_t width() const { return cols_.size(); }
  const std::vector<ModelColumn>& columns() const { return cols_; }
  bool uses_treatment() const {
    for (const auto& c : cols_)
      if (c.treatment) return true;
    return false;
  }

  // Fills one model-matrix row; override replaces the observed treatment.
  void fill_row(const Dataset& d, std::size_t i, std::optional<int> a, double* out) const {
    const double av = a ? static_cast<double>(*a) : d.a(i);
    for (std::size_t k = 0; k < cols_.size(); ++k) {
      double v = 1.0;
      for (const auto& at : cols_[k].atoms) v *= at.eval(d, i, av);
      out[k] = v;
    }
  }

  // Row of x(A=1) - x(A=0).
  void fill_diff(const Dataset& d, std::size_t i, double* out) const {
    for (std::size_t k = 0; k < cols_.size(); ++k) {
      if (!cols_[k].treatment) {
        out[k] = 0.0;
        continue;
      }
      double v = 1.0;
      for (const auto& at : cols_[k].atoms)
        if (at.op != Atom::Op::treatment) v *= at.eval(d, i, 1.0);
      out[k] = v;
    }
  }

 private:
  DesignSpec spec_;
  std::vector<ModelColumn> cols_;
};

namespace detail {

struct Alt {
  std::string name;
  std::vector<Atom> atoms;
};

inline std::optional<Factor> shorthand(const std::string& name, const Schema& schema) {
  static const std::regex re(R"(^(.+?)(gt|lt|ge|le)(m?)([0-9]+(\.[0-9]+)?)$)");
  std::smatch m;
  if (!std::regex_match(name, m, re)) return std::nullopt;
  auto j = schema.find(m[1].str());
  if (!j || schema.columns[*j].kind.kind != Kind::continuous) return std::nullopt;
  Factor f;
  f.type = Factor::Type::cmp;
  f.name = m[1];
  const std::string code = m[2];
  f.op = code == "gt" ? ">" : code == "lt" ? "<" : code == "ge" ? ">=" : "<=";
  f.value = *parse_real(m[4].str()) * (m[3].length() ? -1.0 : 1.0);
  return f;
}

inline std::vector<Alt> expand_factor(const Factor& f0, const Schema& schema) {
  Factor f = f0;
  auto col = [&](const std::string& name) -> std::size_t {
    auto j = schema.find(name);
    if (!j) throw ConfigError("design spec: unknown column '" + name + "'");
    return *j;
  };
  if (f.type == Factor::Type::var && f.name == schema.treatment_column) {
    Atom at;
    at.op = Atom::Op::treatment;
    return {{f.name, {at}}};
  }
  if (f.type == Factor::Type::var && !schema.find(f.name)) {
    if (auto s = shorthand(f.name, schema)) f = *s;
  }
  const std::size_t j = col(f.name);
  const Column& c = schema.columns[j];
  Atom at;
  at.col = static_cast<int>(j);
  switch (f.type) {
    case Factor::Type::var: {
      if (!c.kind.is_discrete()) {
        at.op = Atom::Op::value;
        return {{f.name, {at}}};
      }
      std::vector<Alt> out;
      for (std::size_t k = 1; k < c.kind.levels.size(); ++k) {
        at.op = Atom::Op::level_eq;
        at.c = static_cast<double>(k);
        out.push_back({f.name + "[" + c.kind.levels[k] + "]", {at}});
      }
      return out;
    }
    case Factor::Type::exp:
    case Factor::Type::cube:
    case Factor::Type::cmp:
      if (c.kind.is_discrete()) throw ConfigError("design spec: '" + f.str() + "' needs a continuous column");
      if (f.type == Factor::Type::exp) at.op = Atom::Op::exp;
      else if (f.type == Factor::Type::cube) at.op = Atom::Op::cube;
      else {
        at.c = f.value;
        at.op = f.op == "<" ? Atom::Op::lt : f.op == ">" ? Atom::Op::gt : f.op == "<=" ? Atom::Op::le : Atom::Op::ge;
      }
      return {{f.str(), {at}}};
    case Factor::Type::in: {
      if (!c.kind.is_discrete()) throw ConfigError("design spec: '" + f.str() + "' needs a discrete column");
      at.op = Atom::Op::level_in;
      at.in.assign(c.kind.levels.size(), 0);
      for (const auto& lv : f.levels) {
        auto k = c.kind.level_index(lv);
        if (!k) throw ConfigError("design spec: unknown level '" + lv + "' of column '" + f.name + "'");
        at.in[*k] = 1;
      }
      return {{f.str(), {at}}};
    }
    case Factor::Type::all: break;
  }
  throw ConfigError("design spec: misplaced '.'");
}

// Replaces each '.' factor by every covariate, producing one term per choice.
inline std::vector<Term> expand_all(const Term& t, const Schema& schema) {
  std::vector<Term> out{Term{}};
  for (const auto& f : t) {
    std::vector<Term> next;
    for (const auto& partial : out) {
      if (f.type == Factor::Type::all) {
        for (const auto& c : schema.columns) {
          Term u = partial;
          Factor v;
          v.name = c.name;
          u.push_back(v);
          next.push_back(std::move(u));
        }
      } else {
        Term u = partial;
        u.push_back(f);
        next.push_back(std::move(u));
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace detail

inline CompiledDesign::CompiledDesign(DesignSpec spec, const Schema& schema) : spec_(std::move(spec)) {
  std::set<std::string> seen;
  cols_.push_back({"1", {}, false});
  seen.insert("1");
  for (const auto& t0 : spec_.terms) {
    if (t0.empty()) continue;
    for (const auto& t : detail::expand_all(t0, schema)) {
      std::vector<detail::Alt> cur{{"", {}}};
      for (const auto& f : t) {
        std::vector<detail::Alt> next;
        for (const auto& p : cur)
          for (const auto& alt : detail::expand_factor(f, schema)) {
            detail::Alt q = p;
            q.name += (q.name.empty() ? "" : ":") + alt.name;
            q.atoms.insert(q.atoms.end(), alt.atoms.begin(), alt.atoms.end());
            next.push_back(std::move(q));
          }
        cur = std::move(next);
      }
      for (auto& alt : cur) {
        if (!seen.insert(alt.name).second) continue;
        ModelColumn mc{alt.name, std::move(alt.atoms), false};
        for (const auto& at : mc.atoms) mc.treatment = mc.treatment || at.op == Atom::Op::treatment;
        cols_.push_back(std::move(mc));
      }
    }
  }
}

inline std::shared_ptr<const CompiledDesign> compile(const DesignSpec& spec, const Schema& schema) {
  return std::make_shared<const CompiledDesign>(spec, schema);
}

}  // namespace cit
