#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cit/error.hpp"

namespace cit {

using Row = std::uint32_t;
using RowList = std::vector<Row>;

enum class Kind { continuous, categorical, ordinal };

struct CovariateKind {
  Kind kind = Kind::continuous;
  std::vector<std::string> levels;

  static CovariateKind continuous() { return {}; }
  static CovariateKind categorical(std::vector<std::string> lv) { return {Kind::categorical, std::move(lv)}; }
  static CovariateKind ordinal(std::vector<std::string> lv) { return {Kind::ordinal, std::move(lv)}; }

  bool is_discrete() const { return kind != Kind::continuous; }

  std::optional<int> level_index(std::string_view label) const {
    for (std::size_t k = 0; k < levels.size(); ++k)
      if (levels[k] == label) return static_cast<int>(k);
    return std::nullopt;
  }

  friend bool operator==(const CovariateKind&, const CovariateKind&) = default;
};

inline std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::continuous: return "continuous";
    case Kind::categorical: return "categorical";
    case Kind::ordinal: return "ordinal";
  }
  return "?";
}

struct Column {
  std::string name;
  CovariateKind kind;
  friend bool operator==(const Column&, const Column&) = default;
};

struct Schema {
  std::vector<Column> columns;
  std::string treatment_column = "A";
  std::string outcome_column = "Y";

  std::size_t p() const { return columns.size(); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].name == name) return j;
    return std::nullopt;
  }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& c : columns) {
      if (c.name.empty()) throw ConfigError("schema: empty column name");
      if (!seen.insert(c.name).second) throw ConfigError("schema: duplicate column '" + c.name + "'");
      if (c.kind.is_discrete()) {
        if (c.kind.levels.empty()) throw ConfigError("schema: column '" + c.name + "' has no levels");
        std::unordered_set<std::string> lv(c.kind.levels.begin(), c.kind.levels.end());
        if (lv.size() != c.kind.levels.size())
          throw ConfigError("schema: column '" + c.name + "' has duplicate levels");
      }
    }
    if (treatment_column.empty() || outcome_column.empty() || treatment_column == outcome_column)
      throw ConfigError("schema: treatment and outcome columns must be distinct and named");
    if (seen.count(treatment_column) || seen.count(outcome_column))
      throw ConfigError("schema: treatment/outcome column listed as a covariate");
  }

  friend bool operator==(const Schema&, const Schema&) = default;
};

class SubgroupMask {
 public:
  SubgroupMask() = default;
  explicit SubgroupMask(std::size_t n, bool value = false)
      : bits_(n, value ? 1 : 0), size_(value ? n : 0) {}

  static SubgroupMask from_rows(std::size_t n, std::span<const Row> rows) {
    SubgroupMask m(n);
    for (Row r : rows) m.set(r, true);
    return m;
  }

  std::size_t length() const { return bits_.size(); }
  std::size_t size() const { return size_; }
  bool test(std::size_t i) const { return bits_[i] != 0; }

  void set(std::size_t i, bool v) {
    if (test(i) == v) return;
    bits_[i] = v ? 1 : 0;
    v ? ++size_ : --size_;
  }

  SubgroupMask complement() const {
    SubgroupMask m(length());
    for (std::size_t i = 0; i < bits_.size(); ++i) m.bits_[i] = bits_[i] ? 0 : 1;
    m.size_ = length() - size_;
    return m;
  }

  RowList rows() const {
    RowList out;
    out.reserve(size_);
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(static_cast<Row>(i));
    return out;
  }

  friend bool operator==(const SubgroupMask& a, const SubgroupMask& b) { return a.bits_ == b.bits_; }

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t size_ = 0;
};

inline std::size_t subgroup_count(const SubgroupMask& m) { return m.size(); }

// Covariates are column-major; discrete cells hold the level index as a double.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Schema schema, std::vector<std::vector<double>> covariates, std::vector<double> treatment,
          std::vector<double> outcome)
      : schema_(std::move(schema)), x_(std::move(covariates)), a_(std::move(treatment)), y_(std::move(outcome)) {
    schema_.validate();
    if (x_.size() != schema_.p()) throw DataError("dataset: covariate column count does not match schema");
    for (const auto& c : x_)
      if (c.size() != a_.size()) throw DataError("dataset: ragged covariate columns");
    if (y_.size() != a_.size()) throw DataError("dataset: outcome length differs from treatment length");
    for (std::size_t i = 0; i < a_.size(); ++i) {
      if (a_[i] != 0.0 && a_[i] != 1.0) throw DataError("invalid treatment at row " + std::to_string(i));
      if (!std::isfinite(y_[i])) throw DataError("non-finite outcome at row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < x_.size(); ++j) {
      const auto& kind = schema_.columns[j].kind;
      for (double v : x_[j]) {
        if (!std::isfinite(v)) throw DataError("non-finite value in column '" + schema_.columns[j].name + "'");
        if (kind.is_discrete() && (v < 0 || v >= static_cast<double>(kind.levels.size()) || v != std::floor(v)))
          throw DataError("invalid level code in column '" + schema_.columns[j].name + "'");
      }
    }
  }

  const Schema& schema() const { return schema_; }
  std::size_t n() const { return a_.size(); }
  std::size_t p() const { return x_.size(); }

  double x(std::size_t j, std::size_t i) const { return x_[j][i]; }
  const std::vector<double>& column(std::size_t j) const { return x_[j]; }
  double a(std::size_t i) const { return a_[i]; }
  double y(std::size_t i) const { return y_[i]; }
  const std::vector<double>& treatment() const { return a_; }
  const std::vector<double>& outcome() const { return y_; }

  RowList all_rows() const {
    RowList r(n());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<Row>(i);
    return r;
  }

  Dataset subset(std::span<const Row> rows) const {
    std::vector<std::vector<double>> x(p());
    for (std::size_t j = 0; j < p(); ++j) {
      x[j].reserve(rows.size());
      for (Row r : rows) x[j].push_back(x_[j][r]);
    }
    std::vector<double> a, y;
    a.reserve(rows.size());
    y.reserve(rows.size());
    for (Row r : rows) {
      a.push_back(a_[r]);
      y.push_back(y_[r]);
    }
    return Dataset(schema_, std::move(x), std::move(a), std::move(y));
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Schema schema_;
  std::vector<std::vector<double>> x_;
  std::vector<double> a_, y_;
};

// ---- CSV ----

// RFC-4180 record reader: quoted fields, doubled quotes, CRLF or LF.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  bool next(std::vector<std::string>& fields) {
    fields.clear();
    if (in_.peek() == std::char_traits<char>::eof()) return false;
    ++record_;
    std::string cur;
    bool quoted = false, any = false;
    for (;;) {
      int ch = in_.get();
      if (ch == std::char_traits<char>::eof()) {
        if (quoted) throw DataError("csv: unterminated quote in record " + std::to_string(record_));
        fields.push_back(std::move(cur));
        return true;
      }
      char c = static_cast<char>(ch);
      any = true;
      if (quoted) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            cur.push_back('"');
          } else {
            quoted = false;
          }
        } else {
          cur.push_back(c);
        }
        continue;
      }
      if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(cur));
        cur.clear();
      } else if (c == '\r' || c == '\n') {
        if (c == '\r' && in_.peek() == '\n') in_.get();
        fields.push_back(std::move(cur));
        return any;
      } else {
        cur.push_back(c);
      }
    }
  }

  std::size_t record() const { return record_; }

 private:
  std::istream& in_;
  std::size_t record_ = 0;
};

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) {
  s = trim(s);
  return s.empty() || s == "NA";
}

inline std::optional<double> parse_real(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

enum class MissingPolicy { reject, drop_rows };

// Parses one covariate cell into its stored value; throws DataError on failure.
inline double parse_cell(const Column& col, std::string_view cell, std::size_t line) {
  if (col.kind.is_discrete()) {
    auto k = col.kind.level_index(detail::trim(cell));
    if (!k)
      throw DataError("unknown level '" + std::string(detail::trim(cell)) + "' in column '" + col.name +
                      "' (line " + std::to_string(line) + ")");
    return *k;
  }
  auto v = detail::parse_real(cell);
  if (!v)
    throw DataError("unparseable value '" + std::string(cell) + "' in column '" + col.name + "' (line " +
                    std::to_string(line) + ")");
  return *v;
}

struct LoadResult {
  Dataset data;
  std::size_t dropped_rows = 0;
};

// Maps schema columns to header positions. Extra header columns are ignored.
struct HeaderMap {
  std::vector<std::size_t> covariate;
  std::optional<std::size_t> treatment, outcome;
};

inline HeaderMap map_header(const Schema& schema, const std::vector<std::string>& header, bool need_ay) {
  auto pos = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (detail::trim(header[k]) == name) return k;
    return std::nullopt;
  };
  HeaderMap m;
  for (const auto& c : schema.columns) {
    auto k = pos(c.name);
    if (!k) throw DataError("csv header lacks column '" + c.name + "'");
    m.covariate.push_back(*k);
  }
  m.treatment = pos(schema.treatment_column);
  m.outcome = pos(schema.outcome_column);
  if (need_ay && !m.treatment) throw DataError("csv header lacks treatment column '" + schema.treatment_column + "'");
  if (need_ay && !m.outcome) throw DataError("csv header lacks outcome column '" + schema.outcome_column + "'");
  return m;
}

inline LoadResult load_csv(std::istream& in, const Schema& schema, MissingPolicy policy) {
  schema.validate();
  CsvReader reader(in);
  std::vector<std::string> rec;
  if (!reader.next(rec)) throw DataError("csv: empty file");
  const HeaderMap hm = map_header(schema, rec, true);
  const std::size_t width = rec.size();

  std::vector<std::vector<double>> x(schema.p());
  std::vector<double> a, y;
  std::size_t dropped = 0;
  std::size_t line = 1;
  while (reader.next(rec)) {
    ++line;
    if (rec.size() == 1 && detail::trim(rec[0]).empty()) continue;  // blank line
    if (rec.size() != width)
      throw DataError("csv: line " + std::to_string(line) + " has " + std::to_string(rec.size()) + " fields, expected " +
                      std::to_string(width));
    bool missing = detail::is_missing(rec[*hm.treatment]) || detail::is_missing(rec[*hm.outcome]);
    for (std::size_t k : hm.covariate) missing = missing || detail::is_missing(rec[k]);
    if (missing) {
      if (policy == MissingPolicy::reject) throw DataError("missing cell at line " + std::to_string(line));
      ++dropped;
      continue;
    }
    auto av = detail::parse_real(rec[*hm.treatment]);
    if (!av || (*av != 0.0 && *av != 1.0))
      throw DataError("invalid treatment '" + rec[*hm.treatment] + "' at line " + std::to_string(line));
    auto yv = detail::parse_real(rec[*hm.outcome]);
    if (!yv) throw DataError("unparseable outcome '" + rec[*hm.outcome] + "' at line " + std::to_string(line));
    for (std::size_t j = 0; j < schema.p(); ++j) x[j].push_back(parse_cell(schema.columns[j], rec[hm.covariate[j]], line));
    a.push_back(*av);
    y.push_back(*yv);
  }
  return {Dataset(schema, std::move(x), std::move(a), std::move(y)), dropped};
}

inline LoadResult load_csv(const std::string& path, const Schema& schema, MissingPolicy policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in, schema, policy);
}

inline std::string format_cell(const Column& col, double v) {
  if (col.kind.is_discrete()) return csv_field(col.kind.levels[static_cast<std::size_t>(v)]);
  return format_double(v);
}

inline void write_csv(std::ostream& out, const Dataset& d) {
  const Schema& s = d.schema();
  for (const auto& c : s.columns) out << csv_field(c.name) << ',';
  out << csv_field(s.treatment_column) << ',' << csv_field(s.outcome_column) << '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.p(); ++j) out << format_cell(s.columns[j], d.x(j, i)) << ',';
    out << (d.a(i) == 1.0 ? "1" : "0") << ',' << format_double(d.y(i)) << '\n';
  }
}

}  // namespace cit
