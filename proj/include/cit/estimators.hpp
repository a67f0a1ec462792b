#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cit/data.hpp"
#include "cit/design.hpp"
#include "cit/error.hpp"
#include "cit/glm.hpp"

namespace cit {

enum class EstimatorKind { ipw, g, dr };
enum class NuisanceScope { whole, parent, child };
enum class VarianceMethod { automatic, pooled_sandwich, per_child_sandwich, influence };

inline std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::ipw: return "ipw";
    case EstimatorKind::g: return "g";
    case EstimatorKind::dr: return "dr";
  }
  return "?";
}

inline std::string_view to_string(NuisanceScope s) {
  switch (s) {
    case NuisanceScope::whole: return "whole";
    case NuisanceScope::parent: return "parent";
    case NuisanceScope::child: return "child";
  }
  return "?";
}

inline std::string_view to_string(VarianceMethod v) {
  switch (v) {
    case VarianceMethod::automatic: return "auto";
    case VarianceMethod::pooled_sandwich: return "pooled-sandwich";
    case VarianceMethod::per_child_sandwich: return "per-child-sandwich";
    case VarianceMethod::influence: return "influence";
  }
  return "?";
}

inline EstimatorKind parse_estimator(std::string_view s) {
  if (s == "ipw") return EstimatorKind::ipw;
  if (s == "g") return EstimatorKind::g;
  if (s == "dr") return EstimatorKind::dr;
  throw ConfigError("unknown estimator '" + std::string(s) + "' (expected ipw, g or dr)");
}

inline NuisanceScope parse_scope(std::string_view s) {
  if (s == "whole") return NuisanceScope::whole;
  if (s == "parent") return NuisanceScope::parent;
  if (s == "child") return NuisanceScope::child;
  throw ConfigError("unknown scope '" + std::string(s) + "' (expected whole, parent or child)");
}

inline VarianceMethod parse_variance(std::string_view s) {
  if (s == "auto") return VarianceMethod::automatic;
  if (s == "pooled-sandwich") return VarianceMethod::pooled_sandwich;
  if (s == "per-child-sandwich") return VarianceMethod::per_child_sandwich;
  if (s == "influence") return VarianceMethod::influence;
  throw ConfigError("unknown variance method '" + std::string(s) + "'");
}

// IPW defaults to the sandwich matching the scope; G and DR use influence.
inline VarianceMethod resolve_variance(VarianceMethod v, EstimatorKind k, NuisanceScope s) {
  if (v == VarianceMethod::automatic) {
    if (k != EstimatorKind::ipw) return VarianceMethod::influence;
    return s == NuisanceScope::child ? VarianceMethod::per_child_sandwich : VarianceMethod::pooled_sandwich;
  }
  if (v != VarianceMethod::influence && k != EstimatorKind::ipw)
    throw ConfigError("sandwich variances are defined for the ipw estimator only");
  if (v == VarianceMethod::pooled_sandwich && s == NuisanceScope::child)
    throw ConfigError("pooled-sandwich variance needs a pooled propensity fit (scope whole or parent)");
  if (v == VarianceMethod::per_child_sandwich && s != NuisanceScope::child)
    throw ConfigError("per-child-sandwich variance needs scope child");
  return v;
}

enum class Inadmissible {
  none,
  child_too_small,
  arm_too_small,
  nuisance_fit,
  prediction,
  singular_information,
  nonpositive_variance,
  too_few_observations,
};

inline std::string_view describe(Inadmissible r) {
  switch (r) {
    case Inadmissible::none: return "admissible";
    case Inadmissible::child_too_small: return "child below min_node";
    case Inadmissible::arm_too_small: return "arm below min_per_arm";
    case Inadmissible::nuisance_fit: return "nuisance fit failed";
    case Inadmissible::prediction: return "nuisance prediction failed";
    case Inadmissible::singular_information: return "singular information matrix";
    case Inadmissible::nonpositive_variance: return "variance not positive";
    case Inadmissible::too_few_observations: return "too few observations";
  }
  return "?";
}

// Value or the reason it could not be computed.
template <class T>
class Checked {
 public:
  Checked(T v) : value_(std::move(v)) {}
  Checked(Inadmissible why) : why_(why) {}

  bool ok() const { return value_.has_value(); }
  explicit operator bool() const { return ok(); }
  Inadmissible reason() const { return why_; }

  const T& value() const {
    if (!value_) throw Error("inadmissible split: " + std::string(describe(why_)));
    return *value_;
  }
  const T& operator*() const { return value(); }
  const T* operator->() const { return &value(); }

 private:
  std::optional<T> value_;
  Inadmissible why_ = Inadmissible::none;
};

struct NuisanceModels {
  std::shared_ptr<const LogisticFit> propensity;
  std::shared_ptr<const LinearFit> outcome;
  double epsilon = 0.01;
};

// Which models an estimator needs and how to fit them.
struct ModelPlan {
  EstimatorKind kind = EstimatorKind::dr;
  std::shared_ptr<const CompiledDesign> propensity, outcome;
  double epsilon = 0.01;

  bool needs_propensity() const { return kind != EstimatorKind::g; }
  bool needs_outcome() const { return kind != EstimatorKind::ipw; }

  static ModelPlan make(EstimatorKind kind, const std::optional<DesignSpec>& prop,
                        const std::optional<DesignSpec>& out, const Schema& schema, double epsilon) {
    if (!(epsilon > 0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in (0, 0.5)");
    ModelPlan p;
    p.kind = kind;
    p.epsilon = epsilon;
    if (p.needs_propensity()) {
      if (!prop) throw ConfigError("estimator " + std::string(to_string(kind)) + " requires a propensity spec");
      p.propensity = compile(*prop, schema);
      if (p.propensity->uses_treatment()) throw ConfigError("propensity spec may not use the treatment column");
    }
    if (p.needs_outcome()) {
      if (!out) throw ConfigError("estimator " + std::string(to_string(kind)) + " requires an outcome spec");
      p.outcome = compile(*out, schema);
      if (!p.outcome->uses_treatment()) throw ConfigError("outcome spec must include the treatment column");
    }
    return p;
  }

  NuisanceModels fit(const Dataset& d, std::span<const Row> rows) const {
    NuisanceModels m;
    m.epsilon = epsilon;
    if (needs_propensity()) m.propensity = std::make_shared<const LogisticFit>(fit_logistic(d, rows, propensity));
    if (needs_outcome()) m.outcome = std::make_shared<const LinearFit>(fit_ols(d, rows, outcome));
    return m;
  }
};

struct NodeEffect {
  double mu1 = 0, mu0 = 0, effect = 0;
  std::vector<double> influence;  // per row, effect scale, centred
  EstimatorKind kind = EstimatorKind::dr;
  bool degenerate = false;  // an arm is empty in the subgroup
  std::size_t n = 0, n_treated = 0;
};

// Per-row arm contributions whose subgroup means are mu1 and mu0.
struct RowTerms {
  std::vector<double> c1, c0, delta;
  std::vector<double> e;  // truncated propensity
  std::vector<double> p;  // untruncated propensity
};

inline RowTerms row_terms(const Dataset& d, std::span<const Row> rows, EstimatorKind kind, const NuisanceModels& m) {
  const std::size_t n = rows.size();
  RowTerms t;
  t.c1.resize(n);
  t.c0.resize(n);
  t.delta.resize(n);
  if (kind != EstimatorKind::g) {
    if (!m.propensity) throw Error("propensity model missing");
    t.p = predict_mean(*m.propensity, d, rows);
    t.e.resize(n);
    for (std::size_t r = 0; r < n; ++r) t.e[r] = std::clamp(t.p[r], m.epsilon, 1.0 - m.epsilon);
  }
  std::vector<double> g1, g0;
  if (kind != EstimatorKind::ipw) {
    if (!m.outcome) throw Error("outcome model missing");
    g1 = predict_mean(*m.outcome, d, rows, 1);
    g0 = predict_mean(*m.outcome, d, rows, 0);
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double a = d.a(rows[r]), y = d.y(rows[r]);
    switch (kind) {
      case EstimatorKind::ipw:
        t.c1[r] = a * y / t.e[r];
        t.c0[r] = (1 - a) * y / (1 - t.e[r]);
        break;
      case EstimatorKind::g:
        t.c1[r] = g1[r];
        t.c0[r] = g0[r];
        break;
      case EstimatorKind::dr:
        t.c1[r] = g1[r] + a * (y - g1[r]) / t.e[r];
        t.c0[r] = g0[r] + (1 - a) * (y - g0[r]) / (1 - t.e[r]);
        break;
    }
    t.delta[r] = t.c1[r] - t.c0[r];
  }
  if (kind == EstimatorKind::g) {
    // x(1) - x(0) dotted with the coefficients: exact when the effect is
    // constant, which keeps degenerate splits at exactly zero variance.
    const auto& design = *m.outcome->design;
    std::vector<double> diff(design.width());
    for (std::size_t r = 0; r < n; ++r) {
      design.fill_diff(d, rows[r], diff.data());
      double s = 0;
      for (std::size_t k = 0; k < diff.size(); ++k) s += diff[k] * m.outcome->coefficients[k];
      t.delta[r] = s;
    }
  }
  return t;
}

namespace detail {

// Deviations from the mean; exactly zero when all values are equal, since the
// floating-point mean of a constant need not equal the constant.
inline std::vector<double> centred(const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty() || std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return out;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] - mean;
  return out;
}

}  // namespace detail

inline NodeEffect node_effect(const Dataset& d, std::span<const Row> rows, EstimatorKind kind, const RowTerms& t) {
  if (rows.empty()) throw Error("empty subgroup");
  NodeEffect e;
  e.kind = kind;
  e.n = rows.size();
  double s1 = 0, s0 = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    s1 += t.c1[r];
    s0 += t.c0[r];
    e.n_treated += d.a(rows[r]) == 1.0;
  }
  const double n = static_cast<double>(rows.size());
  e.mu1 = s1 / n;
  e.mu0 = s0 / n;
  e.effect = e.mu1 - e.mu0;
  e.degenerate = kind != EstimatorKind::g && (e.n_treated == 0 || e.n_treated == e.n);
  e.influence = detail::centred(t.delta);
  return e;
}

inline NodeEffect estimate(const Dataset& d, std::span<const Row> rows, EstimatorKind kind, const NuisanceModels& m) {
  if (rows.empty()) throw Error("empty subgroup");
  return node_effect(d, rows, kind, row_terms(d, rows, kind, m));
}

inline NodeEffect estimate_ipw(const Dataset& d, const SubgroupMask& mask, const NuisanceModels& m) {
  const RowList rows = mask.rows();
  return estimate(d, rows, EstimatorKind::ipw, m);
}

inline NodeEffect estimate_g(const Dataset& d, const SubgroupMask& mask, const NuisanceModels& m) {
  const RowList rows = mask.rows();
  return estimate(d, rows, EstimatorKind::g, m);
}

inline NodeEffect estimate_dr(const Dataset& d, const SubgroupMask& mask, const NuisanceModels& m) {
  const RowList rows = mask.rows();
  return estimate(d, rows, EstimatorKind::dr, m);
}

// ---- variances ----

// Sample variance of pooled contributions divided by n_union.
inline Checked<double> pooled_influence_variance(std::span<const double> phi, std::size_t n_union) {
  if (phi.size() < 2 || n_union == 0) return Inadmissible::too_few_observations;
  double mean = 0;
  for (double v : phi) mean += v;
  mean /= static_cast<double>(phi.size());
  double ss = 0;
  for (double v : phi) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(phi.size() - 1) / static_cast<double>(n_union);
  if (!(var > 0) || !std::isfinite(var)) return Inadmissible::nonpositive_variance;
  return var;
}

// Influence variance of T = effect_l - effect_r: each child's contributions
// are rescaled by n_union / n_child so the pooled mean estimates T.
inline Checked<double> if_variance(const NodeEffect& l, const NodeEffect& r, std::size_t n_union) {
  std::vector<double> phi;
  phi.reserve(l.influence.size() + r.influence.size());
  const double nu = static_cast<double>(n_union);
  for (double v : l.influence) phi.push_back(nu / static_cast<double>(l.influence.size()) * v);
  for (double v : r.influence) phi.push_back(-nu / static_cast<double>(r.influence.size()) * v);
  return pooled_influence_variance(phi, n_union);
}

namespace detail {

inline Eigen::VectorXd retained_row(const CompiledDesign& design, const std::vector<int>& retained, const Dataset& d,
                                    Row i, std::vector<double>& scratch) {
  scratch.resize(design.width());
  design.fill_row(d, i, std::nullopt, scratch.data());
  Eigen::VectorXd x(retained.size());
  for (std::size_t k = 0; k < retained.size(); ++k) x[k] = scratch[retained[k]];
  return x;
}

inline std::optional<Eigen::MatrixXd> safe_inverse(const Eigen::MatrixXd& m) {
  if (m.rows() == 0) return std::nullopt;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  const auto dvec = ldlt.vectorD();
  if (!(dvec.minCoeff() > 1e-12 * std::max(1.0, dvec.cwiseAbs().maxCoeff()))) return std::nullopt;
  return Eigen::MatrixXd(ldlt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols())));
}

struct IpwRowData {
  double w = 0, h = 0, resid = 0;  // weighted contrast, derivative weight, A - p
  Eigen::VectorXd x;
};

inline std::vector<IpwRowData> ipw_rows(const Dataset& d, std::span<const Row> rows, const LogisticFit& fit,
                                        double eps) {
  std::vector<IpwRowData> out(rows.size());
  std::vector<double> scratch;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Row i = rows[r];
    IpwRowData& o = out[r];
    o.x = retained_row(*fit.design, fit.retained, d, i, scratch);
    double eta = 0;
    for (std::size_t k = 0; k < fit.retained.size(); ++k) eta += o.x[k] * fit.coefficients[fit.retained[k]];
    const double p = expit(eta), e = std::clamp(p, eps, 1 - eps);
    const double a = d.a(i), y = d.y(i);
    o.w = a * y / e - (1 - a) * y / (1 - e);
    o.h = a * y * (1 - e) / e + (1 - a) * y * e / (1 - e);
    o.resid = a - p;
  }
  return out;
}

}  // namespace detail

// Pooled-fit sandwich for the IPW contrast. The propensity fit is assumed to
// use rows F that contain l and r; F = l u r gives the textbook pooled form,
// and a larger F (whole-sample fit) adds its own score contributions.
inline Checked<double> ipw_variance_pooled(const Dataset& d, std::span<const Row> rows_l, std::span<const Row> rows_r,
                                           const LogisticFit& fit, double eps) {
  const double nl = static_cast<double>(rows_l.size()), nr = static_cast<double>(rows_r.size());
  if (nl < 1 || nr < 1) return Inadmissible::too_few_observations;
  const double np = nl + nr, nf = static_cast<double>(fit.n);
  const double pl = nl / np, pr = nr / np;
  const auto L = detail::ipw_rows(d, rows_l, fit, eps);
  const auto R = detail::ipw_rows(d, rows_r, fit, eps);
  const Eigen::Index k = static_cast<Eigen::Index>(fit.retained.size());

  double tl = 0, tr = 0;
  Eigen::VectorXd hl = Eigen::VectorXd::Zero(k), hr = Eigen::VectorXd::Zero(k);
  for (const auto& o : L) {
    tl += o.w;
    hl += o.h * o.x;
  }
  for (const auto& o : R) {
    tr += o.w;
    hr += o.h * o.x;
  }
  tl /= nl;
  tr /= nr;
  hl /= nl;
  hr /= nr;
  const double t = tl - tr;
  const auto einv = detail::safe_inverse(fit.information);
  if (!einv) return Inadmissible::singular_information;
  const Eigen::VectorXd v = *einv * (hl - hr);

  // a_i = u_i - T on the union, b_i = -(A_i - p_i) v'x_i on the fitting rows.
  double saa = 0, sab = 0;
  for (const auto& o : L) {
    const double a = o.w / pl - t, b = -o.resid * v.dot(o.x);
    saa += a * a;
    sab += a * b;
  }
  for (const auto& o : R) {
    const double a = -o.w / pr - t, b = -o.resid * v.dot(o.x);
    saa += a * a;
    sab += a * b;
  }
  const double sbb = nf * v.dot(fit.score_outer * v);
  const double K = (pr * tl + pl * tr) * (pr * tl + pl * tr) / (pl * pr);
  const double var = saa / (np * np) - K / np + sbb / (nf * nf) + 2 * sab / (np * nf);
  if (!(var > 0) || !std::isfinite(var)) return Inadmissible::nonpositive_variance;
  return var;
}

inline Checked<double> ipw_variance_pooled(const Dataset& d, const SubgroupMask& l, const SubgroupMask& r,
                                           const LogisticFit& fit, double eps) {
  const RowList rl = l.rows(), rr = r.rows();
  return ipw_variance_pooled(d, rl, rr, fit, eps);
}

// Per-child-fit sandwich: each child carries its own propensity fit and its
// own estimating-equation correction, scaled by 1/p_s.
inline Checked<double> ipw_variance_per_child(const Dataset& d, std::span<const Row> rows_l,
                                              std::span<const Row> rows_r, const LogisticFit& fit_l,
                                              const LogisticFit& fit_r, double eps) {
  const double nl = static_cast<double>(rows_l.size()), nr = static_cast<double>(rows_r.size());
  if (nl < 1 || nr < 1) return Inadmissible::too_few_observations;
  const double np = nl + nr, pl = nl / np, pr = nr / np;
  const auto L = detail::ipw_rows(d, rows_l, fit_l, eps);
  const auto R = detail::ipw_rows(d, rows_r, fit_r, eps);

  auto side = [](const std::vector<detail::IpwRowData>& rows, const LogisticFit& fit, double& tau,
                 Eigen::VectorXd& v) -> bool {
    const double n = static_cast<double>(rows.size());
    Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fit.retained.size()));
    tau = 0;
    for (const auto& o : rows) {
      tau += o.w;
      h += o.h * o.x;
    }
    tau /= n;
    h /= n;
    auto einv = detail::safe_inverse(fit.information);
    if (!einv) return false;
    v = *einv * h;
    return true;
  };
  double tl = 0, tr = 0;
  Eigen::VectorXd vl, vr;
  if (!side(L, fit_l, tl, vl) || !side(R, fit_r, tr, vr)) return Inadmissible::singular_information;
  const double t = tl - tr;
  double s = 0;
  for (const auto& o : L) {
    const double I = o.w / pl - t - o.resid * vl.dot(o.x) / pl;
    s += I * I;
  }
  for (const auto& o : R) {
    const double I = -o.w / pr - t + o.resid * vr.dot(o.x) / pr;
    s += I * I;
  }
  const double K = (pr * tl + pl * tr) * (pr * tl + pl * tr) / (pl * pr);
  const double var = (s / np - K) / np;
  if (!(var > 0) || !std::isfinite(var)) return Inadmissible::nonpositive_variance;
  return var;
}

inline Checked<double> ipw_variance_per_child(const Dataset& d, const SubgroupMask& l, const SubgroupMask& r,
                                              const LogisticFit& fit_l, const LogisticFit& fit_r, double eps) {
  const RowList rl = l.rows(), rr = r.rows();
  return ipw_variance_per_child(d, rl, rr, fit_l, fit_r, eps);
}

// Mean of x(1) - x(0) over rows, restricted to the fit's retained columns.
inline Eigen::VectorXd mean_design_diff(const Dataset& d, std::span<const Row> rows, const LinearFit& fit) {
  const auto& design = *fit.design;
  std::vector<double> diff(design.width());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fit.retained.size()));
  for (Row i : rows) {
    design.fill_diff(d, i, diff.data());
    for (std::size_t k = 0; k < fit.retained.size(); ++k) m[k] += diff[fit.retained[k]];
  }
  return rows.empty() ? m : Eigen::VectorXd(m / static_cast<double>(rows.size()));
}

// Outcome-regression part of the g-formula contrast variance, d' V d, where V
// is the robust coefficient covariance and d the contrast's gradient.
inline double g_regression_variance(const Eigen::VectorXd& grad, const LinearFit& fit) {
  return grad.dot(fit.robust_cov * grad);
}

struct SplitContrast {
  double t_hat = 0, variance = 0, statistic = 0;
  double effect_l = 0, effect_r = 0;
};

struct SplitContext {
  const Dataset* data = nullptr;
  ModelPlan plan;
  NuisanceScope scope = NuisanceScope::parent;
  VarianceMethod variance = VarianceMethod::automatic;
  const NuisanceModels* whole = nullptr;   // required for scope whole
  const NuisanceModels* parent = nullptr;  // optional prefit union models for scope parent
  const NuisanceModels* left = nullptr;    // optional prefit child models for scope child
  const NuisanceModels* right = nullptr;
  std::size_t min_node = 1, min_per_arm = 1;
};

namespace detail {

inline Checked<SplitContrast> finish(double t, double var, double el, double er) {
  if (!(var > 0) || !std::isfinite(var) || !std::isfinite(t)) return Inadmissible::nonpositive_variance;
  SplitContrast c;
  c.t_hat = t;
  c.variance = var;
  c.statistic = t * t / var;
  c.effect_l = el;
  c.effect_r = er;
  if (!std::isfinite(c.statistic)) return Inadmissible::nonpositive_variance;
  return c;
}

inline std::size_t treated(const Dataset& d, std::span<const Row> rows) {
  std::size_t k = 0;
  for (Row i : rows) k += d.a(i) == 1.0;
  return k;
}

}  // namespace detail

// Direct evaluation of the splitting statistic for one candidate split.
inline Checked<SplitContrast> evaluate_split(const SplitContext& ctx, std::span<const Row> rows_l,
                                             std::span<const Row> rows_r) {
  const Dataset& d = *ctx.data;
  const auto kind = ctx.plan.kind;
  if (rows_l.size() < ctx.min_node || rows_r.size() < ctx.min_node) return Inadmissible::child_too_small;
  for (auto rows : {rows_l, rows_r}) {
    const std::size_t k = detail::treated(d, rows);
    if (k < ctx.min_per_arm || rows.size() - k < ctx.min_per_arm) return Inadmissible::arm_too_small;
  }
  const VarianceMethod vm = resolve_variance(ctx.variance, kind, ctx.scope);

  NuisanceModels pooled, ml, mr;
  RowList uni;
  try {
    switch (ctx.scope) {
      case NuisanceScope::whole:
        if (!ctx.whole) throw Error("whole-sample models missing");
        ml = mr = *ctx.whole;
        break;
      case NuisanceScope::parent:
        if (ctx.parent) {
          pooled = *ctx.parent;
        } else {
          uni.assign(rows_l.begin(), rows_l.end());
          uni.insert(uni.end(), rows_r.begin(), rows_r.end());
          std::sort(uni.begin(), uni.end());
          pooled = ctx.plan.fit(d, uni);
        }
        ml = mr = pooled;
        break;
      case NuisanceScope::child:
        ml = ctx.left ? *ctx.left : ctx.plan.fit(d, rows_l);
        mr = ctx.right ? *ctx.right : ctx.plan.fit(d, rows_r);
        break;
    }
  } catch (const FitError&) {
    return Inadmissible::nuisance_fit;
  }

  NodeEffect el, er;
  try {
    el = estimate(d, rows_l, kind, ml);
    er = estimate(d, rows_r, kind, mr);
  } catch (const Error&) {
    return Inadmissible::prediction;
  }
  if (el.degenerate || er.degenerate) return Inadmissible::arm_too_small;
  const double t = el.effect - er.effect;
  const std::size_t nu = rows_l.size() + rows_r.size();

  Checked<double> var = Inadmissible::nonpositive_variance;
  switch (vm) {
    case VarianceMethod::pooled_sandwich:
      var = ipw_variance_pooled(d, rows_l, rows_r, *ml.propensity, ml.epsilon);
      break;
    case VarianceMethod::per_child_sandwich:
      var = ipw_variance_per_child(d, rows_l, rows_r, *ml.propensity, *mr.propensity, ml.epsilon);
      break;
    default: {
      const Checked<double> base = if_variance(el, er, nu);
      double total = base ? *base : 0.0;
      if (!base && base.reason() != Inadmissible::nonpositive_variance) return base.reason();
      if (kind == EstimatorKind::g) {
        if (ctx.scope == NuisanceScope::child) {
          total += g_regression_variance(mean_design_diff(d, rows_l, *ml.outcome), *ml.outcome);
          total += g_regression_variance(mean_design_diff(d, rows_r, *mr.outcome), *mr.outcome);
        } else {
          const Eigen::VectorXd grad =
              mean_design_diff(d, rows_l, *ml.outcome) - mean_design_diff(d, rows_r, *ml.outcome);
          total += g_regression_variance(grad, *ml.outcome);
        }
      }
      var = total;
    }
  }
  if (!var) return var.reason();
  return detail::finish(t, *var, el.effect, er.effect);
}

inline Checked<SplitContrast> split_contrast(const Dataset& d, const SubgroupMask& l, const SubgroupMask& r,
                                             const ModelPlan& plan, NuisanceScope scope,
                                             VarianceMethod variance = VarianceMethod::automatic,
                                             const NuisanceModels* whole = nullptr) {
  SplitContext ctx;
  ctx.data = &d;
  ctx.plan = plan;
  ctx.scope = scope;
  ctx.variance = variance;
  ctx.whole = whole;
  const RowList rl = l.rows(), rr = r.rows();
  for (Row i : rl)
    if (r.test(i)) throw Error("split_contrast: masks overlap");
  return evaluate_split(ctx, rl, rr);
}

}  // namespace cit
