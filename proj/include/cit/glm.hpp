#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "cit/data.hpp"
#include "cit/design.hpp"
#include "cit/error.hpp"

namespace cit {

struct LinearFit {
  std::shared_ptr<const CompiledDesign> design;
  Eigen::VectorXd coefficients;  // full width, dropped columns are 0
  std::vector<int> retained, dropped;
  std::vector<int> absent;  // identically zero on the fitting rows
  int rank = 0;
  std::size_t n = 0;
  Eigen::MatrixXd robust_cov;  // HC0 sandwich over retained columns

  const DesignSpec& spec() const { return design->spec(); }
};

struct LogisticFit {
  std::shared_ptr<const CompiledDesign> design;
  Eigen::VectorXd coefficients;
  std::vector<int> retained, dropped;
  std::vector<int> absent;
  bool converged = false;
  int iterations = 0;
  std::size_t n = 0;
  // Averages over the fitting rows, on retained columns: the information
  // (1/n) sum p(1-p) x x' and the score outer product (1/n) sum (A-p)^2 x x'.
  Eigen::MatrixXd information, score_outer;

  const DesignSpec& spec() const { return design->spec(); }
};

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Eigen::MatrixXd model_matrix(const CompiledDesign& design, const Dataset& d, std::span<const Row> rows,
                                    std::optional<int> a = std::nullopt) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> X(rows.size(), design.width());
  for (std::size_t r = 0; r < rows.size(); ++r) design.fill_row(d, rows[r], a, X.row(r).data());
  return X;
}

// Greedy order-preserving rank screen: a column is kept when its residual
// after projecting on the kept columns retains more than tol of its norm.
// Later aliased columns are the ones dropped.
inline std::vector<int> independent_columns(const Eigen::MatrixXd& X, double tol = 1e-7) {
  std::vector<int> keep;
  std::vector<Eigen::VectorXd> q;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    Eigen::VectorXd v = X.col(j);
    const double n0 = v.norm();
    if (!(n0 > 0)) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : q) v -= u.dot(v) * u;
    const double nv = v.norm();
    if (nv <= tol * n0) continue;
    q.push_back(v / nv);
    keep.push_back(static_cast<int>(j));
  }
  return keep;
}

inline Eigen::MatrixXd take_columns(const Eigen::MatrixXd& X, const std::vector<int>& cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(k) = X.col(cols[k]);
  return out;
}

inline std::vector<int> complement_of(const std::vector<int>& keep, std::size_t width) {
  std::vector<int> out;
  std::size_t k = 0;
  for (std::size_t j = 0; j < width; ++j) {
    if (k < keep.size() && keep[k] == static_cast<int>(j)) ++k;
    else out.push_back(static_cast<int>(j));
  }
  return out;
}

inline std::vector<int> zero_columns(const Eigen::MatrixXd& X) {
  std::vector<int> out;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    if (X.rows() == 0 || X.col(j).cwiseAbs().maxCoeff() == 0.0) out.push_back(static_cast<int>(j));
  return out;
}

inline LinearFit fit_ols(const Dataset& d, std::span<const Row> rows, std::shared_ptr<const CompiledDesign> design) {
  const Eigen::MatrixXd X = model_matrix(*design, d, rows);
  Eigen::VectorXd y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) y[r] = d.y(rows[r]);

  LinearFit fit;
  fit.design = std::move(design);
  fit.n = rows.size();
  fit.retained = independent_columns(X);
  fit.dropped = complement_of(fit.retained, X.cols());
  fit.absent = zero_columns(X);
  fit.rank = static_cast<int>(fit.retained.size());
  if (fit.retained.empty() || rows.size() < fit.retained.size()) throw FitError("insufficient data");

  const Eigen::MatrixXd Xr = take_columns(X, fit.retained);
  const Eigen::VectorXd b = Xr.colPivHouseholderQr().solve(y);
  fit.coefficients = Eigen::VectorXd::Zero(X.cols());
  for (std::size_t k = 0; k < fit.retained.size(); ++k) fit.coefficients[fit.retained[k]] = b[k];

  const Eigen::VectorXd res = y - Xr * b;
  const Eigen::MatrixXd bread = (Xr.transpose() * Xr).ldlt().solve(Eigen::MatrixXd::Identity(Xr.cols(), Xr.cols()));
  const Eigen::MatrixXd meat = Xr.transpose() * res.array().square().matrix().asDiagonal() * Xr;
  fit.robust_cov = bread * meat * bread;
  return fit;
}

inline LinearFit fit_ols(const Dataset& d, const SubgroupMask& mask, const DesignSpec& spec) {
  const RowList rows = mask.rows();
  return fit_ols(d, rows, compile(spec, d.schema()));
}

inline LogisticFit fit_logistic(const Dataset& d, std::span<const Row> rows,
                                std::shared_ptr<const CompiledDesign> design) {
  const Eigen::MatrixXd X = model_matrix(*design, d, rows);
  Eigen::VectorXd a(rows.size());
  double ones = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) ones += a[r] = d.a(rows[r]);
  if (ones == 0 || ones == static_cast<double>(rows.size())) throw FitError("degenerate response");

  LogisticFit fit;
  fit.design = std::move(design);
  fit.n = rows.size();
  fit.retained = independent_columns(X);
  fit.dropped = complement_of(fit.retained, X.cols());
  fit.absent = zero_columns(X);
  if (fit.retained.empty() || rows.size() < fit.retained.size()) throw FitError("insufficient data");

  const Eigen::MatrixXd Xr = take_columns(X, fit.retained);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Xr.cols());
  Eigen::VectorXd p(rows.size()), w(rows.size());
  for (int it = 1; it <= 50; ++it) {
    const Eigen::VectorXd eta = Xr * beta;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p[i] = expit(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::MatrixXd H = Xr.transpose() * w.asDiagonal() * Xr;
    const Eigen::VectorXd g = Xr.transpose() * (a - p);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0)) break;
    const Eigen::VectorXd step = ldlt.solve(g);
    if (!step.allFinite()) break;
    beta += step;
    fit.iterations = it;
    if (step.cwiseAbs().maxCoeff() < 1e-8) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) throw FitError("logistic fit failed");
  {
    const Eigen::VectorXd eta = Xr * beta;
    Eigen::VectorXd r2(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p[i] = expit(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
      r2[i] = (a[i] - p[i]) * (a[i] - p[i]);
    }
    const double n = static_cast<double>(rows.size());
    fit.information = Xr.transpose() * w.asDiagonal() * Xr / n;
    fit.score_outer = Xr.transpose() * r2.asDiagonal() * Xr / n;
  }
  fit.coefficients = Eigen::VectorXd::Zero(X.cols());
  for (std::size_t k = 0; k < fit.retained.size(); ++k) fit.coefficients[fit.retained[k]] = beta[k];
  return fit;
}

inline LogisticFit fit_logistic(const Dataset& d, const SubgroupMask& mask, const DesignSpec& spec) {
  const RowList rows = mask.rows();
  return fit_logistic(d, rows, compile(spec, d.schema()));
}

// A column never seen on the fitting rows has no estimated coefficient, so a
// row that activates it (e.g. an unseen level) cannot be predicted.
inline double linear_predictor(const CompiledDesign& design, const Eigen::VectorXd& coef,
                               const std::vector<int>& absent, const Dataset& d, std::size_t i,
                               std::optional<int> a, double* scratch) {
  design.fill_row(d, i, a, scratch);
  for (int j : absent)
    if (scratch[j] != 0.0)
      throw DataError("prediction row " + std::to_string(i) + " activates column '" + design.columns()[j].name +
                      "' unseen when fitting");
  double s = 0;
  for (std::size_t k = 0; k < design.width(); ++k) s += scratch[k] * coef[k];
  return s;
}

inline std::vector<double> predict_mean(const LinearFit& fit, const Dataset& d, std::span<const Row> rows,
                                        std::optional<int> a = std::nullopt) {
  std::vector<double> out(rows.size()), scratch(fit.design->width());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out[r] = linear_predictor(*fit.design, fit.coefficients, fit.absent, d, rows[r], a, scratch.data());
  return out;
}

inline std::vector<double> predict_mean(const LogisticFit& fit, const Dataset& d, std::span<const Row> rows,
                                        std::optional<int> a = std::nullopt) {
  std::vector<double> out(rows.size()), scratch(fit.design->width());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out[r] = expit(linear_predictor(*fit.design, fit.coefficients, fit.absent, d, rows[r], a, scratch.data()));
  return out;
}

template <class Fit>
std::vector<double> predict_mean(const Fit& fit, const Dataset& d, const SubgroupMask& mask,
                                 std::optional<int> a = std::nullopt) {
  const RowList rows = mask.rows();
  return predict_mean(fit, d, std::span<const Row>(rows), a);
}

}  // namespace cit
