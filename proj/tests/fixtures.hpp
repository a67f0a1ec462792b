#pragma once

#include <random>
#include <sstream>
#include <vector>

#include "cit/cit.hpp"

namespace fixtures {

using namespace cit;

inline Schema continuous_schema(int p) {
  Schema s;
  for (int j = 1; j <= p; ++j) s.columns.push_back({"x" + std::to_string(j), CovariateKind::continuous()});
  return s;
}

inline Dataset make(const Schema& s, std::vector<std::vector<double>> x, std::vector<double> a,
                    std::vector<double> y) {
  return Dataset(s, std::move(x), std::move(a), std::move(y));
}

// Small logistic-propensity data with p continuous covariates.
inline Dataset random_data(std::size_t n, int p, std::uint64_t seed, double effect_gap = 0.0) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> z;
  std::vector<std::vector<double>> x(p, std::vector<double>(n));
  std::vector<double> a(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x[j][i] = z(eng);
    const double e = 1 / (1 + std::exp(-(0.4 * x[0][i] - 0.3 * x[1 % p][i])));
    a[i] = std::bernoulli_distribution(e)(eng) ? 1 : 0;
    y[i] = 1 + x[0][i] + a[i] * (1 + effect_gap * (x[p - 1][i] > 0)) + z(eng);
  }
  return Dataset(continuous_schema(p), std::move(x), std::move(a), std::move(y));
}

inline Dataset load_text(const std::string& text, const Schema& s, MissingPolicy policy = MissingPolicy::reject) {
  std::istringstream in(text);
  return load_csv(in, s, policy).data;
}

inline NodeEffect effect_of(double e) {
  NodeEffect x;
  x.effect = e;
  x.mu1 = e;
  return x;
}

}  // namespace fixtures
