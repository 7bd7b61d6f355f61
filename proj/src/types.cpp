#include "hte/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace hte {

void fail(const std::string& kind, const std::string& detail) {
  throw Error(kind, detail);
}

std::size_t Dataset::n_treated() const {
  return static_cast<std::size_t>(std::count(treatment.begin(), treatment.end(), 1));
}

std::size_t Dataset::n_control() const {
  return static_cast<std::size_t>(std::count(treatment.begin(), treatment.end(), 0));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = Matrix(rows.size(), p());
  out.treatment.resize(rows.size());
  out.response.resize(rows.size());
  out.feature_names = feature_names;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    for (std::size_t j = 0; j < p(); ++j) out.features(k, j) = features(i, j);
    out.treatment[k] = treatment[i];
    out.response[k] = response[i];
  }
  return out;
}

void validate_dataset(const Dataset& d) {
  const std::size_t n = d.response.size();
  if (d.features.rows() != n || d.treatment.size() != n)
    fail("dimension-mismatch", "features, treatment and response must agree on n");
  if (n < 2) fail("dimension-mismatch", "need at least two units");
  if (d.features.cols() < 1) fail("dimension-mismatch", "need at least one feature");
  if (!d.feature_names.empty() && d.feature_names.size() != d.features.cols())
    fail("dimension-mismatch", "feature_names length must equal p");

  std::size_t n1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = d.treatment[i];
    if (t != 0 && t != 1) fail("parse-error", "treatment must be 0/1 at row " + std::to_string(i));
    n1 += static_cast<std::size_t>(t);
    if (!std::isfinite(d.response[i]))
      fail("non-finite-value", "response at row " + std::to_string(i));
  }
  if (n1 == 0 || n1 == n) fail("degenerate-arm", n1 == 0 ? "no treated units" : "no control units");

  for (std::size_t j = 0; j < d.features.cols(); ++j) {
    for (double v : d.features.col(j)) {
      if (!std::isfinite(v)) fail("non-finite-value", "feature column " + std::to_string(j));
    }
  }
}

EffectEstimates EffectModel::predict(const Matrix& X) const {
  EffectEstimates out;
  const std::size_t n = X.rows();
  out.tau_hat.resize(n);
  const bool pair = has_pair();
  if (pair) {
    out.mu1_hat.resize(n);
    out.mu0_hat.resize(n);
  }
  std::vector<double> x;
  for (std::size_t i = 0; i < n; ++i) {
    X.row(i, x);
    const auto [m1, m0] = predict_means(x);
    out.tau_hat[i] = m1 - m0;
    if (pair) {
      out.mu1_hat[i] = m1;
      out.mu0_hat[i] = m0;
    }
  }
  return out;
}

}  // namespace hte
