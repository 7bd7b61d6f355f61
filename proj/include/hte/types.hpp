#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hte {

/// Runtime error carrying a stable machine-readable kind tag
/// (e.g. "degenerate-arm", "dimension-mismatch").
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& detail)
      : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

[[noreturn]] void fail(const std::string& kind, const std::string& detail);

/// Dense column-major matrix of doubles. Rows are units, columns covariates.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }

  std::span<const double> col(std::size_t j) const {
    return {data_.data() + j * rows_, rows_};
  }
  std::span<double> col(std::size_t j) { return {data_.data() + j * rows_, rows_}; }

  void row(std::size_t i, std::vector<double>& out) const {
    out.resize(cols_);
    for (std::size_t j = 0; j < cols_; ++j) out[j] = data_[j * rows_ + i];
  }
  std::vector<double> row(std::size_t i) const {
    std::vector<double> out;
    row(i, out);
    return out;
  }

  const std::vector<double>& storage() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;  // column-major
};

/// Feature matrix, binary treatment indicator and real-valued response.
struct Dataset {
  Matrix features;             // n x p
  std::vector<int> treatment;  // 0/1, length n
  std::vector<double> response;
  std::vector<std::string> feature_names;  // empty or length p

  std::size_t n() const noexcept { return response.size(); }
  std::size_t p() const noexcept { return features.cols(); }
  std::size_t n_treated() const;
  std::size_t n_control() const;

  Dataset subset(std::span<const std::size_t> rows) const;
};

/// Throws Error unless all Dataset invariants hold: matching lengths, n >= 2,
/// p >= 1, treatment in {0,1} with both arms present, all values finite.
void validate_dataset(const Dataset& d);

struct EffectEstimates {
  std::vector<double> tau_hat;
  std::vector<double> mu1_hat;  // empty when the model carries no pair
  std::vector<double> mu0_hat;
};

/// Common prediction contract for every fitted estimator: a pair of
/// conditional-mean estimates per point; the effect is always their
/// difference (single code path).
class EffectModel {
 public:
  virtual ~EffectModel() = default;

  /// (mu1_hat(x), mu0_hat(x)) for a single covariate vector.
  virtual std::pair<double, double> predict_means(std::span<const double> x) const = 0;

  /// False for models whose per-arm means are not defined (pure effect
  /// predictors); their predict_means returns (effect, 0).
  virtual bool has_pair() const { return true; }

  double predict_effect(std::span<const double> x) const {
    const auto [m1, m0] = predict_means(x);
    return m1 - m0;
  }

  EffectEstimates predict(const Matrix& X) const;
};

}  // namespace hte
