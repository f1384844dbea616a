#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

// Deterministic logistic and ridge regression, plus nested likelihood-ratio
// tests on unpenalized fits.
//
// Penalty convention: `l2_strength` is the weight lambda in
//   sum_i nll_i + (lambda / 2) * ||w||^2
// with the intercept never penalized. A scikit-style inverse strength C maps
// to lambda = 1 / C (so C = 0.001 is lambda = 1000 on standardized columns).

namespace metaprobe::glm {

struct DesignMatrix {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // rows x columns
  bool standardized = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  static DesignMatrix empty(Eigen::Index rows);
  /// Appends the columns of `other` (same row count).
  DesignMatrix hstack(const DesignMatrix& other) const;
  DesignMatrix select_rows(std::span<const std::size_t> idx) const;
};

/// Column z-scoring with statistics from the rows it was fit on. Constant
/// columns get unit scale so they map to exactly zero.
class Standardizer {
 public:
  static Standardizer fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  DesignMatrix apply(const DesignMatrix& x) const;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& scale() const { return scale_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

enum class ModelKind { kLogistic, kRidge };

struct FittedGlm {
  ModelKind kind = ModelKind::kLogistic;
  std::vector<std::string> columns;
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double deviance = 0.0;  // -2 loglik (logistic) or residual sum of squares (ridge)
  double l2_strength = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  Eigen::Index n_rows = 0;
  std::uint64_t response_fingerprint = 0;

  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const;
  /// Logistic: probabilities in (0,1). Ridge: fitted values.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

struct LogisticOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;
  /// Optional starting point: [intercept, weights...].
  std::optional<Eigen::VectorXd> start;
};

FittedGlm fit_logistic(const DesignMatrix& x, std::span<const int> y, double l2_strength,
                       const LogisticOptions& options = {});

FittedGlm fit_ridge(const DesignMatrix& x, std::span<const double> y, double alpha);

struct LrTestResult {
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
};

LrTestResult lr_test(const FittedGlm& restricted, const FittedGlm& full);

double sigmoid(double z);

}  // namespace metaprobe::glm
