#include "metaprobe/glm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "metaprobe/error.hpp"
#include "metaprobe/stats.hpp"

namespace metaprobe::glm {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void require_finite(const Eigen::MatrixXd& x, const char* what) {
  if (!x.allFinite()) throw Error(ErrorCode::kNonFinite, std::string(what) + " contains NaN/Inf");
}

template <typename T>
std::uint64_t fingerprint(std::span<const T> y) {
  // FNV-1a over the raw bytes.
  std::uint64_t h = 1469598103934665603ULL;
  for (const T& v : y) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    for (unsigned char b : buf) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

struct Objective {
  double penalized = 0.0;
  double deviance = 0.0;
};

Objective logistic_objective(const Eigen::MatrixXd& xa, const Eigen::VectorXd& yv,
                             const Eigen::VectorXd& beta, double lambda) {
  const Eigen::VectorXd eta = xa * beta;
  double nll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) nll += softplus(eta[i]) - yv[i] * eta[i];
  Objective o;
  o.deviance = 2.0 * nll;
  o.penalized = nll + 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
  return o;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

DesignMatrix DesignMatrix::empty(Eigen::Index rows) {
  DesignMatrix d;
  d.values = Eigen::MatrixXd(rows, 0);
  return d;
}

DesignMatrix DesignMatrix::hstack(const DesignMatrix& other) const {
  if (other.rows() != rows()) {
    throw Error(ErrorCode::kLengthMismatch, "hstack: row counts differ");
  }
  DesignMatrix out;
  out.columns = columns;
  out.columns.insert(out.columns.end(), other.columns.begin(), other.columns.end());
  std::set<std::string> seen(out.columns.begin(), out.columns.end());
  if (seen.size() != out.columns.size()) {
    throw Error(ErrorCode::kInvalidArgument, "hstack: duplicate column names");
  }
  out.values.resize(rows(), cols() + other.cols());
  out.values << values, other.values;
  out.standardized = standardized && other.standardized;
  return out;
}

DesignMatrix DesignMatrix::select_rows(std::span<const std::size_t> idx) const {
  DesignMatrix out;
  out.columns = columns;
  out.standardized = false;
  out.values.resize(static_cast<Eigen::Index>(idx.size()), cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(idx[r]));
  }
  return out;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  require_finite(x, "standardizer input");
  Standardizer s;
  const auto n = static_cast<double>(x.rows());
  s.mean_ = Eigen::VectorXd::Zero(x.cols());
  s.scale_ = Eigen::VectorXd::Ones(x.cols());
  if (x.rows() == 0) return s;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).sum() / n;
    double ss = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double d = x(i, j) - m;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / n);
    s.mean_[j] = m;
    s.scale_[j] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean_.size()) {
    throw Error(ErrorCode::kWidthMismatch, "standardizer width mismatch");
  }
  Eigen::MatrixXd z(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) z(i, j) = (x(i, j) - mean_[j]) / scale_[j];
  }
  return z;
}

DesignMatrix Standardizer::apply(const DesignMatrix& x) const {
  DesignMatrix out;
  out.columns = x.columns;
  out.values = apply(x.values);
  out.standardized = true;
  return out;
}

Eigen::VectorXd FittedGlm::linear_predictor(const Eigen::MatrixXd& x) const {
  if (x.cols() != weights.size()) {
    throw Error(ErrorCode::kWidthMismatch, "predict: column count differs from fit");
  }
  Eigen::VectorXd eta = x * weights;
  eta.array() += intercept;
  return eta;
}

Eigen::VectorXd FittedGlm::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd eta = linear_predictor(x);
  if (kind == ModelKind::kLogistic) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = sigmoid(eta[i]);
  }
  return eta;
}

FittedGlm fit_logistic(const DesignMatrix& x, std::span<const int> y, double l2_strength,
                       const LogisticOptions& options) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw Error(ErrorCode::kLengthMismatch, "fit_logistic: rows(X) != len(y)");
  }
  if (!(l2_strength >= 0.0) || !std::isfinite(l2_strength)) {
    throw Error(ErrorCode::kInvalidArgument, "fit_logistic: l2_strength must be finite and >= 0");
  }
  require_finite(x.values, "design matrix");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  Eigen::VectorXd yv(n);
  double n_pos = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] != 0 && y[i] != 1) throw Error(ErrorCode::kInvalidArgument, "labels must be 0/1");
    yv[i] = y[i];
    n_pos += y[i];
  }
  if (n_pos == 0.0 || n_pos == static_cast<double>(n)) {
    throw Error(ErrorCode::kSingleClass, "fit_logistic requires both classes");
  }

  Eigen::MatrixXd xa(n, p + 1);
  xa.col(0).setOnes();
  xa.rightCols(p) = x.values;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  if (options.start) {
    if (options.start->size() != p + 1) {
      throw Error(ErrorCode::kInvalidArgument, "fit_logistic: start has wrong length");
    }
    beta = *options.start;
  } else {
    const double ybar = n_pos / static_cast<double>(n);
    beta[0] = std::log(ybar / (1.0 - ybar));
  }

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p + 1, l2_strength);
  penalty[0] = 0.0;

  Objective obj = logistic_objective(xa, yv, beta, l2_strength);
  FittedGlm fit;
  fit.kind = ModelKind::kLogistic;
  fit.columns = x.columns;
  fit.l2_strength = l2_strength;
  fit.n_rows = n;
  fit.response_fingerprint = fingerprint(y);

  Eigen::VectorXd grad(p + 1);
  Eigen::VectorXd prob(n);
  Eigen::VectorXd w(n);
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd eta = xa * beta;
    if (l2_strength == 0.0 && eta.cwiseAbs().maxCoeff() > 36.0) {
      // Fitted probabilities saturated: the unpenalized MLE does not exist.
      std::string offenders;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!offenders.empty()) offenders += ",";
        offenders += x.columns.empty() ? ("x" + std::to_string(j)) : x.columns[j];
      }
      throw Error(ErrorCode::kNonConvergence,
                  "perfect separation: unpenalized logistic fit diverges", offenders);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = sigmoid(eta[i]);
      w[i] = prob[i] * (1.0 - prob[i]);
    }
    grad = xa.transpose() * (prob - yv) + penalty.cwiseProduct(beta);
    fit.gradient_norm = grad.lpNorm<Eigen::Infinity>();
    if (fit.gradient_norm < options.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd hess = xa.transpose() * w.asDiagonal() * xa;
    hess.diagonal() += penalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    Eigen::VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      step = ldlt.solve(grad);
    } else {
      step = hess.completeOrthogonalDecomposition().solve(grad);
    }
    // Backtracking on the penalized objective.
    double t = 1.0;
    Objective trial;
    Eigen::VectorXd candidate;
    bool improved = false;
    // Near the optimum the objective is flat to rounding, so allow that much slack.
    const double slack = 1e-12 * std::max(1.0, std::abs(obj.penalized));
    for (int k = 0; k < 60; ++k) {
      candidate = beta - t * step;
      trial = logistic_objective(xa, yv, candidate, l2_strength);
      if (trial.penalized <= obj.penalized + slack) {
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) {
      // No descent possible at machine precision; accept the current point.
      fit.converged = fit.gradient_norm < 1e-6;
      break;
    }
    beta = candidate;
    obj = trial;
  }
  fit.iterations = it;
  fit.intercept = beta[0];
  fit.weights = beta.tail(p);
  fit.deviance = obj.deviance;
  if (!fit.converged && l2_strength == 0.0) {
    throw Error(ErrorCode::kNonConvergence, "logistic fit did not converge in " +
                                                std::to_string(options.max_iterations) +
                                                " iterations");
  }
  return fit;
}

FittedGlm fit_ridge(const DesignMatrix& x, std::span<const double> y, double alpha) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw Error(ErrorCode::kLengthMismatch, "fit_ridge: rows(X) != len(y)");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::kInvalidArgument, "fit_ridge: alpha must be finite and >= 0");
  }
  require_finite(x.values, "design matrix");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "fit_ridge: no rows");
  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  if (!yv.allFinite()) throw Error(ErrorCode::kNonFinite, "fit_ridge: response has NaN/Inf");

  const double ybar = yv.mean();
  const Eigen::RowVectorXd xbar = x.values.colwise().mean();
  const Eigen::MatrixXd xc = x.values.rowwise() - xbar;
  const Eigen::VectorXd yc = yv.array() - ybar;

  FittedGlm fit;
  fit.kind = ModelKind::kRidge;
  fit.columns = x.columns;
  fit.l2_strength = alpha;
  fit.n_rows = n;
  fit.response_fingerprint = fingerprint(y);
  fit.weights = Eigen::VectorXd::Zero(p);

  if (p > 0) {
    Eigen::MatrixXd a = xc.transpose() * xc;
    a.diagonal().array() += alpha;
    const Eigen::VectorXd b = xc.transpose() * yc;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-12);
    if (qr.rank() < p) {
      throw Error(ErrorCode::kSingular, "fit_ridge: singular normal equations (rank " +
                                            std::to_string(qr.rank()) + " < " +
                                            std::to_string(p) + ")");
    }
    fit.weights = qr.solve(b);
  }
  fit.intercept = ybar - xbar.dot(fit.weights);
  const Eigen::VectorXd resid = yv - fit.linear_predictor(x.values);
  fit.deviance = resid.squaredNorm();
  fit.converged = true;
  return fit;
}

LrTestResult lr_test(const FittedGlm& restricted, const FittedGlm& full) {
  if (restricted.kind != ModelKind::kLogistic || full.kind != ModelKind::kLogistic) {
    throw Error(ErrorCode::kInvalidArgument, "lr_test applies to logistic fits");
  }
  if (restricted.l2_strength != 0.0 || full.l2_strength != 0.0) {
    throw Error(ErrorCode::kPenalizedFit, "lr_test requires unpenalized (MLE) fits");
  }
  if (restricted.n_rows != full.n_rows ||
      restricted.response_fingerprint != full.response_fingerprint) {
    throw Error(ErrorCode::kNotNested, "lr_test: fits were made on different rows");
  }
  const std::set<std::string> full_cols(full.columns.begin(), full.columns.end());
  for (const auto& c : restricted.columns) {
    if (!full_cols.count(c)) {
      throw Error(ErrorCode::kNotNested, "lr_test: restricted column not in full model", c);
    }
  }
  const int df = static_cast<int>(full.columns.size()) - static_cast<int>(restricted.columns.size());
  if (df < 1) throw Error(ErrorCode::kNotNested, "lr_test: full model adds no columns");
  LrTestResult r;
  r.df = df;
  r.chi2 = std::max(0.0, restricted.deviance - full.deviance);
  r.p = stats::chi2_sf(r.chi2, df);
  return r;
}

}  // namespace metaprobe::glm
