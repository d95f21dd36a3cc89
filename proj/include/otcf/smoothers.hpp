#pragma once

#include "otcf/error.hpp"
#include "otcf/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace otcf {

/// A fitted conditional-mean estimator x -> E[y | x].
template <class R>
concept Regressor = requires(const R& r, std::span<const double> x) {
  { r.predict(x) } -> std::convertible_to<double>;
  { r.dim() } -> std::convertible_to<std::size_t>;
};

struct Prediction {
  double value = 0.0;
  bool fallback = false;  // kernel weights underflowed; nearest neighbour used instead
};

/// Silverman's rule per column: h_d = 1.06 s_d m^{-1/5}.
inline std::vector<double> silverman_bandwidth(const Matrix& x) {
  const auto m = x.rows();
  if (m < 2) throw ValidationError("bandwidth selection needs at least two rows");
  std::vector<double> h(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    const double mean = x.col(d).mean();
    const double var = (x.col(d).array() - mean).square().sum() / static_cast<double>(m - 1);
    if (!(var > 0.0)) throw ValidationError("zero variance column with automatic bandwidth");
    h[static_cast<std::size_t>(d)] = 1.06 * std::sqrt(var) * std::pow(static_cast<double>(m), -0.2);
  }
  return h;
}

/// Nadaraya-Watson regression with a product Gaussian kernel.
class KernelRegressor {
 public:
  KernelRegressor(Matrix x, std::vector<double> y, std::vector<double> bandwidth)
      : y_(std::move(y)), h_(std::move(bandwidth)) {
    if (x.rows() < 2) throw ValidationError("kernel regression needs at least two rows");
    if (static_cast<std::size_t>(x.rows()) != y_.size()) throw ValidationError("kernel regression: x and y differ in length");
    if (h_.size() != static_cast<std::size_t>(x.cols())) throw ValidationError("one bandwidth per column required");
    for (double h : h_)
      if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("bandwidth must be positive");
    scaled_ = x;
    for (Eigen::Index d = 0; d < scaled_.cols(); ++d) scaled_.col(d) /= h_[static_cast<std::size_t>(d)];
    const auto [lo, hi] = std::minmax_element(y_.begin(), y_.end());
    ymin_ = *lo;
    ymax_ = *hi;
  }

  std::size_t dim() const { return static_cast<std::size_t>(scaled_.cols()); }
  std::size_t size() const { return y_.size(); }
  const std::vector<double>& bandwidth() const { return h_; }

  Prediction predict_detail(std::span<const double> x) const {
    if (x.size() != dim()) throw ValidationError("kernel predict: wrong input dimension");
    const std::size_t k = dim();
    double z[16];
    std::vector<double> zbuf;
    double* zs = z;
    if (k > 16) {
      zbuf.resize(k);
      zs = zbuf.data();
    }
    for (std::size_t d = 0; d < k; ++d) zs[d] = x[d] / h_[d];
    double num = 0.0;
    double den = 0.0;
    const double* row = scaled_.data();
    for (std::size_t i = 0; i < y_.size(); ++i, row += k) {
      double q = 0.0;
      for (std::size_t d = 0; d < k; ++d) {
        const double diff = row[d] - zs[d];
        q += diff * diff;
      }
      const double w = std::exp(-0.5 * q);
      num += w * y_[i];
      den += w;
    }
    if (den < 1e-300) return {nearest_outcome(zs), true};
    return {std::clamp(num / den, ymin_, ymax_), false};
  }

  double predict(std::span<const double> x) const { return predict_detail(x).value; }

  nlohmann::json to_json() const {
    return {{"type", "kernel"}, {"kernel", "gaussian"}, {"bandwidth", h_}, {"training_rows", y_.size()}};
  }

 private:
  double nearest_outcome(const double* zs) const {
    const std::size_t k = dim();
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    const double* row = scaled_.data();
    for (std::size_t i = 0; i < y_.size(); ++i, row += k) {
      double q = 0.0;
      for (std::size_t d = 0; d < k; ++d) q += (row[d] - zs[d]) * (row[d] - zs[d]);
      if (q < best) {
        best = q;
        best_i = i;
      }
    }
    return y_[best_i];
  }

  Matrix scaled_;  // training inputs divided by the bandwidth
  std::vector<double> y_;
  std::vector<double> h_;
  double ymin_ = 0.0;
  double ymax_ = 0.0;
};

/// `bandwidth` empty: Silverman per column; one value: shared by all columns.
inline KernelRegressor fit_kernel(Matrix x, std::vector<double> y, std::vector<double> bandwidth = {}) {
  if (x.rows() < 2) throw ValidationError("kernel regression needs at least two rows");
  if (bandwidth.empty()) {
    bandwidth = silverman_bandwidth(x);
  } else if (bandwidth.size() == 1 && x.cols() > 1) {
    bandwidth.assign(static_cast<std::size_t>(x.cols()), bandwidth.front());
  }
  return KernelRegressor(std::move(x), std::move(y), std::move(bandwidth));
}

/// Indices of the k rows of `x` nearest to `q` (Euclidean), distance ties
/// broken by the smaller row index, returned nearest first.
inline std::vector<std::size_t> nearest_rows(const Matrix& x, std::span<const double> q, std::size_t k) {
  const auto m = static_cast<std::size_t>(x.rows());
  if (k < 1 || k > m) throw ValidationError("neighbour count out of range");
  std::vector<std::pair<double, std::size_t>> d(m);
  for (std::size_t i = 0; i < m; ++i) d[i] = {squared_distance(row_span(x, static_cast<Eigen::Index>(i)), q), i};
  if (k < m) std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
  std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

/// Unweighted mean of the k nearest training outcomes.
class KnnRegressor {
 public:
  KnnRegressor(Matrix x, std::vector<double> y, std::size_t k) : x_(std::move(x)), y_(std::move(y)), k_(k) {
    if (static_cast<std::size_t>(x_.rows()) != y_.size()) throw ValidationError("knn: x and y differ in length");
    if (k_ < 1 || k_ > y_.size()) throw ValidationError("k out of range");
  }

  std::size_t dim() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t k() const { return k_; }

  double predict(std::span<const double> x) const {
    if (x.size() != dim()) throw ValidationError("knn predict: wrong input dimension");
    double s = 0.0;
    for (auto i : nearest_rows(x_, x, k_)) s += y_[i];
    return s / static_cast<double>(k_);
  }

  nlohmann::json to_json() const { return {{"type", "knn"}, {"k", k_}, {"training_rows", y_.size()}}; }

 private:
  Matrix x_;
  std::vector<double> y_;
  std::size_t k_;
};

inline KnnRegressor fit_knn(Matrix x, std::vector<double> y, std::size_t k) {
  return KnnRegressor(std::move(x), std::move(y), k);
}

// ---------------------------------------------------------------------------
// Logistic regression

inline constexpr double kPropensityClip = 1e-6;

struct LogisticReport {
  int iterations = 0;
  double gradient_norm = 0.0;  // of the mean (weight-normalised) log-likelihood
  bool converged = false;
  std::vector<double> log_likelihood;  // one entry per iterate, starting at beta = 0
};

/// P(y = 1 | x) = 1 / (1 + exp(-(b0 + x.b))).
class LogisticModel {
 public:
  LogisticModel() = default;
  LogisticModel(Vector beta, Vector se, LogisticReport report)
      : beta_(std::move(beta)), se_(std::move(se)), report_(std::move(report)) {}

  /// Coefficients, intercept first.
  const Vector& coefficients() const { return beta_; }
  const Vector& standard_errors() const { return se_; }
  const LogisticReport& report() const { return report_; }
  std::size_t dim() const { return static_cast<std::size_t>(beta_.size() - 1); }

  double linear_predictor(std::span<const double> x) const {
    if (x.size() != dim()) throw ValidationError("logistic predict: wrong input dimension");
    double z = beta_[0];
    for (std::size_t d = 0; d < x.size(); ++d) z += beta_[static_cast<Eigen::Index>(d + 1)] * x[d];
    return z;
  }

  /// Probability clipped into [1e-6, 1 - 1e-6].
  double predict(std::span<const double> x) const {
    const double p = 1.0 / (1.0 + std::exp(-linear_predictor(x)));
    return std::clamp(p, kPropensityClip, 1.0 - kPropensityClip);
  }

  nlohmann::json to_json() const {
    return {{"type", "logistic"},
            {"coefficients", std::vector<double>(beta_.data(), beta_.data() + beta_.size())},
            {"standard_errors", std::vector<double>(se_.data(), se_.data() + se_.size())},
            {"iterations", report_.iterations},
            {"gradient_norm", report_.gradient_norm},
            {"converged", report_.converged}};
  }

 private:
  Vector beta_;
  Vector se_;
  LogisticReport report_;
};

namespace detail {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

/// Maximum likelihood by iteratively reweighted least squares (Newton) with
/// step halving, so the log-likelihood never decreases between iterates.
/// Stops when the gradient norm of the mean log-likelihood is <= 1e-8 or after
/// 100 iterations. `weights` (optional) are per-observation likelihood weights;
/// `ridge` > 0 adds a penalty ridge/2 ||slopes||^2.
inline LogisticModel fit_logistic(const Matrix& x, std::span<const double> y,
                                  std::span<const double> weights = {}, double ridge = 0.0) {
  const auto m = x.rows();
  const auto k = x.cols();
  if (static_cast<std::size_t>(m) != y.size()) throw ValidationError("logistic: x and y differ in length");
  if (!weights.empty() && weights.size() != y.size()) throw ValidationError("logistic: weight length mismatch");
  if (m <= k + 1) throw ValidationError("logistic regression needs more rows than parameters");
  bool has0 = false;
  bool has1 = false;
  for (double v : y) {
    if (v == 0.0) has0 = true;
    else if (v == 1.0) has1 = true;
    else throw ValidationError("logistic outcome must be 0 or 1");
  }
  if (!has0 || !has1) throw ValidationError("logistic regression needs both classes present");

  Matrix design(m, k + 1);
  design.col(0).setOnes();
  design.rightCols(k) = x;
  Vector w = Vector::Ones(m);
  if (!weights.empty()) {
    for (Eigen::Index i = 0; i < m; ++i) {
      w[i] = weights[static_cast<std::size_t>(i)];
      if (!(w[i] >= 0.0) || !std::isfinite(w[i])) throw ValidationError("logistic weights must be nonnegative");
    }
  }
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw ValidationError("logistic weights sum to zero");
  const Vector yv = Eigen::Map<const Vector>(y.data(), m);
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Identity(k + 1, k + 1) * ridge;
  penalty(0, 0) = 0.0;

  auto loglik = [&](const Vector& b) {
    const Vector z = design * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) ll += w[i] * (yv[i] * z[i] - detail::softplus(z[i]));
    return ll - 0.5 * ridge * b.tail(k).squaredNorm();
  };

  Vector beta = Vector::Zero(k + 1);
  LogisticReport report;
  double ll = loglik(beta);
  report.log_likelihood.push_back(ll);
  Eigen::MatrixXd hessian;
  for (int it = 0;; ++it) {
    const Vector z = design * beta;
    Vector p(m);
    Vector hw(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      p[i] = 1.0 / (1.0 + std::exp(-z[i]));
      hw[i] = w[i] * p[i] * (1.0 - p[i]);
    }
    const Vector grad = design.transpose() * (w.cwiseProduct(yv - p)) - penalty * beta;
    hessian = design.transpose() * hw.asDiagonal() * design + penalty;
    report.gradient_norm = grad.norm() / wsum;
    report.iterations = it;
    if (report.gradient_norm <= 1e-8) {
      report.converged = true;
      break;
    }
    if (it == 100) break;
    Eigen::LDLT<Eigen::MatrixXd> solver(hessian);
    const Vector step = solver.solve(grad);
    if (solver.info() != Eigen::Success || !step.allFinite()) {
      throw NumericalError("logistic Hessian is singular; consider the ridge option");
    }
    double t = 1.0;
    Vector trial = beta + step;
    double trial_ll = loglik(trial);
    while (!(trial_ll >= ll) && t > 1e-10) {
      t *= 0.5;
      trial = beta + t * step;
      trial_ll = loglik(trial);
    }
    if (!(trial_ll >= ll)) break;  // no ascent possible at machine precision
    beta = trial;
    ll = trial_ll;
    report.log_likelihood.push_back(ll);
    if (beta.norm() > 1e4) {
      throw NumericalError("complete separation detected (coefficients diverge); refit with a ridge penalty");
    }
  }
  // Unpenalised fits can stop on a vanishing gradient long before the
  // coefficients blow up; a near-perfect likelihood gives separation away.
  if (ridge == 0.0 && ll / wsum > -1e-6) {
    throw NumericalError("complete separation detected (perfect classification); refit with a ridge penalty");
  }
  Vector se = Vector::Constant(k + 1, std::numeric_limits<double>::quiet_NaN());
  Eigen::LDLT<Eigen::MatrixXd> solver(hessian);
  if (solver.info() == Eigen::Success) {
    const Eigen::MatrixXd cov = solver.solve(Eigen::MatrixXd::Identity(k + 1, k + 1));
    se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  return LogisticModel(std::move(beta), std::move(se), std::move(report));
}

inline LogisticModel fit_logistic(const Matrix& x, std::span<const int> y,
                                  std::span<const double> weights = {}, double ridge = 0.0) {
  std::vector<double> yd(y.begin(), y.end());
  return fit_logistic(x, std::span<const double>(yd), weights, ridge);
}

}  // namespace otcf
