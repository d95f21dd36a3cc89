#pragma once

#include "otcf/dataset.hpp"
#include "otcf/error.hpp"
#include "otcf/types.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace otcf {

/// Sample mean and unbiased (n - 1) covariance of one group.
struct GroupMoments {
  Vector mean;
  Eigen::MatrixXd cov;
};

inline GroupMoments compute_moments(const Matrix& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw ValidationError("moments need at least two rows");
  GroupMoments m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  m.cov = 0.5 * (m.cov + m.cov.transpose()).eval();
  return m;
}

namespace detail {

struct SpectralPair {
  Eigen::MatrixXd sqrt;
  Eigen::MatrixXd inv_sqrt;  // empty unless requested
};

/// Symmetric eigendecomposition with negative-rounding eigenvalues clamped to 0.
inline SpectralPair spd_roots(const Eigen::MatrixXd& m, bool want_inverse) {
  if (m.rows() != m.cols()) throw ValidationError("matrix square root needs a square matrix");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ValidationError("matrix square root input is not symmetric");
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  Vector ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-10 * scale) {
    throw ValidationError("matrix square root input has a negative eigenvalue");
  }
  ev = ev.cwiseMax(0.0);
  const Eigen::MatrixXd& v = es.eigenvectors();
  SpectralPair out;
  out.sqrt = v * ev.cwiseSqrt().asDiagonal() * v.transpose();
  out.sqrt = 0.5 * (out.sqrt + out.sqrt.transpose()).eval();
  if (want_inverse) {
    if (ev.minCoeff() <= 0.0) throw NumericalError("inverse square root of a singular matrix");
    out.inv_sqrt = v * ev.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
    out.inv_sqrt = 0.5 * (out.inv_sqrt + out.inv_sqrt.transpose()).eval();
  }
  return out;
}

inline double condition_number(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace detail

/// Principal square root of a symmetric positive semidefinite matrix.
inline Eigen::MatrixXd sqrtm_spd(const Eigen::MatrixXd& m) {
  return detail::spd_roots(m, false).sqrt;
}

/// Affine Gaussian optimal transport x -> mu1 + A (x - mu0) with
/// A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}, the unique symmetric
/// positive matrix with A S0 A = S1.
class GaussianTransport {
 public:
  GaussianTransport(Vector mu0, Vector mu1, Eigen::MatrixXd a, std::vector<std::size_t> columns = {},
                    double ridge = 0.0)
      : mu0_(std::move(mu0)),
        mu1_(std::move(mu1)),
        a_(std::move(a)),
        columns_(std::move(columns)),
        ridge_(ridge) {
    const auto k = mu0_.size();
    if (k == 0 || mu1_.size() != k || a_.rows() != k || a_.cols() != k) {
      throw ValidationError("gaussian transport dimensions disagree");
    }
  }

  std::size_t dim() const { return static_cast<std::size_t>(mu0_.size()); }
  const Vector& mu0() const { return mu0_; }
  const Vector& mu1() const { return mu1_; }
  const Eigen::MatrixXd& matrix() const { return a_; }
  /// Dataset columns forming the transported (mediator) block.
  const std::vector<std::size_t>& columns() const { return columns_; }
  /// Ridge added to the control covariance during fitting, 0 if none.
  double ridge() const { return ridge_; }

  Vector apply(const Vector& x) const {
    if (x.size() != mu0_.size()) throw ValidationError("transport input has the wrong dimension");
    return mu1_ + a_ * (x - mu0_);
  }

  std::vector<double> apply(std::span<const double> x) const {
    const Vector out = apply(Vector(Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()))));
    return {out.data(), out.data() + out.size()};
  }

  /// Transports the mediator block of a full covariate row; other columns pass through.
  std::vector<double> apply_full_row(std::span<const double> row) const {
    std::vector<double> out(row.begin(), row.end());
    Vector x(static_cast<Eigen::Index>(columns_.size()));
    for (std::size_t c = 0; c < columns_.size(); ++c) x[static_cast<Eigen::Index>(c)] = row[columns_[c]];
    const Vector y = apply(x);
    for (std::size_t c = 0; c < columns_.size(); ++c) out[columns_[c]] = y[static_cast<Eigen::Index>(c)];
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < a_.rows(); ++i) {
      std::vector<double> row(a_.cols());
      for (Eigen::Index j = 0; j < a_.cols(); ++j) row[static_cast<std::size_t>(j)] = a_(i, j);
      a.push_back(row);
    }
    return {{"type", "gaussian"},
            {"mu0", std::vector<double>(mu0_.data(), mu0_.data() + mu0_.size())},
            {"mu1", std::vector<double>(mu1_.data(), mu1_.data() + mu1_.size())},
            {"A", a},
            {"mediator_columns", columns_}};
  }

  static GaussianTransport from_json(const nlohmann::json& j) {
    const auto mu0 = j.at("mu0").get<std::vector<double>>();
    const auto mu1 = j.at("mu1").get<std::vector<double>>();
    const auto rows = j.at("A").get<std::vector<std::vector<double>>>();
    const auto k = static_cast<Eigen::Index>(mu0.size());
    Eigen::MatrixXd a(k, k);
    if (static_cast<Eigen::Index>(rows.size()) != k) throw ValidationError("A has the wrong shape");
    for (Eigen::Index i = 0; i < k; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != k)
        throw ValidationError("A has the wrong shape");
      for (Eigen::Index jj = 0; jj < k; ++jj) a(i, jj) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(jj)];
    }
    return {Eigen::Map<const Vector>(mu0.data(), k), Eigen::Map<const Vector>(mu1.data(), k), a,
            j.value("mediator_columns", std::vector<std::size_t>{})};
  }

 private:
  Vector mu0_;
  Vector mu1_;
  Eigen::MatrixXd a_;
  std::vector<std::size_t> columns_;
  double ridge_ = 0.0;
};

inline constexpr double kMaxCovarianceCondition = 1e12;

inline GaussianTransport fit_gaussian_transport(const GroupMoments& m0, const GroupMoments& m1,
                                                std::vector<std::size_t> columns = {}) {
  const auto k = m0.mean.size();
  if (k == 0) throw ValidationError("gaussian transport needs at least one mediator");
  if (m1.mean.size() != k) throw ValidationError("group moments differ in dimension");
  Eigen::MatrixXd s0 = m0.cov;
  double ridge = 0.0;
  if (detail::condition_number(s0) > kMaxCovarianceCondition) {
    ridge = 1e-10 * s0.trace() / static_cast<double>(k);
    if (!(ridge > 0.0)) throw NumericalError("control covariance is singular");
    s0 += ridge * Eigen::MatrixXd::Identity(k, k);
    if (detail::condition_number(s0) > kMaxCovarianceCondition) {
      throw NumericalError("control covariance is singular beyond the ridge budget");
    }
  }
  const auto r0 = detail::spd_roots(s0, true);
  const Eigen::MatrixXd middle = r0.sqrt * m1.cov * r0.sqrt;
  const Eigen::MatrixXd mid_root = sqrtm_spd(0.5 * (middle + middle.transpose()));
  Eigen::MatrixXd a = r0.inv_sqrt * mid_root * r0.inv_sqrt;
  a = 0.5 * (a + a.transpose()).eval();
  return GaussianTransport(m0.mean, m1.mean, std::move(a), std::move(columns), ridge);
}

/// Fits on the dataset's mediator columns (or `columns` when given).
inline GaussianTransport fit_gaussian_transport(const ObservationalDataset& d,
                                                std::vector<std::size_t> columns = {}) {
  if (columns.empty()) columns = d.mediator_columns();
  if (columns.empty()) throw ValidationError("no mediator columns to transport");
  for (auto c : columns) {
    if (c >= d.num_covariates()) throw ValidationError("column index out of range");
    if (d.covariate_roles()[c] == CovariateRole::collider) {
      throw ValidationError("column '" + d.covariate_names()[c] + "' is a collider; colliders are not transported");
    }
  }
  const auto [g0, g1] = split_by_treatment(d);
  const auto k = columns.size();
  if (g0.size() < k + 1 || g1.size() < k + 1) {
    throw ValidationError("each group needs at least k + 1 rows for gaussian transport");
  }
  auto m0 = compute_moments(d.block(g0.rows, columns));
  auto m1 = compute_moments(d.block(g1.rows, columns));
  return fit_gaussian_transport(std::move(m0), std::move(m1), std::move(columns));
}

inline Matrix push_forward(const GaussianTransport& t, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != t.dim()) {
    throw ValidationError("push_forward: column count does not match transport dimension");
  }
  Matrix out = (x.rowwise() - t.mu0().transpose()) * t.matrix().transpose();
  out.rowwise() += t.mu1().transpose();
  return out;
}

/// ||A S0 A - S1||_F / ||S1||_F, the fixed-point residual of a fitted map.
inline double fixed_point_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& s0,
                                   const Eigen::MatrixXd& s1) {
  return (a * s0 * a - s1).norm() / s1.norm();
}

}  // namespace otcf
