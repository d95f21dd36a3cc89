#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace oracle {

/// Closed-form principal square root of a 2x2 SPD matrix:
/// sqrt(M) = (M + s I) / t with s = sqrt(det M), t = sqrt(tr M + 2 s).
inline Eigen::Matrix2d sqrtm2(const Eigen::Matrix2d& m) {
  const double s = std::sqrt(m.determinant());
  const double t = std::sqrt(m.trace() + 2.0 * s);
  return (m + s * Eigen::Matrix2d::Identity()) / t;
}

/// Population Gaussian OT matrix for 2x2 covariances, built from sqrtm2 only.
inline Eigen::Matrix2d gaussian_ot2(const Eigen::Matrix2d& s0, const Eigen::Matrix2d& s1) {
  const Eigen::Matrix2d r = sqrtm2(s0);
  const Eigen::Matrix2d ri = r.inverse();
  return ri * sqrtm2(r * s1 * r) * ri;
}

}  // namespace oracle
