#pragma once

#include "otcf/dataset.hpp"
#include "otcf/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace otcf {

/// Right-continuous step function F(x) = #{v <= x} / n over a sorted sample.
class EmpiricalCdf {
 public:
  EmpiricalCdf() = default;

  explicit EmpiricalCdf(std::vector<double> values) : sorted_(std::move(values)) {
    if (sorted_.empty()) throw ValidationError("empirical cdf needs at least one value");
    for (double v : sorted_)
      if (!std::isfinite(v)) throw ValidationError("empirical cdf got a non-finite value");
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::size_t size() const { return sorted_.size(); }
  const std::vector<double>& sorted() const { return sorted_; }
  double min() const { return sorted_.front(); }
  double max() const { return sorted_.back(); }

  /// Number of sample values <= x.
  std::size_t count_le(double x) const {
    return static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), x) -
                                    sorted_.begin());
  }

  double operator()(double x) const {
    return static_cast<double>(count_le(x)) / static_cast<double>(sorted_.size());
  }

  /// Left-continuous generalized inverse: the smallest sample value v with
  /// F(v) >= u. Ties resolve to the first occurrence.
  double quantile(double u) const {
    if (!(u > 0.0 && u <= 1.0)) throw ValidationError("quantile level must lie in (0, 1]");
    return sorted_[rank_for(u) - 1];
  }

  /// Smallest k in [1, n] with k / n >= u, computed with the same division
  /// operator() uses so the two agree exactly on the grid {i / n}.
  std::size_t rank_for(double u) const {
    const auto n = sorted_.size();
    const double nd = static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::clamp(std::ceil(u * nd), 1.0, nd));
    while (k > 1 && static_cast<double>(k - 1) / nd >= u) --k;
    while (k < n && static_cast<double>(k) / nd < u) ++k;
    return k;
  }

 private:
  std::vector<double> sorted_;
};

inline EmpiricalCdf fit_ecdf(std::vector<double> values) { return EmpiricalCdf(std::move(values)); }

/// Empirical monotone transport T(x) = F1^{-1}(F0(x)).
///
/// F0(x) is clamped into [1/n0, 1]: inputs below the control minimum land on
/// the treated minimum, inputs above the control maximum on the treated
/// maximum. With n0 == n1 and distinct values this is exactly rank matching.
class QuantileTransport1D {
 public:
  QuantileTransport1D(EmpiricalCdf control, EmpiricalCdf treated)
      : f0_(std::move(control)), f1_(std::move(treated)) {}

  double operator()(double x) const {
    const double n0 = static_cast<double>(f0_.size());
    const double u = std::max(f0_(x), 1.0 / n0);
    return f1_.quantile(u);
  }

  const EmpiricalCdf& control_cdf() const { return f0_; }
  const EmpiricalCdf& treated_cdf() const { return f1_; }

  nlohmann::json to_json() const {
    return {{"type", "quantile"}, {"sorted0", f0_.sorted()}, {"sorted1", f1_.sorted()}};
  }

  static QuantileTransport1D from_json(const nlohmann::json& j) {
    if (j.at("type") != "quantile") throw ValidationError("not a quantile transport document");
    return {EmpiricalCdf(j.at("sorted0").get<std::vector<double>>()),
            EmpiricalCdf(j.at("sorted1").get<std::vector<double>>())};
  }

 private:
  EmpiricalCdf f0_;
  EmpiricalCdf f1_;
};

/// Moment-matching affine map x -> mu1 + (s1 / s0)(x - mu0).
struct GaussianTransport1D {
  double mu0 = 0.0;
  double mu1 = 0.0;
  double s0 = 1.0;
  double s1 = 1.0;

  double operator()(double x) const { return mu1 + (s1 / s0) * (x - mu0); }
  double slope() const { return s1 / s0; }

  nlohmann::json to_json() const {
    return {{"type", "gaussian1d"}, {"mu0", mu0}, {"mu1", mu1}, {"s0", s0}, {"s1", s1}};
  }

  static GaussianTransport1D from_json(const nlohmann::json& j) {
    if (j.at("type") != "gaussian1d") throw ValidationError("not a gaussian1d transport document");
    GaussianTransport1D g{j.at("mu0").get<double>(), j.at("mu1").get<double>(),
                          j.at("s0").get<double>(), j.at("s1").get<double>()};
    if (!(g.s0 > 0.0)) throw ValidationError("gaussian1d transport needs s0 > 0");
    return g;
  }
};

namespace detail {

inline std::pair<double, double> mean_sd(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

inline std::vector<double> column_values(const ObservationalDataset& d, const GroupView& g,
                                         std::size_t column) {
  std::vector<double> out;
  out.reserve(g.size());
  for (auto r : g.rows) out.push_back(d.covariates()(static_cast<Eigen::Index>(r),
                                                     static_cast<Eigen::Index>(column)));
  return out;
}

inline void check_transportable(const ObservationalDataset& d, std::size_t column, bool force) {
  if (column >= d.num_covariates()) throw ValidationError("column index out of range");
  if (!force && d.covariate_roles()[column] == CovariateRole::collider) {
    throw ValidationError("column '" + d.covariate_names()[column] +
                          "' is a collider; colliders are not transported");
  }
}

}  // namespace detail

inline GaussianTransport1D fit_gaussian_transport_1d(std::span<const double> control,
                                                     std::span<const double> treated) {
  if (control.size() < 2 || treated.size() < 2) {
    throw ValidationError("gaussian transport needs at least two points per group");
  }
  const auto [m0, s0] = detail::mean_sd(control);
  const auto [m1, s1] = detail::mean_sd(treated);
  if (!(s0 > 0.0)) throw ValidationError("zero control variance");
  return {m0, m1, s0, s1};
}

inline QuantileTransport1D fit_quantile_transport(const ObservationalDataset& d, std::size_t column,
                                                  bool force = false) {
  detail::check_transportable(d, column, force);
  const auto [g0, g1] = split_by_treatment(d);
  return {EmpiricalCdf(detail::column_values(d, g0, column)),
          EmpiricalCdf(detail::column_values(d, g1, column))};
}

inline GaussianTransport1D fit_gaussian_transport_1d(const ObservationalDataset& d,
                                                     std::size_t column, bool force = false) {
  detail::check_transportable(d, column, force);
  const auto [g0, g1] = split_by_treatment(d);
  const auto v0 = detail::column_values(d, g0, column);
  const auto v1 = detail::column_values(d, g1, column);
  return fit_gaussian_transport_1d(v0, v1);
}

}  // namespace otcf
