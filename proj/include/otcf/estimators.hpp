#pragma once

#include "otcf/dataset.hpp"
#include "otcf/discrete_ot.hpp"
#include "otcf/error.hpp"
#include "otcf/gaussian.hpp"
#include "otcf/random.hpp"
#include "otcf/smoothers.hpp"
#include "otcf/univariate.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace otcf {

/// Per-point flags on a CateCurve.
enum CurveFlag : std::uint8_t {
  kFlagNone = 0,
  kFlagFallback = 1,  // kernel weight underflow, nearest neighbour used
  kFlagClamped = 2,   // grid point outside control support, clamped
};

/// Treatment effect estimates over a grid of covariate points.
struct CateCurve {
  std::string method;
  Matrix grid;  // one row per grid point
  std::vector<std::string> grid_names;
  std::vector<double> estimate;
  std::vector<double> cp_estimate;  // ceteris paribus companion curve, when produced
  std::vector<double> lo;
  std::vector<double> hi;
  double level = 0.0;
  std::vector<std::uint8_t> flags;

  std::size_t size() const { return estimate.size(); }
  bool has_band() const { return !lo.empty(); }
  bool has_cp() const { return !cp_estimate.empty(); }
};

inline CateCurve make_curve(std::string method, Matrix grid, std::vector<std::string> names) {
  CateCurve c;
  c.method = std::move(method);
  c.grid_names = std::move(names);
  const auto n = static_cast<std::size_t>(grid.rows());
  c.grid = std::move(grid);
  c.estimate.assign(n, 0.0);
  c.flags.assign(n, kFlagNone);
  return c;
}

inline Matrix grid_column(std::span<const double> values) {
  Matrix g(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) g(static_cast<Eigen::Index>(i), 0) = values[i];
  return g;
}

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

/// Columns: grid coordinates, estimate, cp_estimate, lo, hi (empty when absent).
inline void write_curve_csv(std::ostream& out, const CateCurve& c) {
  for (const auto& n : c.grid_names) out << n << ',';
  out << "estimate,cp_estimate,lo,hi\n";
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (Eigen::Index d = 0; d < c.grid.cols(); ++d) out << detail::fmt(c.grid(static_cast<Eigen::Index>(i), d)) << ',';
    out << detail::fmt(c.estimate[i]) << ',';
    if (c.has_cp()) out << detail::fmt(c.cp_estimate[i]);
    out << ',';
    if (c.has_band()) out << detail::fmt(c.lo[i]) << ',' << detail::fmt(c.hi[i]);
    else out << ',';
    out << '\n';
  }
}

inline nlohmann::json curve_to_json(const CateCurve& c) {
  nlohmann::json grid = nlohmann::json::array();
  for (Eigen::Index i = 0; i < c.grid.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(c.grid.cols()));
    for (Eigen::Index d = 0; d < c.grid.cols(); ++d) row[static_cast<std::size_t>(d)] = c.grid(i, d);
    grid.push_back(row);
  }
  nlohmann::json j = {{"method", c.method}, {"grid_names", c.grid_names}, {"grid", grid},
                      {"estimate", c.estimate}, {"flags", c.flags}};
  if (c.has_cp()) j["cp_estimate"] = c.cp_estimate;
  if (c.has_band()) {
    j["lo"] = c.lo;
    j["hi"] = c.hi;
    j["level"] = c.level;
  }
  return j;
}

/// Sign of each estimate (-1, 0, +1); exact zero threshold, no dead band.
inline std::vector<int> sign_map(const CateCurve& c) {
  std::vector<int> s(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) s[i] = (c.estimate[i] > 0.0) - (c.estimate[i] < 0.0);
  return s;
}

inline void write_sign_map_csv(std::ostream& out, const CateCurve& c) {
  for (const auto& n : c.grid_names) out << n << ',';
  out << "sign\n";
  const auto s = sign_map(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (Eigen::Index d = 0; d < c.grid.cols(); ++d) out << detail::fmt(c.grid(static_cast<Eigen::Index>(i), d)) << ',';
    out << s[i] << '\n';
  }
}

/// `points` equally spaced values between the 1st and 99th percentile of the
/// control group's column.
inline std::vector<double> default_grid(const ObservationalDataset& d, std::size_t column, std::size_t points = 101) {
  const auto [g0, g1] = split_by_treatment(d);
  const EmpiricalCdf f0(detail::column_values(d, g0, column));
  const double lo = f0.quantile(0.01);
  const double hi = f0.quantile(0.99);
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Propensity weighting

/// Columns `cols` raised to powers 1..degree, column-major by power.
inline Matrix polynomial_features(const ObservationalDataset& d, const std::vector<std::size_t>& cols, int degree = 1) {
  if (degree < 1) throw ValidationError("feature degree must be >= 1");
  Matrix f(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(cols.size() * static_cast<std::size_t>(degree)));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int p = 1; p <= degree; ++p)
      for (std::size_t c = 0; c < cols.size(); ++c)
        f(r, static_cast<Eigen::Index>(static_cast<std::size_t>(p - 1) * cols.size() + c)) =
            std::pow(d.covariates()(r, static_cast<Eigen::Index>(cols[c])), p);
  }
  return f;
}

/// Logistic propensity model of T on polynomial features of `cols`.
struct PropensityModel {
  LogisticModel model;
  std::vector<std::size_t> columns;
  int degree = 1;

  std::vector<double> scores(const ObservationalDataset& d) const {
    const Matrix f = polynomial_features(d, columns, degree);
    std::vector<double> p(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) p[i] = model.predict(row_span(f, static_cast<Eigen::Index>(i)));
    return p;
  }
};

/// Fits P(T = 1 | x). With no columns given the model uses the collider
/// (pre-treatment) columns; mediators are post-treatment and adjusting for
/// them would target the direct effect rather than the total effect. With no
/// collider either, the model is intercept only.
inline PropensityModel fit_propensity(const ObservationalDataset& d, std::optional<std::vector<std::size_t>> columns = std::nullopt,
                                      int degree = 1, double ridge = 0.0) {
  PropensityModel pm;
  pm.columns = columns ? *columns : d.collider_columns();
  pm.degree = degree;
  for (auto c : pm.columns)
    if (c >= d.num_covariates()) throw ValidationError("propensity column out of range");
  pm.model = fit_logistic(polynomial_features(d, pm.columns, degree), std::span<const int>(d.treatments()), {}, ridge);
  return pm;
}

/// Per-row IPW contribution t y / p - (1 - t) y / (1 - p), p clipped to [1e-6, 1 - 1e-6].
inline std::vector<double> ipw_terms(const ObservationalDataset& d, std::span<const double> p) {
  if (p.size() != d.size()) throw ValidationError("one propensity score per row required");
  std::vector<double> psi(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double pi = std::clamp(p[i], kPropensityClip, 1.0 - kPropensityClip);
    psi[i] = d.treatment(i) ? d.outcome(i) / pi : -d.outcome(i) / (1.0 - pi);
  }
  return psi;
}

struct SateResult {
  double estimate = 0.0;
  double ess_control = 0.0;
  double ess_treated = 0.0;
  std::size_t clipped = 0;
  std::optional<std::string> warning;
};

inline SateResult sate_ipw(const ObservationalDataset& d, std::span<const double> p) {
  split_by_treatment(d);
  const auto psi = ipw_terms(d, p);
  SateResult r;
  r.estimate = std::accumulate(psi.begin(), psi.end(), 0.0) / static_cast<double>(d.size());
  double s0 = 0.0, q0 = 0.0, s1 = 0.0, q1 = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (p[i] < kPropensityClip || p[i] > 1.0 - kPropensityClip) ++r.clipped;
    const double pi = std::clamp(p[i], kPropensityClip, 1.0 - kPropensityClip);
    if (d.treatment(i)) {
      s1 += 1.0 / pi;
      q1 += 1.0 / (pi * pi);
    } else {
      s0 += 1.0 / (1.0 - pi);
      q0 += 1.0 / ((1.0 - pi) * (1.0 - pi));
    }
  }
  r.ess_control = s0 * s0 / q0;
  r.ess_treated = s1 * s1 / q1;
  if (static_cast<double>(r.clipped) > 0.1 * static_cast<double>(d.size())) {
    r.warning = std::to_string(r.clipped) + " of " + std::to_string(d.size()) +
                " propensity scores were clipped; the IPW estimate is unreliable";
  }
  return r;
}

inline SateResult sate_ipw(const ObservationalDataset& d, const PropensityModel& pm) {
  const auto p = pm.scores(d);
  return sate_ipw(d, p);
}

/// Kernel-local IPW average of the per-row terms along one covariate.
inline CateCurve cate_ipw_kernel(const ObservationalDataset& d, std::span<const double> p, std::size_t column,
                                 std::span<const double> grid, double bandwidth) {
  split_by_treatment(d);
  if (!(bandwidth > 0.0)) throw ValidationError("bandwidth must be positive");
  if (column >= d.num_covariates()) throw ValidationError("column index out of range");
  const auto psi = ipw_terms(d, p);
  const auto x = d.covariates().col(static_cast<Eigen::Index>(column));
  CateCurve c = make_curve("ipw-kernel", grid_column(grid), {d.covariate_names()[column]});
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double z = (x[static_cast<Eigen::Index>(i)] - grid[g]) / bandwidth;
      const double w = std::exp(-0.5 * z * z);
      num += w * psi[i];
      den += w;
    }
    if (den < 1e-300) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < d.size(); ++i)
        if (std::abs(x[static_cast<Eigen::Index>(i)] - grid[g]) < std::abs(x[static_cast<Eigen::Index>(best)] - grid[g])) best = i;
      c.estimate[g] = psi[best];
      c.flags[g] |= kFlagFallback;
    } else {
      c.estimate[g] = num / den;
    }
  }
  return c;
}

/// Mean IPW term over the k rows nearest each grid value.
inline CateCurve cate_ipw_knn(const ObservationalDataset& d, std::span<const double> p, std::size_t column,
                              std::span<const double> grid, std::size_t k) {
  split_by_treatment(d);
  if (column >= d.num_covariates()) throw ValidationError("column index out of range");
  const auto psi = ipw_terms(d, p);
  const Matrix x = d.covariates().col(static_cast<Eigen::Index>(column));
  CateCurve c = make_curve("ipw-knn", grid_column(grid), {d.covariate_names()[column]});
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (auto i : nearest_rows(x, std::span<const double>(&grid[g], 1), k)) s += psi[i];
    c.estimate[g] = s / static_cast<double>(k);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Matching

struct MatchedPair {
  std::size_t control_row;
  std::size_t treated_row;
  double difference;  // y_treated - y_control
};

struct MatchedPairs {
  std::vector<MatchedPair> pairs;
  std::vector<std::size_t> columns;  // covariates the distance was computed on
  double total_distance = 0.0;       // sum of Euclidean pair distances

  double mean_difference() const {
    double s = 0.0;
    for (const auto& p : pairs) s += p.difference;
    return s / static_cast<double>(pairs.size());
  }
};

/// Sequential nearest-neighbour matching with removal: controls are visited
/// in `order`; each takes the nearest treated point still available
/// (Euclidean, ties to the smaller treated index). Returns sigma with
/// control i -> treated sigma[i].
inline std::vector<std::size_t> greedy_assignment(const Matrix& x0, const Matrix& x1, std::span<const std::size_t> order) {
  if (x0.rows() != x1.rows()) throw ValidationError("greedy matching needs equal group sizes");
  if (x0.cols() != x1.cols()) throw ValidationError("greedy matching: column counts differ");
  const auto n = static_cast<std::size_t>(x0.rows());
  if (order.size() != n) throw ValidationError("greedy matching: order must cover every control");
  std::vector<std::size_t> available(n);
  std::iota(available.begin(), available.end(), 0);
  std::vector<std::size_t> sigma(n, n);
  for (std::size_t i : order) {
    if (i >= n || sigma[i] != n) throw ValidationError("greedy matching: order is not a permutation");
    const auto q = row_span(x0, static_cast<Eigen::Index>(i));
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < available.size(); ++a) {
      const double dist = squared_distance(q, row_span(x1, static_cast<Eigen::Index>(available[a])));
      if (dist < best_d || (dist == best_d && available[a] < available[best])) {
        best_d = dist;
        best = a;
      }
    }
    sigma[i] = available[best];
    available[best] = available.back();
    available.pop_back();
  }
  return sigma;
}

namespace detail {

/// Equal-size groups: the larger arm is subsampled uniformly without replacement.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> balanced_groups(const ObservationalDataset& d,
                                                                                    Engine& eng) {
  auto [g0, g1] = split_by_treatment(d);
  auto shrink = [&](std::vector<std::size_t>& rows, std::size_t n) {
    if (rows.size() == n) return;
    const auto keep = sample_without_replacement(rows.size(), n, eng);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = rows[keep[i]];
    rows = std::move(out);
  };
  const std::size_t n = std::min(g0.size(), g1.size());
  shrink(g0.rows, n);
  shrink(g1.rows, n);
  return {std::move(g0.rows), std::move(g1.rows)};
}

inline std::vector<std::size_t> mediators_or(const ObservationalDataset& d, std::vector<std::size_t> columns) {
  if (columns.empty()) columns = d.mediator_columns();
  if (columns.empty()) throw ValidationError("no mediator columns to match on");
  for (auto c : columns) {
    if (c >= d.num_covariates()) throw ValidationError("column index out of range");
    if (d.covariate_roles()[c] == CovariateRole::collider)
      throw ValidationError("column '" + d.covariate_names()[c] + "' is a collider and cannot be matched on");
  }
  return columns;
}

inline MatchedPairs make_pairs(const ObservationalDataset& d, const std::vector<std::size_t>& rows0,
                               const std::vector<std::size_t>& rows1, const std::vector<std::size_t>& sigma,
                               const Matrix& x0, const Matrix& x1, std::vector<std::size_t> columns) {
  MatchedPairs mp;
  mp.columns = std::move(columns);
  mp.pairs.reserve(rows0.size());
  for (std::size_t i = 0; i < rows0.size(); ++i) {
    const std::size_t r0 = rows0[i];
    const std::size_t r1 = rows1[sigma[i]];
    mp.pairs.push_back({r0, r1, d.outcome(r1) - d.outcome(r0)});
    mp.total_distance += std::sqrt(squared_distance(row_span(x0, static_cast<Eigen::Index>(i)),
                                                    row_span(x1, static_cast<Eigen::Index>(sigma[i]))));
  }
  return mp;
}

}  // namespace detail

/// 1:1 nearest-neighbour matching with removal on the mediator columns.
/// The larger arm is subsampled to the smaller one and the control visiting
/// order shuffled, both from `seed`.
inline MatchedPairs match_greedy(const ObservationalDataset& d, std::uint64_t seed,
                                 std::vector<std::size_t> columns = {}) {
  columns = detail::mediators_or(d, std::move(columns));
  Engine eng = make_engine(seed, kStreamMatching, 0);
  const auto [rows0, rows1] = detail::balanced_groups(d, eng);
  std::vector<std::size_t> order(rows0.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, eng);
  const Matrix x0 = d.block(rows0, columns);
  const Matrix x1 = d.block(rows1, columns);
  const auto sigma = greedy_assignment(x0, x1, order);
  return detail::make_pairs(d, rows0, rows1, sigma, x0, x1, std::move(columns));
}

/// Optimal 1:1 matching (squared Euclidean cost) on the mediator columns,
/// larger arm subsampled from `seed`. One column uses rank matching and
/// skips the size guard.
inline MatchedPairs match_optimal(const ObservationalDataset& d, std::uint64_t seed,
                                  std::vector<std::size_t> columns = {}, bool force = false) {
  columns = detail::mediators_or(d, std::move(columns));
  Engine eng = make_engine(seed, kStreamMatching, 0);
  const auto [rows0, rows1] = detail::balanced_groups(d, eng);
  const Matrix x0 = d.block(rows0, columns);
  const Matrix x1 = d.block(rows1, columns);
  if (columns.size() == 1) {
    // squared cost on a line: rank matching is optimal, no LP needed
    auto ranked = [](const Matrix& x) {
      std::vector<std::size_t> idx(static_cast<std::size_t>(x.rows()));
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return x(static_cast<Eigen::Index>(a), 0) < x(static_cast<Eigen::Index>(b), 0);
      });
      return idx;
    };
    const auto o0 = ranked(x0);
    const auto o1 = ranked(x1);
    std::vector<std::size_t> sigma(o0.size());
    for (std::size_t r = 0; r < o0.size(); ++r) sigma[o0[r]] = o1[r];
    return detail::make_pairs(d, rows0, rows1, sigma, x0, x1, std::move(columns));
  }
  check_instance_size(rows0.size(), rows1.size(), force);
  const auto m = optimal_matching(build_cost(x0, x1));
  return detail::make_pairs(d, rows0, rows1, m.sigma, x0, x1, std::move(columns));
}

/// Mean pair difference over the k matched controls nearest each grid point.
inline CateCurve scate_matched(const ObservationalDataset& d, const MatchedPairs& mp, std::size_t k, const Matrix& grid) {
  if (static_cast<std::size_t>(grid.cols()) != mp.columns.size()) throw ValidationError("grid dimension mismatch");
  std::vector<std::size_t> rows0;
  for (const auto& p : mp.pairs) rows0.push_back(p.control_row);
  const Matrix x0 = d.block(rows0, mp.columns);
  if (k < 1 || k > rows0.size()) throw ValidationError("k out of range");
  std::vector<std::string> names;
  for (auto c : mp.columns) names.push_back(d.covariate_names()[c]);
  CateCurve c = make_curve("matched", grid, names);
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    double s = 0.0;
    for (auto i : nearest_rows(x0, row_span(grid, g), k)) s += mp.pairs[i].difference;
    c.estimate[static_cast<std::size_t>(g)] = s / static_cast<double>(k);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Optimal coupling

struct CouplingOptions {
  CostKind kind = CostKind::squared_euclidean;
  double exponent = 2.0;
  bool standardize = false;  // divide each column by its pooled standard deviation
  bool force = false;        // bypass the instance-size guard
};

struct CouplingFit {
  std::vector<std::size_t> control_rows;
  std::vector<std::size_t> treated_rows;
  std::vector<std::size_t> columns;
  std::vector<double> scale;  // per-column divisor applied before the cost
  Coupling coupling;
};

/// Optimal coupling between the arms on the mediator columns with the
/// default marginals (1 per control, n0 / n1 per treated).
inline CouplingFit fit_coupling(const ObservationalDataset& d, std::vector<std::size_t> columns = {},
                                const CouplingOptions& opt = {}) {
  columns = detail::mediators_or(d, std::move(columns));
  auto [g0, g1] = split_by_treatment(d);
  check_instance_size(g0.size(), g1.size(), opt.force);
  CouplingFit fit;
  fit.columns = std::move(columns);
  fit.scale.assign(fit.columns.size(), 1.0);
  Matrix x0 = d.block(g0.rows, fit.columns);
  Matrix x1 = d.block(g1.rows, fit.columns);
  if (opt.standardize) {
    const Matrix all = d.block([&] {
      std::vector<std::size_t> r(d.size());
      std::iota(r.begin(), r.end(), 0);
      return r;
    }(), fit.columns);
    for (std::size_t c = 0; c < fit.columns.size(); ++c) {
      const auto col = all.col(static_cast<Eigen::Index>(c));
      const double mean = col.mean();
      const double var = (col.array() - mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(1, all.rows() - 1));
      if (!(var > 0.0)) throw ValidationError("cannot standardize a constant column");
      fit.scale[c] = std::sqrt(var);
      x0.col(static_cast<Eigen::Index>(c)) /= fit.scale[c];
      x1.col(static_cast<Eigen::Index>(c)) /= fit.scale[c];
    }
  }
  fit.coupling = optimal_coupling(build_cost(x0, x1, opt.kind, opt.exponent));
  fit.control_rows = std::move(g0.rows);
  fit.treated_rows = std::move(g1.rows);
  return fit;
}

/// For each grid point: mean over its k nearest controls of
/// (coupling-weighted treated outcome - control outcome).
inline CateCurve scate_coupled(const ObservationalDataset& d, const CouplingFit& fit, std::size_t k, const Matrix& grid) {
  if (static_cast<std::size_t>(grid.cols()) != fit.columns.size()) throw ValidationError("grid dimension mismatch");
  const Matrix w = coupling_rows(fit.coupling);
  const auto y1 = d.outcomes_at(fit.treated_rows);
  const Vector y1v = Eigen::Map<const Vector>(y1.data(), static_cast<Eigen::Index>(y1.size()));
  std::vector<double> effect(fit.control_rows.size());
  for (std::size_t i = 0; i < effect.size(); ++i) {
    effect[i] = w.row(static_cast<Eigen::Index>(i)).dot(y1v.transpose()) - d.outcome(fit.control_rows[i]);
  }
  const Matrix x0 = d.block(fit.control_rows, fit.columns);
  if (k < 1 || k > effect.size()) throw ValidationError("k out of range");
  std::vector<std::string> names;
  for (auto c : fit.columns) names.push_back(d.covariate_names()[c]);
  CateCurve c = make_curve("coupled", grid, names);
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    double s = 0.0;
    for (auto i : nearest_rows(x0, row_span(grid, g), k)) s += effect[i];
    c.estimate[static_cast<std::size_t>(g)] = s / static_cast<double>(k);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Transport-based SCATE

/// Per-arm smoothers of y on `columns`, fitted on each group's rows.
template <class Fit>
auto fit_arm_regressors(const ObservationalDataset& d, const std::vector<std::size_t>& columns, Fit&& fit) {
  const auto [g0, g1] = split_by_treatment(d);
  return std::pair{fit(d.block(g0.rows, columns), d.outcomes_at(g0.rows)),
                   fit(d.block(g1.rows, columns), d.outcomes_at(g1.rows))};
}

inline std::pair<KernelRegressor, KernelRegressor> fit_arm_kernels(const ObservationalDataset& d,
                                                                   const std::vector<std::size_t>& columns,
                                                                   std::vector<double> bandwidth = {}) {
  return fit_arm_regressors(d, columns, [&](Matrix x, std::vector<double> y) {
    return fit_kernel(std::move(x), std::move(y), bandwidth);
  });
}

inline std::pair<KnnRegressor, KnnRegressor> fit_arm_knn(const ObservationalDataset& d,
                                                         const std::vector<std::size_t>& columns, std::size_t k) {
  return fit_arm_regressors(d, columns, [&](Matrix x, std::vector<double> y) {
    return fit_knn(std::move(x), std::move(y), std::min<std::size_t>(k, y.size()));
  });
}

enum class MapKind { quantile, gaussian };

/// SCATE(x) = m1(T(x)) - m0(x) along one mediator, with T the empirical
/// quantile map (or its moment-matching Gaussian variant). Also fills the
/// ceteris paribus curve m1(x) - m0(x). Grid points outside the control
/// support are clamped into it and flagged.
template <Regressor R0, Regressor R1>
CateCurve scate_quantile(const ObservationalDataset& d, std::size_t column, const R0& m0, const R1& m1,
                         std::span<const double> grid, MapKind kind = MapKind::quantile) {
  if (m0.dim() != 1 || m1.dim() != 1) throw ValidationError("scate_quantile needs one-dimensional smoothers");
  const auto qt = fit_quantile_transport(d, column);
  std::optional<GaussianTransport1D> gt;
  if (kind == MapKind::gaussian) gt = fit_gaussian_transport_1d(d, column);
  CateCurve c = make_curve(kind == MapKind::quantile ? "scate-quantile" : "scate-gaussian1d", grid_column(grid),
                           {d.covariate_names()[column]});
  c.cp_estimate.assign(grid.size(), 0.0);
  const double lo = qt.control_cdf().min();
  const double hi = qt.control_cdf().max();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double x = grid[g];
    if (x < lo || x > hi) {
      x = std::clamp(x, lo, hi);
      c.flags[g] |= kFlagClamped;
    }
    const double tx = gt ? (*gt)(x) : qt(x);
    const double base = m0.predict(std::span<const double>(&x, 1));
    c.estimate[g] = m1.predict(std::span<const double>(&tx, 1)) - base;
    c.cp_estimate[g] = m1.predict(std::span<const double>(&x, 1)) - base;
  }
  return c;
}

/// QCATE(u) = m1(F1^{-1}(u)) - m0(F0^{-1}(u)) for u in (0, 1).
template <Regressor R0, Regressor R1>
CateCurve qcate(const ObservationalDataset& d, std::size_t column, const R0& m0, const R1& m1,
                std::span<const double> levels) {
  if (m0.dim() != 1 || m1.dim() != 1) throw ValidationError("qcate needs one-dimensional smoothers");
  for (double u : levels)
    if (!(u > 0.0 && u < 1.0)) throw ValidationError("qcate levels must lie in (0, 1)");
  const auto qt = fit_quantile_transport(d, column);
  CateCurve c = make_curve("qcate", grid_column(levels), {"u"});
  for (std::size_t g = 0; g < levels.size(); ++g) {
    const double q1 = qt.treated_cdf().quantile(levels[g]);
    const double q0 = qt.control_cdf().quantile(levels[g]);
    c.estimate[g] = m1.predict(std::span<const double>(&q1, 1)) - m0.predict(std::span<const double>(&q0, 1));
  }
  return c;
}

/// SCATE_N(x) = m1(mu1 + A (x - mu0)) - m0(x) at each grid row, plus the
/// ceteris paribus curve m1(x) - m0(x).
template <Regressor R0, Regressor R1>
CateCurve scate_gaussian(const ObservationalDataset& d, const GaussianTransport& t, const R0& m0, const R1& m1,
                         const Matrix& grid) {
  if (static_cast<std::size_t>(grid.cols()) != t.dim() || m0.dim() != t.dim() || m1.dim() != t.dim()) {
    throw ValidationError("grid dimension mismatch");
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < t.dim(); ++c)
    names.push_back(c < t.columns().size() ? d.covariate_names()[t.columns()[c]] : "x" + std::to_string(c + 1));
  CateCurve c = make_curve("scate-gaussian", grid, names);
  c.cp_estimate.assign(static_cast<std::size_t>(grid.rows()), 0.0);
  const Matrix moved = push_forward(t, grid);
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    const double base = m0.predict(row_span(grid, g));
    c.estimate[static_cast<std::size_t>(g)] = m1.predict(row_span(moved, g)) - base;
    c.cp_estimate[static_cast<std::size_t>(g)] = m1.predict(row_span(grid, g)) - base;
  }
  return c;
}

/// One-coordinate profile of SCATE_N: at each value v of coordinate `dim`,
/// SCATE_N is averaged over the other coordinates of the `neighbors` control
/// rows whose coordinate `dim` is closest to v (with that coordinate set to v).
template <Regressor R0, Regressor R1>
CateCurve scate_gaussian_profile(const ObservationalDataset& d, const GaussianTransport& t, const R0& m0,
                                 const R1& m1, std::size_t dim, std::span<const double> values,
                                 std::size_t neighbors) {
  if (dim >= t.dim()) throw ValidationError("profile coordinate out of range");
  const auto [g0, g1] = split_by_treatment(d);
  const Matrix x0 = d.block(g0.rows, t.columns());
  const Matrix coord = x0.col(static_cast<Eigen::Index>(dim));
  const std::string name = d.covariate_names()[t.columns()[dim]];
  CateCurve c = make_curve("scate-gaussian-profile", grid_column(values), {name});
  c.cp_estimate.assign(values.size(), 0.0);
  for (std::size_t g = 0; g < values.size(); ++g) {
    const auto near = nearest_rows(coord, std::span<const double>(&values[g], 1), neighbors);
    Matrix pts(static_cast<Eigen::Index>(near.size()), x0.cols());
    for (std::size_t r = 0; r < near.size(); ++r) pts.row(static_cast<Eigen::Index>(r)) = x0.row(static_cast<Eigen::Index>(near[r]));
    pts.col(static_cast<Eigen::Index>(dim)).setConstant(values[g]);
    const CateCurve local = scate_gaussian(d, t, m0, m1, pts);
    c.estimate[g] = std::accumulate(local.estimate.begin(), local.estimate.end(), 0.0) / static_cast<double>(near.size());
    c.cp_estimate[g] = std::accumulate(local.cp_estimate.begin(), local.cp_estimate.end(), 0.0) / static_cast<double>(near.size());
  }
  return c;
}

}  // namespace otcf
