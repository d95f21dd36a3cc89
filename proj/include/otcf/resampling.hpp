#pragma once

#include "otcf/dataset.hpp"
#include "otcf/error.hpp"
#include "otcf/estimators.hpp"
#include "otcf/parallel.hpp"
#include "otcf/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

namespace otcf {

enum class ResampleMode { bootstrap, subsample };

struct ResamplePlan {
  ResampleMode mode = ResampleMode::bootstrap;
  std::size_t replicates = 200;
  std::size_t subsample_size = 0;  // subsample mode only; 0 means n
  std::uint64_t seed = 0;
  double level = 0.95;
  unsigned jobs = 1;
};

/// Any CateCurve-producing operation with its hyperparameters bound. It must
/// evaluate on a fixed grid so replicate curves line up point by point.
using CurveEstimator = std::function<CateCurve(const ObservationalDataset&)>;

/// Rows for one replicate, drawn within each treatment arm so both arms keep
/// their share: with replacement (n_t per arm) or without (n_s * n_t / n per arm).
inline std::vector<std::size_t> stratified_draw(const GroupView& g0, const GroupView& g1, ResampleMode mode,
                                                std::size_t size, Engine& eng) {
  std::vector<std::size_t> rows;
  if (mode == ResampleMode::bootstrap) {
    rows.reserve(g0.size() + g1.size());
    for (const GroupView* g : {&g0, &g1})
      for (std::size_t i = 0; i < g->size(); ++i) rows.push_back(g->rows[uniform_index(eng, g->size())]);
    return rows;
  }
  const std::size_t n = g0.size() + g1.size();
  auto k0 = static_cast<std::size_t>(std::llround(static_cast<double>(size) * static_cast<double>(g0.size()) / static_cast<double>(n)));
  k0 = std::clamp<std::size_t>(k0, 1, g0.size());
  const std::size_t k1 = std::clamp<std::size_t>(size > k0 ? size - k0 : 1, 1, g1.size());
  for (const auto& [g, k] : {std::pair{&g0, k0}, std::pair{&g1, k1}}) {
    for (auto i : sample_without_replacement(g->size(), k, eng)) rows.push_back(g->rows[i]);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Linear-interpolation (type 7) empirical quantile of an unsorted sample.
inline double empirical_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ReplicateAudit {
  std::size_t index = 0;
  std::size_t n0 = 0;
  std::size_t n1 = 0;
  bool failed = false;
  std::string error;
};

struct BootstrapResult {
  CateCurve curve;  // full-sample estimate with lo/hi filled
  std::vector<ReplicateAudit> replicates;
  std::size_t failures = 0;
  std::vector<std::vector<double>> replicate_estimates;  // successful replicates only, in index order
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

namespace detail {

struct ReplicateRun {
  std::vector<std::vector<double>> estimates;
  std::vector<ReplicateAudit> audit;
  std::size_t failures = 0;
};

inline ReplicateRun run_replicates(const ObservationalDataset& d, const CurveEstimator& est, ResampleMode mode,
                                   std::size_t size, std::size_t count, std::uint64_t seed, std::uint64_t tag,
                                   std::size_t points, unsigned jobs, const ProgressFn& progress) {
  const auto [g0, g1] = split_by_treatment(d);
  std::vector<std::vector<double>> out(count);
  std::vector<ReplicateAudit> audit(count);
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(count, jobs, [&](std::size_t b) {
    Engine eng = make_engine(seed, tag, b);
    const auto rows = stratified_draw(g0, g1, mode, size, eng);
    auto& a = audit[b];
    a.index = b;
    for (auto r : rows) (d.treatment(r) ? a.n1 : a.n0) += 1;
    try {
      CateCurve c = est(d.subset(rows));
      if (c.size() != points) throw ValidationError("replicate curve has a different grid size");
      out[b] = std::move(c.estimate);
    } catch (const std::exception& e) {
      a.failed = true;
      a.error = e.what();
    }
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(++done, count);
    }
  });
  ReplicateRun run;
  run.audit = std::move(audit);
  for (std::size_t b = 0; b < count; ++b) {
    if (run.audit[b].failed) ++run.failures;
    else run.estimates.push_back(std::move(out[b]));
  }
  if (static_cast<double>(run.failures) > 0.2 * static_cast<double>(count)) {
    std::string first;
    for (const auto& a : run.audit)
      if (a.failed) {
        first = a.error;
        break;
      }
    throw NumericalError(std::to_string(run.failures) + " of " + std::to_string(count) +
                         " replicates failed (limit 20%); first failure: " + first);
  }
  return run;
}

}  // namespace detail

/// Percentile bootstrap band around the full-sample curve. Bands are widened
/// when needed so that lo <= estimate <= hi at every point.
inline BootstrapResult bootstrap_curve(const ObservationalDataset& d, const CurveEstimator& est,
                                       const ResamplePlan& plan, const ProgressFn& progress = {}) {
  if (plan.replicates < 2) throw ValidationError("bootstrap needs at least two replicates");
  if (!(plan.level > 0.0 && plan.level < 1.0)) throw ValidationError("band level must lie in (0, 1)");
  const std::size_t size = plan.subsample_size ? plan.subsample_size : d.size();
  if (plan.mode == ResampleMode::subsample && size > d.size()) throw ValidationError("subsample larger than the data");
  BootstrapResult res;
  res.curve = est(d);
  const std::size_t points = res.curve.size();
  auto run = detail::run_replicates(d, est, plan.mode, size, plan.replicates, plan.seed, kStreamBootstrap, points,
                                    plan.jobs, progress);
  res.curve.lo.assign(points, 0.0);
  res.curve.hi.assign(points, 0.0);
  res.curve.level = plan.level;
  const double alpha = 0.5 * (1.0 - plan.level);
  std::vector<double> column(run.estimates.size());
  for (std::size_t g = 0; g < points; ++g) {
    for (std::size_t b = 0; b < run.estimates.size(); ++b) column[b] = run.estimates[b][g];
    res.curve.lo[g] = std::min(empirical_quantile(column, alpha), res.curve.estimate[g]);
    res.curve.hi[g] = std::max(empirical_quantile(column, 1.0 - alpha), res.curve.estimate[g]);
  }
  res.replicates = std::move(run.audit);
  res.failures = run.failures;
  res.replicate_estimates = std::move(run.estimates);
  return res;
}

struct StabilityRow {
  std::size_t subsample_size;
  std::size_t point;
  double mean;
  double sd;
};

struct StabilityTable {
  Matrix grid;
  std::vector<std::string> grid_names;
  std::vector<StabilityRow> rows;
  std::size_t replicates = 0;
};

/// For each subsample size, B stratified subsamples without replacement; per
/// grid point the mean and standard deviation (0 when B = 1) of the estimates.
inline StabilityTable subsample_stability(const ObservationalDataset& d, const CurveEstimator& est,
                                          const std::vector<std::size_t>& sizes, std::size_t replicates,
                                          std::uint64_t seed, unsigned jobs = 1, const ProgressFn& progress = {}) {
  if (replicates < 1) throw ValidationError("stability needs at least one replicate");
  StabilityTable table;
  table.replicates = replicates;
  std::size_t points = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const std::size_t size = sizes[s];
    if (size < 2 || size > d.size()) throw ValidationError("subsample size must lie in [2, n]");
    if (s == 0) {
      const CateCurve ref = est(d);
      table.grid = ref.grid;
      table.grid_names = ref.grid_names;
      points = ref.size();
    }
    const auto run = detail::run_replicates(d, est, ResampleMode::subsample, size, replicates,
                                            substream_seed(seed, kStreamSubsample, size), kStreamSubsample, points,
                                            jobs, progress);
    const double b = static_cast<double>(run.estimates.size());
    for (std::size_t g = 0; g < points; ++g) {
      double mean = 0.0;
      for (const auto& e : run.estimates) mean += e[g];
      mean /= b;
      double ss = 0.0;
      for (const auto& e : run.estimates) ss += (e[g] - mean) * (e[g] - mean);
      table.rows.push_back({size, g, mean, run.estimates.size() > 1 ? std::sqrt(ss / (b - 1.0)) : 0.0});
    }
  }
  return table;
}

inline void write_stability_csv(std::ostream& out, const StabilityTable& t) {
  out << "subsample_size,point";
  for (const auto& n : t.grid_names) out << ',' << n;
  out << ",mean,sd,replicates\n";
  for (const auto& r : t.rows) {
    out << r.subsample_size << ',' << r.point;
    for (Eigen::Index d = 0; d < t.grid.cols(); ++d)
      out << ',' << detail::format_double(t.grid(static_cast<Eigen::Index>(r.point), d));
    out << ',' << detail::format_double(r.mean) << ',' << detail::format_double(r.sd) << ',' << t.replicates << '\n';
  }
}

}  // namespace otcf
