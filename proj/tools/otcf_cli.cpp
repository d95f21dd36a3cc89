#include "otcf/otcf.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace otcf;

namespace {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level() {
  const char* env = std::getenv("OTCF_LOG");
  if (!env) return LogLevel::info;
  const std::string v(env);
  if (v == "error") return LogLevel::error;
  if (v == "warn") return LogLevel::warn;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::info;
}

void log(LogLevel level, const std::string& msg) {
  static const LogLevel threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Options

struct Global {
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  bool force = false;
};

struct DataOptions {
  std::string path;
  std::string outcome = "y";
  std::string treatment = "t";
  std::vector<std::string> covariates;
  std::vector<std::string> colliders;
  std::vector<std::string> label_map;  // label=0|1|drop
  std::string delimiter = ",";

  void attach(CLI::App* app) {
    app->add_option("--data", path, "Input CSV")->required()->check(CLI::ExistingFile);
    app->add_option("--outcome", outcome, "Outcome column");
    app->add_option("--treatment", treatment, "Treatment column");
    app->add_option("--covariates", covariates, "Covariate columns (default: all others)")->delimiter(',');
    app->add_option("--colliders", colliders, "Covariates that are colliders (never transported)")->delimiter(',');
    app->add_option("--label-map", label_map, "Treatment relabelling, label=0|1|drop")->delimiter(',');
    app->add_option("--delimiter", delimiter, "Field delimiter");
  }
};

struct EstimatorOptions {
  std::string estimator;
  std::string outcome_model;
  std::vector<std::string> columns;
  std::vector<double> bandwidth;
  std::size_t k = 0;
  std::size_t model_k = 0;
  std::string grid;
  std::size_t grid_points = 0;
  std::size_t levels = 99;
  std::vector<std::string> propensity_columns;
  int propensity_degree = 1;
  double ridge = 0.0;
  bool standardize = false;
  std::string match = "greedy";
  std::size_t profile_neighbors = 0;

  void attach(CLI::App* app) {
    app->add_option("--estimator", estimator, "ipw-kernel|ipw-knn|matched|coupled|scate-quantile|scate-gaussian|qcate")
        ->required()
        ->check(CLI::IsMember({"ipw-kernel", "ipw-knn", "matched", "coupled", "scate-quantile", "scate-gaussian", "qcate"}));
    app->add_option("--outcome-model", outcome_model, "kernel|knn (scate-* and qcate)")
        ->check(CLI::IsMember({"kernel", "knn"}));
    app->add_option("--columns", columns, "Covariate columns the estimator works on")->delimiter(',');
    app->add_option("--bandwidth", bandwidth, "Kernel bandwidth(s); default Silverman")->delimiter(',');
    app->add_option("--k", k, "Neighbour count for ipw-knn, matched and coupled (default sqrt(n0))");
    app->add_option("--model-k", model_k, "Neighbour count of the knn outcome model (default sqrt(n_t))");
    app->add_option("--grid", grid, "Grid as lo:hi:points (per column)");
    app->add_option("--grid-points", grid_points, "Points of the default grid per column");
    app->add_option("--levels", levels, "Number of qcate levels u = i / (levels + 1)");
    app->add_option("--propensity-columns", propensity_columns, "Propensity covariates (default: colliders)")
        ->delimiter(',');
    app->add_option("--propensity-degree", propensity_degree, "Polynomial degree of the propensity model");
    app->add_option("--ridge", ridge, "Ridge penalty for the propensity model");
    app->add_flag("--standardize", standardize, "Standardize coupling coordinates by pooled sd");
    app->add_option("--match", match, "matched: pairs from greedy|optimal matching")
        ->check(CLI::IsMember({"greedy", "optimal"}));
    app->add_option("--profile", profile_neighbors,
                    "scate-gaussian: profile along the first column, averaging over this many nearest controls");
  }
};

// ---------------------------------------------------------------------------
// Helpers

std::vector<std::string> header_of(const std::string& path, char delim) {
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> out;
  for (auto c : otcf::detail::split_line(line, delim)) out.emplace_back(c);
  return out;
}

ObservationalDataset load_data(const DataOptions& o) {
  if (o.delimiter.size() != 1) throw ValidationError("delimiter must be a single character");
  CsvSchema s;
  s.outcome = o.outcome;
  s.treatment = o.treatment;
  s.delimiter = o.delimiter[0];
  s.covariates = o.covariates;
  if (s.covariates.empty()) {
    for (const auto& h : header_of(o.path, s.delimiter))
      if (h != s.outcome && h != s.treatment) s.covariates.push_back(h);
  }
  for (const auto& c : o.colliders)
    if (std::find(s.covariates.begin(), s.covariates.end(), c) == s.covariates.end())
      throw ValidationError("collider '" + c + "' is not a covariate");
  for (const auto& c : s.covariates) {
    const bool col = std::find(o.colliders.begin(), o.colliders.end(), c) != o.colliders.end();
    s.roles.push_back(col ? CovariateRole::collider : CovariateRole::mediator);
  }
  for (const auto& m : o.label_map) {
    const auto eq = m.find('=');
    if (eq == std::string::npos) throw ValidationError("label map entries look like label=0|1|drop");
    const std::string key = m.substr(0, eq), val = m.substr(eq + 1);
    if (val == "drop") s.label_map[key] = std::nullopt;
    else if (val == "0" || val == "1") s.label_map[key] = val == "1" ? 1 : 0;
    else throw ValidationError("label map value must be 0, 1 or drop");
  }
  auto res = load_csv(o.path, s);
  log(LogLevel::info, "loaded " + std::to_string(res.dataset.size()) + " rows from " + o.path + " (" +
                          std::to_string(res.report.dropped_missing) + " dropped for missing values, " +
                          std::to_string(res.report.dropped_label) + " for labels)");
  return std::move(res.dataset);
}

std::vector<std::size_t> resolve_columns(const ObservationalDataset& d, const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  for (const auto& n : names) out.push_back(d.column_index(n));
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
  log(LogLevel::info, "wrote " + p.string());
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) throw ValidationError("cannot create output directory " + dir);
  return p;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 3) throw ValidationError("grid must look like lo:hi:points");
  const auto lo = otcf::detail::parse_double(parts[0]);
  const auto hi = otcf::detail::parse_double(parts[1]);
  const auto n = otcf::detail::parse_double(parts[2]);
  if (!lo || !hi || !n || *n < 1 || *hi < *lo) throw ValidationError("invalid grid specification " + spec);
  const auto points = static_cast<std::size_t>(*n);
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = points == 1 ? *lo : *lo + (*hi - *lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

/// Cartesian product of per-column grids, last column fastest.
Matrix product_grid(const std::vector<std::vector<double>>& axes) {
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.size();
  Matrix g(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(axes.size()));
  for (std::size_t r = 0; r < total; ++r) {
    std::size_t rem = r;
    for (std::size_t c = axes.size(); c-- > 0;) {
      g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = axes[c][rem % axes[c].size()];
      rem /= axes[c].size();
    }
  }
  return g;
}

Matrix build_grid(const ObservationalDataset& d, const std::vector<std::size_t>& cols, const EstimatorOptions& o) {
  std::vector<std::vector<double>> axes;
  const std::size_t points = o.grid_points ? o.grid_points : (cols.size() == 1 ? 101 : 21);
  for (auto c : cols) axes.push_back(o.grid.empty() ? default_grid(d, c, points) : parse_grid(o.grid));
  return product_grid(axes);
}

std::size_t sqrt_size(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n)))));
}

template <class F>
auto with_outcome_model(const ObservationalDataset& d, const std::vector<std::size_t>& cols, const EstimatorOptions& o,
                        F&& body) {
  if (o.outcome_model == "kernel") {
    const auto [m0, m1] = fit_arm_kernels(d, cols, o.bandwidth);
    return body(m0, m1);
  }
  const auto [g0, g1] = split_by_treatment(d);
  const std::size_t k = o.model_k ? o.model_k : sqrt_size(std::min(g0.size(), g1.size()));
  const auto [m0, m1] = fit_arm_knn(d, cols, k);
  return body(m0, m1);
}

/// Builds the estimator as a function of a dataset. The grid is fixed from
/// the full sample so every bootstrap replicate reports the same points.
CurveEstimator make_estimator(const ObservationalDataset& full, const EstimatorOptions& o, const Global& g) {
  const auto& est = o.estimator;
  const bool needs_model = est == "scate-quantile" || est == "scate-gaussian" || est == "qcate";
  if (needs_model && o.outcome_model.empty()) {
    throw ValidationError("--estimator " + est + " requires --outcome-model kernel|knn");
  }
  std::vector<std::size_t> cols = resolve_columns(full, o.columns);
  const bool one_dim = est == "ipw-kernel" || est == "ipw-knn" || est == "scate-quantile" || est == "qcate";
  if (cols.empty()) {
    cols = one_dim ? std::vector<std::size_t>{full.mediator_columns().empty() ? 0 : full.mediator_columns().front()}
                   : full.mediator_columns();
  }
  if (one_dim && cols.size() != 1) throw ValidationError("--estimator " + est + " works on exactly one column");
  if (cols.empty()) throw ValidationError("no mediator columns available");

  if (est == "ipw-kernel" || est == "ipw-knn") {
    const std::size_t column = cols[0];
    const auto grid_m = build_grid(full, cols, o);
    const std::vector<double> grid(grid_m.data(), grid_m.data() + grid_m.rows());
    std::optional<std::vector<std::size_t>> pcols;
    if (!o.propensity_columns.empty()) pcols = resolve_columns(full, o.propensity_columns);
    double h = o.bandwidth.empty() ? 0.0 : o.bandwidth.front();
    if (est == "ipw-kernel" && h == 0.0) {
      h = silverman_bandwidth(Matrix(full.covariates().col(static_cast<Eigen::Index>(column))))[0];
    }
    return [=](const ObservationalDataset& d) {
      const auto pm = fit_propensity(d, pcols, o.propensity_degree, o.ridge);
      const auto p = pm.scores(d);
      if (est == "ipw-kernel") return cate_ipw_kernel(d, p, column, grid, h);
      return cate_ipw_knn(d, p, column, grid, o.k ? o.k : sqrt_size(d.size()));
    };
  }
  if (est == "matched") {
    const auto grid = build_grid(full, cols, o);
    const std::uint64_t seed = g.seed;
    return [=](const ObservationalDataset& d) {
      const auto mp = o.match == "optimal" ? match_optimal(d, seed, cols, g.force) : match_greedy(d, seed, cols);
      return scate_matched(d, mp, o.k ? o.k : sqrt_size(mp.pairs.size()), grid);
    };
  }
  if (est == "coupled") {
    const auto grid = build_grid(full, cols, o);
    CouplingOptions copt;
    copt.standardize = o.standardize;
    copt.force = g.force;
    return [=](const ObservationalDataset& d) {
      const auto fit = fit_coupling(d, cols, copt);
      return scate_coupled(d, fit, o.k ? o.k : sqrt_size(fit.control_rows.size()), grid);
    };
  }
  if (est == "scate-quantile") {
    const auto grid_m = build_grid(full, cols, o);
    const std::vector<double> grid(grid_m.data(), grid_m.data() + grid_m.rows());
    return [=](const ObservationalDataset& d) {
      return with_outcome_model(d, cols, o, [&](const auto& m0, const auto& m1) {
        return scate_quantile(d, cols[0], m0, m1, grid);
      });
    };
  }
  if (est == "qcate") {
    if (o.levels < 1) throw ValidationError("--levels must be positive");
    std::vector<double> levels(o.levels);
    for (std::size_t i = 0; i < o.levels; ++i) levels[i] = static_cast<double>(i + 1) / static_cast<double>(o.levels + 1);
    return [=](const ObservationalDataset& d) {
      return with_outcome_model(d, cols, o, [&](const auto& m0, const auto& m1) {
        return qcate(d, cols[0], m0, m1, levels);
      });
    };
  }
  // scate-gaussian
  if (o.profile_neighbors) {
    const auto grid_m = build_grid(full, {cols[0]}, o);
    const std::vector<double> values(grid_m.data(), grid_m.data() + grid_m.rows());
    return [=](const ObservationalDataset& d) {
      const auto t = fit_gaussian_transport(d, cols);
      return with_outcome_model(d, cols, o, [&](const auto& m0, const auto& m1) {
        return scate_gaussian_profile(d, t, m0, m1, 0, values, o.profile_neighbors);
      });
    };
  }
  const auto grid = build_grid(full, cols, o);
  return [=](const ObservationalDataset& d) {
    const auto t = fit_gaussian_transport(d, cols);
    return with_outcome_model(d, cols, o, [&](const auto& m0, const auto& m1) {
      return scate_gaussian(d, t, m0, m1, grid);
    });
  };
}

void write_curve_files(const fs::path& out, const CateCurve& c) {
  std::ostringstream csv;
  write_curve_csv(csv, c);
  write_text(out / "curve.csv", csv.str());
  write_text(out / "curve.json", dump(curve_to_json(c)));
  if (c.grid.cols() == 2) {
    std::ostringstream sm;
    write_sign_map_csv(sm, c);
    write_text(out / "sign_map.csv", sm.str());
  }
  std::size_t flagged = 0;
  for (auto f : c.flags) flagged += f != kFlagNone;
  if (flagged) log(LogLevel::warn, std::to_string(flagged) + " grid points flagged (clamped or fallback)");
}

// ---------------------------------------------------------------------------
// Commands

struct SimulateOptions {
  std::string preset = "appendix-a2";
  std::size_t n = 10000;
  std::optional<double> r;
  std::optional<double> gamma;
  std::string out = ".";
};

void cmd_simulate(const SimulateOptions& o, const Global& g) {
  if (o.preset != "appendix-a2") throw ValidationError("unknown preset '" + o.preset + "'");
  auto p = sem::toy_params(o.r.value_or(0.4));
  if (o.gamma) p.gamma = *o.gamma;
  p.validate();
  const auto s = sem::simulate(p, o.n, g.seed, g.jobs);
  const auto out = prepare_out(o.out);
  std::ostringstream csv;
  write_csv(csv, s.data);
  write_text(out / "dataset.csv", csv.str());
  nlohmann::json meta = {{"preset", o.preset}, {"n", o.n}, {"seed", g.seed}, {"params", p.to_json()},
                         {"ate", sem::analytic_ate(p)}, {"gamma_direct", sem::gamma_direct(p)}};
  const auto lines = sem::cate_lines(p);
  meta["cate_lines"] = {{"cp_intercept", lines.cp_intercept}, {"cp_slope", lines.cp_slope},
                        {"mm_intercept", lines.mm_intercept}, {"mm_slope", lines.mm_slope},
                        {"gap_intercept", lines.gap_intercept}, {"gap_slope", lines.gap_slope}};
  write_text(out / "params.json", dump(meta));
  std::ostringstream an;
  an << "x1,cate_mm,cate_cp\n";
  for (int i = 0; i <= 120; ++i) {
    const double x = -3.0 + 0.05 * i;
    an << otcf::detail::format_double(x) << ',' << otcf::detail::format_double(sem::analytic_cate_mm(p, x)) << ','
       << otcf::detail::format_double(sem::analytic_cate_cp(p, x)) << '\n';
  }
  write_text(out / "analytic.csv", an.str());
}

struct TransportOptions {
  DataOptions data;
  std::string method = "quantile";
  std::vector<std::string> columns;
  std::string grid;
  std::string out = ".";
};

void cmd_transport(const TransportOptions& o, const Global& g) {
  const auto d = load_data(o.data);
  const auto out = prepare_out(o.out);
  auto cols = resolve_columns(d, o.columns);
  if (o.method == "quantile") {
    if (cols.empty()) cols = {d.mediator_columns().empty() ? 0 : d.mediator_columns().front()};
    if (cols.size() != 1) throw ValidationError("quantile transport works on exactly one column");
    const auto t = fit_quantile_transport(d, cols[0], g.force);
    write_text(out / "map.json", dump(t.to_json()));
    std::vector<double> grid;
    if (o.grid.empty()) {
      grid = t.control_cdf().sorted();
      grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    } else {
      grid = parse_grid(o.grid);
    }
    std::ostringstream csv;
    csv << "from,to\n";
    for (double x : grid) csv << otcf::detail::format_double(x) << ',' << otcf::detail::format_double(t(x)) << '\n';
    write_text(out / "transported.csv", csv.str());
    return;
  }
  if (o.method == "gaussian") {
    if (cols.empty()) cols = d.mediator_columns();
    const auto t = fit_gaussian_transport(d, cols);
    const auto [g0, g1] = split_by_treatment(d);
    const auto m0 = compute_moments(d.block(g0.rows, cols));
    const auto m1 = compute_moments(d.block(g1.rows, cols));
    const Eigen::MatrixXd s0 =
        m0.cov + t.ridge() * Eigen::MatrixXd::Identity(m0.cov.rows(), m0.cov.cols());
    const double residual = fixed_point_residual(t.matrix(), s0, m1.cov);
    auto j = t.to_json();
    j["fixed_point_residual"] = residual;
    j["ridge"] = t.ridge();
    write_text(out / "map.json", dump(j));
    if (!(residual <= 1e-8)) {
      throw NumericalError("self-check failed: relative residual of A S0 A = S1 is " +
                           otcf::detail::format_double(residual));
    }
    const Matrix x0 = d.block(g0.rows, cols);
    const Matrix moved = push_forward(t, x0);
    std::ostringstream csv;
    for (auto c : cols) csv << "from_" << d.covariate_names()[c] << ',';
    for (std::size_t c = 0; c < cols.size(); ++c)
      csv << "to_" << d.covariate_names()[cols[c]] << (c + 1 < cols.size() ? "," : "\n");
    for (Eigen::Index r = 0; r < x0.rows(); ++r) {
      for (Eigen::Index c = 0; c < x0.cols(); ++c) csv << otcf::detail::format_double(x0(r, c)) << ',';
      for (Eigen::Index c = 0; c < moved.cols(); ++c)
        csv << otcf::detail::format_double(moved(r, c)) << (c + 1 < moved.cols() ? "," : "\n");
    }
    write_text(out / "transported.csv", csv.str());
    return;
  }
  if (o.method == "coupling") {
    CouplingOptions copt;
    copt.force = g.force;
    const auto fit = fit_coupling(d, cols, copt);
    std::ostringstream csv;
    write_coupling_csv(csv, fit.coupling);
    write_text(out / "coupling.csv", csv.str());
    nlohmann::json j = {{"type", "coupling"},
                        {"columns", fit.columns},
                        {"control_rows", fit.control_rows},
                        {"treated_rows", fit.treated_rows},
                        {"objective", fit.coupling.objective},
                        {"marginal_residual", fit.coupling.marginal_residual()},
                        {"pivots", fit.coupling.pivots}};
    write_text(out / "map.json", dump(j));
    return;
  }
  throw ValidationError("unknown transport method '" + o.method + "'");
}

struct MatchOptions {
  DataOptions data;
  std::string method = "greedy";
  std::vector<std::string> columns;
  std::string out = ".";
};

void cmd_match(const MatchOptions& o, const Global& g) {
  const auto d = load_data(o.data);
  const auto out = prepare_out(o.out);
  const auto cols = resolve_columns(d, o.columns);
  const auto mp = o.method == "optimal" ? match_optimal(d, g.seed, cols, g.force) : match_greedy(d, g.seed, cols);
  std::vector<std::size_t> c, t;
  for (const auto& p : mp.pairs) {
    c.push_back(p.control_row);
    t.push_back(p.treated_row);
  }
  std::ostringstream csv;
  write_matching_csv(csv, c, t);
  write_text(out / "matching.csv", csv.str());
  write_text(out / "summary.json", dump({{"method", o.method},
                                         {"pairs", mp.pairs.size()},
                                         {"mean_difference", mp.mean_difference()},
                                         {"total_distance", mp.total_distance}}));
}

struct CateOptions {
  DataOptions data;
  EstimatorOptions est;
  std::string out = ".";
};

void cmd_cate(const CateOptions& o, const Global& g) {
  const auto d = load_data(o.data);
  const auto est = make_estimator(d, o.est, g);
  const auto out = prepare_out(o.out);
  write_curve_files(out, est(d));
  if (o.est.estimator == "ipw-kernel" || o.est.estimator == "ipw-knn") {
    std::optional<std::vector<std::size_t>> pcols;
    if (!o.est.propensity_columns.empty()) pcols = resolve_columns(d, o.est.propensity_columns);
    const auto r = sate_ipw(d, fit_propensity(d, pcols, o.est.propensity_degree, o.est.ridge));
    if (r.warning) log(LogLevel::warn, *r.warning);
    write_text(out / "sate.json", dump({{"sate", r.estimate},
                                        {"ess_control", r.ess_control},
                                        {"ess_treated", r.ess_treated},
                                        {"clipped", r.clipped}}));
  }
}

struct BootstrapOptions {
  DataOptions data;
  EstimatorOptions est;
  std::size_t replicates = 200;
  double level = 0.95;
  std::string mode = "bootstrap";
  std::size_t subsample = 0;
  std::string out = ".";
};

void cmd_bootstrap(const BootstrapOptions& o, const Global& g) {
  const auto d = load_data(o.data);
  const auto est = make_estimator(d, o.est, g);
  const auto out = prepare_out(o.out);
  ResamplePlan plan;
  plan.mode = o.mode == "subsample" ? ResampleMode::subsample : ResampleMode::bootstrap;
  plan.replicates = o.replicates;
  plan.subsample_size = o.subsample;
  plan.seed = g.seed;
  plan.level = o.level;
  plan.jobs = g.jobs;
  const std::size_t step = std::max<std::size_t>(1, o.replicates / 20);
  const auto res = bootstrap_curve(d, est, plan, [&](std::size_t done, std::size_t total) {
    if (done % step == 0 || done == total)
      log(LogLevel::info, "bootstrap progress " + std::to_string(done) + "/" + std::to_string(total));
  });
  const auto [g0, g1] = split_by_treatment(d);
  for (const auto& a : res.replicates) {
    const bool kept = plan.mode == ResampleMode::subsample ||
                      (a.n0 == g0.size() && a.n1 == g1.size());
    log(LogLevel::info, "replicate " + std::to_string(a.index) + " n0=" + std::to_string(a.n0) +
                            " n1=" + std::to_string(a.n1) + " stratified=" + (kept ? "yes" : "no") +
                            (a.failed ? " failed: " + a.error : ""));
  }
  write_curve_files(out, res.curve);
  nlohmann::json audit = nlohmann::json::array();
  for (const auto& a : res.replicates)
    audit.push_back({{"index", a.index}, {"n0", a.n0}, {"n1", a.n1}, {"failed", a.failed}, {"error", a.error}});
  write_text(out / "replicates.json", dump({{"replicates", o.replicates},
                                            {"failures", res.failures},
                                            {"level", o.level},
                                            {"seed", g.seed},
                                            {"audit", audit}}));
}

struct StabilityOptions {
  DataOptions data;
  EstimatorOptions est;
  std::vector<std::size_t> sizes;
  std::size_t replicates = 20;
  std::string out = ".";
};

void cmd_stability(const StabilityOptions& o, const Global& g) {
  const auto d = load_data(o.data);
  const auto est = make_estimator(d, o.est, g);
  const auto out = prepare_out(o.out);
  const auto table = subsample_stability(d, est, o.sizes, o.replicates, g.seed, g.jobs,
                                         [&](std::size_t done, std::size_t total) {
                                           if (done == total)
                                             log(LogLevel::info, "stability: finished " + std::to_string(total) +
                                                                     " replicates for one size");
                                         });
  std::ostringstream csv;
  write_stability_csv(csv, table);
  write_text(out / "stability.csv", csv.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual CATE estimation with optimal transport"};
  app.set_config("--config", "", "key=value configuration file");
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Master random seed");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Bypass resource guards and collider checks");

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Draw a dataset from the toy SEM");
  s->add_option("--preset", sim.preset, "Parameter preset")->check(CLI::IsMember({"appendix-a2"}));
  s->add_option("--n", sim.n, "Rows")->check(CLI::PositiveNumber);
  s->add_option("--r", sim.r, "Mediator correlation in both arms");
  s->add_option("--gamma", sim.gamma, "Direct treatment effect");
  s->add_option("--out", sim.out, "Output directory");

  TransportOptions tr;
  auto* t = app.add_subcommand("transport", "Fit a transport map between the arms");
  tr.data.attach(t);
  t->add_option("--method", tr.method, "quantile|gaussian|coupling")
      ->check(CLI::IsMember({"quantile", "gaussian", "coupling"}));
  t->add_option("--columns", tr.columns, "Columns to transport")->delimiter(',');
  t->add_option("--grid", tr.grid, "Grid lo:hi:points for the quantile map");
  t->add_option("--out", tr.out, "Output directory");

  MatchOptions mo;
  auto* m = app.add_subcommand("match", "1:1 matching between the arms");
  mo.data.attach(m);
  m->add_option("--method", mo.method, "greedy|optimal")->check(CLI::IsMember({"greedy", "optimal"}));
  m->add_option("--columns", mo.columns, "Matching columns (default: mediators)")->delimiter(',');
  m->add_option("--out", mo.out, "Output directory");

  CateOptions co;
  auto* c = app.add_subcommand("cate", "Estimate a CATE curve");
  co.data.attach(c);
  co.est.attach(c);
  c->add_option("--out", co.out, "Output directory");

  BootstrapOptions bo;
  auto* b = app.add_subcommand("bootstrap", "Bootstrap bands for a CATE curve");
  bo.data.attach(b);
  bo.est.attach(b);
  b->add_option("--replicates", bo.replicates, "Replicates (>= 2)");
  b->add_option("--level", bo.level, "Band level");
  b->add_option("--mode", bo.mode, "bootstrap|subsample")->check(CLI::IsMember({"bootstrap", "subsample"}));
  b->add_option("--subsample", bo.subsample, "Subsample size (subsample mode)");
  b->add_option("--out", bo.out, "Output directory");

  StabilityOptions so;
  auto* st = app.add_subcommand("stability", "Subsample-size stability table");
  so.data.attach(st);
  so.est.attach(st);
  st->add_option("--sizes", so.sizes, "Subsample sizes")->delimiter(',')->required();
  st->add_option("--replicates", so.replicates, "Replicates per size");
  st->add_option("--out", so.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) cmd_simulate(sim, g);
    else if (*t) cmd_transport(tr, g);
    else if (*m) cmd_match(mo, g);
    else if (*c) cmd_cate(co, g);
    else if (*b) cmd_bootstrap(bo, g);
    else if (*st) cmd_stability(so, g);
  } catch (const ValidationError& e) {
    log(LogLevel::error, e.what());
    return 2;
  } catch (const NumericalError& e) {
    log(LogLevel::error, e.what());
    return 3;
  } catch (const ResourceGuardError& e) {
    log(LogLevel::error, std::string(e.what()) + " (use --force or subsample the data)");
    return 4;
  } catch (const std::exception& e) {
    log(LogLevel::error, e.what());
    return 3;
  }
  return 0;
}
