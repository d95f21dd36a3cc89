#pragma once

#include "otcf/error.hpp"
#include "otcf/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace otcf {

/// Mediators are moved by the treatment and get transported; colliders are
/// exogenous and pass through unchanged.
enum class CovariateRole { mediator, collider };

inline std::string to_string(CovariateRole r) {
  return r == CovariateRole::mediator ? "mediator" : "collider";
}

inline CovariateRole parse_role(std::string_view s) {
  if (s == "mediator" || s == "m") return CovariateRole::mediator;
  if (s == "collider" || s == "c") return CovariateRole::collider;
  throw ValidationError("unknown covariate role '" + std::string(s) + "'");
}

/// Immutable sample of (outcome, treatment, covariates).
class ObservationalDataset {
 public:
  ObservationalDataset(std::vector<double> outcomes, std::vector<int> treatments,
                       Matrix covariates, std::vector<std::string> names,
                       std::vector<CovariateRole> roles = {})
      : y_(std::move(outcomes)),
        t_(std::move(treatments)),
        x_(std::move(covariates)),
        names_(std::move(names)),
        roles_(std::move(roles)) {
    const std::size_t n = y_.size();
    if (n == 0) throw ValidationError("dataset must contain at least one row");
    if (t_.size() != n || static_cast<std::size_t>(x_.rows()) != n) {
      throw ValidationError("outcome, treatment and covariate arrays differ in length");
    }
    if (x_.cols() < 1) throw ValidationError("dataset needs at least one covariate");
    const auto k = static_cast<std::size_t>(x_.cols());
    if (names_.empty()) {
      for (std::size_t j = 0; j < k; ++j) names_.push_back("x" + std::to_string(j + 1));
    }
    if (roles_.empty()) roles_.assign(k, CovariateRole::mediator);
    if (names_.size() != k || roles_.size() != k) {
      throw ValidationError("covariate names/roles do not match covariate count");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (t_[i] != 0 && t_[i] != 1) throw ValidationError("invalid treatment label");
      if (!std::isfinite(y_[i])) throw ValidationError("non-finite outcome");
    }
    if (!x_.allFinite()) throw ValidationError("non-finite covariate value");
  }

  std::size_t size() const { return y_.size(); }
  std::size_t num_covariates() const { return static_cast<std::size_t>(x_.cols()); }

  const std::vector<double>& outcomes() const { return y_; }
  const std::vector<int>& treatments() const { return t_; }
  const Matrix& covariates() const { return x_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const std::vector<CovariateRole>& covariate_roles() const { return roles_; }

  double outcome(std::size_t i) const { return y_[i]; }
  int treatment(std::size_t i) const { return t_[i]; }
  std::span<const double> row(std::size_t i) const {
    return row_span(x_, static_cast<Eigen::Index>(i));
  }

  std::vector<std::size_t> columns_with_role(CovariateRole r) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < roles_.size(); ++j)
      if (roles_[j] == r) out.push_back(j);
    return out;
  }
  std::vector<std::size_t> mediator_columns() const {
    return columns_with_role(CovariateRole::mediator);
  }
  std::vector<std::size_t> collider_columns() const {
    return columns_with_role(CovariateRole::collider);
  }

  std::size_t column_index(std::string_view name) const {
    for (std::size_t j = 0; j < names_.size(); ++j)
      if (names_[j] == name) return j;
    throw ValidationError("unknown covariate column '" + std::string(name) + "'");
  }

  /// Rows `rows` (duplicates allowed, as in a bootstrap draw) as a new dataset.
  ObservationalDataset subset(const std::vector<std::size_t>& rows) const {
    std::vector<double> y(rows.size());
    std::vector<int> t(rows.size());
    Matrix x(static_cast<Eigen::Index>(rows.size()), x_.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      y[r] = y_.at(rows[r]);
      t[r] = t_[rows[r]];
      x.row(static_cast<Eigen::Index>(r)) = x_.row(static_cast<Eigen::Index>(rows[r]));
    }
    return ObservationalDataset(std::move(y), std::move(t), std::move(x), names_, roles_);
  }

  /// Covariate block for the given rows and columns.
  Matrix block(const std::vector<std::size_t>& rows,
               const std::vector<std::size_t>& cols) const {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c)
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            x_(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
    return out;
  }

  std::vector<double> outcomes_at(const std::vector<std::size_t>& rows) const {
    std::vector<double> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out[r] = y_[rows[r]];
    return out;
  }

 private:
  std::vector<double> y_;
  std::vector<int> t_;
  Matrix x_;
  std::vector<std::string> names_;
  std::vector<CovariateRole> roles_;
};

/// Sorted row indices of one treatment arm.
struct GroupView {
  int label = 0;
  std::vector<std::size_t> rows;

  std::size_t size() const { return rows.size(); }
};

inline std::pair<GroupView, GroupView> split_by_treatment(const ObservationalDataset& d) {
  GroupView control{0, {}};
  GroupView treated{1, {}};
  for (std::size_t i = 0; i < d.size(); ++i) {
    (d.treatment(i) == 0 ? control : treated).rows.push_back(i);
  }
  if (control.rows.empty() || treated.rows.empty()) {
    throw ValidationError("degenerate treatment assignment");
  }
  return {std::move(control), std::move(treated)};
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvSchema {
  std::string outcome = "y";
  std::string treatment = "t";
  std::vector<std::string> covariates;
  std::vector<CovariateRole> roles;  // empty: all mediators
  char delimiter = ',';
  /// Extra treatment labels: raw cell text -> 0/1, or nullopt to drop the row.
  std::map<std::string, std::optional<int>> label_map;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t dropped_missing = 0;
  std::size_t dropped_label = 0;

  std::size_t dropped() const { return dropped_missing + dropped_label; }
};

struct LoadResult {
  ObservationalDataset dataset;
  LoadReport report;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_line(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan";
}

inline std::optional<double> parse_double(std::string_view cell) {
  double v = 0.0;
  const char* first = cell.data();
  if (!cell.empty() && cell.front() == '+') ++first;
  const auto res = std::from_chars(first, cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline LoadResult parse_csv(std::istream& in, const CsvSchema& schema) {
  if (schema.covariates.empty()) throw ValidationError("schema names no covariate columns");
  if (!schema.roles.empty() && schema.roles.size() != schema.covariates.size()) {
    throw ValidationError("schema roles do not match covariate count");
  }
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV has no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
  const auto header = detail::split_line(line, schema.delimiter);
  auto find_col = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw ValidationError("CSV header lacks column '" + name + "'");
  };
  const std::size_t ycol = find_col(schema.outcome);
  const std::size_t tcol = find_col(schema.treatment);
  std::vector<std::size_t> xcols;
  for (const auto& c : schema.covariates) xcols.push_back(find_col(c));

  LoadReport report;
  std::vector<double> y;
  std::vector<int> t;
  std::vector<double> xflat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++report.rows_read;
    const auto cells = detail::split_line(line, schema.delimiter);
    if (cells.size() != header.size()) {
      throw ValidationError("CSV line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(header.size()));
    }
    bool missing = detail::is_missing(cells[ycol]) || detail::is_missing(cells[tcol]);
    for (auto c : xcols) missing = missing || detail::is_missing(cells[c]);
    if (missing) {
      ++report.dropped_missing;
      continue;
    }
    // Treatment label: explicit map first, then native {0,1}.
    std::optional<int> label;
    const std::string raw(cells[tcol]);
    if (auto it = schema.label_map.find(raw); it != schema.label_map.end()) {
      if (!it->second) {
        ++report.dropped_label;
        continue;
      }
      label = *it->second;
    } else if (auto v = detail::parse_double(cells[tcol]); v && (*v == 0.0 || *v == 1.0)) {
      label = static_cast<int>(*v);
    }
    if (!label || (*label != 0 && *label != 1)) {
      throw ValidationError("invalid treatment label '" + raw + "' on line " +
                            std::to_string(line_no));
    }
    auto parse_num = [&](std::size_t col) {
      auto v = detail::parse_double(cells[col]);
      if (!v || !std::isfinite(*v)) {
        throw ValidationError("non-numeric or non-finite value '" + std::string(cells[col]) +
                              "' on line " + std::to_string(line_no));
      }
      return *v;
    };
    y.push_back(parse_num(ycol));
    t.push_back(*label);
    for (auto c : xcols) xflat.push_back(parse_num(c));
  }
  if (y.empty()) throw ValidationError("zero usable rows");
  const auto n = static_cast<Eigen::Index>(y.size());
  const auto k = static_cast<Eigen::Index>(xcols.size());
  Matrix x = Eigen::Map<Matrix>(xflat.data(), n, k);
  return {ObservationalDataset(std::move(y), std::move(t), std::move(x), schema.covariates,
                               schema.roles),
          report};
}

inline LoadResult load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read file '" + path + "'");
  return parse_csv(in, schema);
}

/// Header `y,t,<covariate names>`; numbers in shortest round-trip form so
/// load_csv(save_csv(D)) reproduces D bit for bit.
inline void write_csv(std::ostream& out, const ObservationalDataset& d, char delim = ',') {
  out << "y" << delim << "t";
  for (const auto& name : d.covariate_names()) out << delim << name;
  out << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << detail::format_double(d.outcome(i)) << delim << d.treatment(i);
    for (double v : d.row(i)) out << delim << detail::format_double(v);
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const ObservationalDataset& d, char delim = ',') {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file '" + path + "'");
  write_csv(out, d, delim);
}

/// Schema matching what write_csv emits for `d`.
inline CsvSchema schema_for(const ObservationalDataset& d) {
  CsvSchema s;
  s.covariates = d.covariate_names();
  s.roles = d.covariate_roles();
  return s;
}

/// Applies key=value lines (outcome=, treatment=, covariates=a,b, roles=m,c,
/// delimiter=;) onto `schema`. Blank lines and lines starting with '#' are ignored.
inline void apply_schema_config(std::istream& in, CsvSchema& schema) {
  std::string line;
  while (std::getline(in, line)) {
    const auto s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line without '=': " + std::string(s));
    }
    const std::string key(detail::trim(s.substr(0, eq)));
    const std::string_view value = detail::trim(s.substr(eq + 1));
    if (key == "outcome") {
      schema.outcome = std::string(value);
    } else if (key == "treatment") {
      schema.treatment = std::string(value);
    } else if (key == "covariates") {
      schema.covariates.clear();
      for (auto c : detail::split_line(value, ',')) schema.covariates.emplace_back(c);
    } else if (key == "roles") {
      schema.roles.clear();
      for (auto c : detail::split_line(value, ',')) schema.roles.push_back(parse_role(c));
    } else if (key == "delimiter") {
      if (value.size() != 1) throw ValidationError("delimiter must be a single character");
      schema.delimiter = value.front();
    }
  }
}

}  // namespace otcf
