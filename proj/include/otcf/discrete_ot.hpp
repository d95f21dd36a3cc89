#pragma once

#include "otcf/error.hpp"
#include "otcf/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace otcf {

enum class CostKind { squared_euclidean, euclidean, power, custom };

/// Nonnegative n0 x n1 cost matrix between control rows and treated rows.
struct CostMatrix {
  Matrix values;
  CostKind kind = CostKind::squared_euclidean;
  double exponent = 2.0;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  double operator()(std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
};

/// Entry (i, j) is ||x0_i - x1_j||^2 (default), ||.|| or ||.||^exponent.
inline CostMatrix build_cost(const Matrix& x0, const Matrix& x1,
                             CostKind kind = CostKind::squared_euclidean, double exponent = 2.0) {
  if (x0.cols() != x1.cols()) throw ValidationError("cost matrix: column counts differ");
  if (!x0.allFinite() || !x1.allFinite()) throw ValidationError("cost matrix: non-finite coordinates");
  if (kind == CostKind::power && !(exponent > 0.0)) throw ValidationError("cost exponent must be positive");
  if (kind == CostKind::custom) throw ValidationError("custom costs are built with make_cost");
  CostMatrix c;
  c.kind = kind;
  c.exponent = kind == CostKind::euclidean ? 1.0 : (kind == CostKind::squared_euclidean ? 2.0 : exponent);
  c.values.resize(x0.rows(), x1.rows());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const auto a = row_span(x0, i);
    for (Eigen::Index j = 0; j < x1.rows(); ++j) {
      const double sq = squared_distance(a, row_span(x1, j));
      switch (kind) {
        case CostKind::squared_euclidean: c.values(i, j) = sq; break;
        case CostKind::euclidean: c.values(i, j) = std::sqrt(sq); break;
        default: c.values(i, j) = std::pow(std::sqrt(sq), exponent); break;
      }
    }
  }
  return c;
}

inline CostMatrix make_cost(Matrix values) {
  if (!values.allFinite() || (values.size() > 0 && values.minCoeff() < 0.0)) {
    throw ValidationError("cost entries must be finite and nonnegative");
  }
  return {std::move(values), CostKind::custom, 1.0};
}

struct CouplingEntry {
  std::size_t i;
  std::size_t j;
  double mass;
};

/// Optimal plan P in U(a0, a1) with duals (u, v): c_ij - u_i - v_j >= 0,
/// with equality on the support of P.
struct Coupling {
  Matrix plan;
  std::vector<double> a0;
  std::vector<double> a1;
  double objective = 0.0;
  std::vector<double> u;
  std::vector<double> v;
  std::size_t pivots = 0;

  std::size_t rows() const { return a0.size(); }
  std::size_t cols() const { return a1.size(); }

  std::vector<CouplingEntry> support(double tol = 0.0) const {
    std::vector<CouplingEntry> out;
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
      for (Eigen::Index j = 0; j < plan.cols(); ++j)
        if (plan(i, j) > tol) out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), plan(i, j)});
    return out;
  }

  /// max over rows and columns of |marginal - target|.
  double marginal_residual() const {
    double r = 0.0;
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
      r = std::max(r, std::abs(plan.row(i).sum() - a0[static_cast<std::size_t>(i)]));
    for (Eigen::Index j = 0; j < plan.cols(); ++j)
      r = std::max(r, std::abs(plan.col(j).sum() - a1[static_cast<std::size_t>(j)]));
    return r;
  }
};

/// Bijection control i -> treated sigma[i].
struct Matching {
  std::vector<std::size_t> sigma;
  double objective = 0.0;
};

inline constexpr double kMaxCouplingCells = 5e7;

inline void check_instance_size(std::size_t n0, std::size_t n1, bool force) {
  if (!force && static_cast<double>(n0) * static_cast<double>(n1) > kMaxCouplingCells) {
    throw ResourceGuardError("coupling instance has " + std::to_string(n0) + " x " +
                             std::to_string(n1) +
                             " cells, above the 5e7 guard; subsample or pass --force");
  }
}

namespace detail {

/// Transportation simplex on the balanced polytope U(a0, a1).
///
/// Starts from the northwest-corner basis and pivots with MODI reduced costs
/// under block pricing. Degeneracy is removed by the classical symbolic
/// perturbation: supplies a0_i + eps, last demand a1_{n-1} + n0 * eps. Each
/// basic flow is carried as (value, eps coefficient) and compared
/// lexicographically, so every basis is nondegenerate and the objective
/// strictly decreases; cycling is impossible. Flows and potentials are
/// recomputed from the marginals after every pivot, so rounding never
/// accumulates, and the reported plan is the eps -> 0 limit of the final
/// basis.
class TransportationSimplex {
 public:
  TransportationSimplex(const Matrix& cost, std::span<const double> a0, std::span<const double> a1)
      : m_(static_cast<int>(a0.size())),
        n_(static_cast<int>(a1.size())),
        cost_(cost),
        a0_(a0.begin(), a0.end()),
        a1_(a1.begin(), a1.end()) {
    const double total = std::accumulate(a0_.begin(), a0_.end(), 0.0);
    const double maxc = cost.size() > 0 ? cost.maxCoeff() : 0.0;
    flow_tol_ = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, total);
    cost_tol_ = 1e-11 * std::max(maxc, std::numeric_limits<double>::min());
    adj_.resize(static_cast<std::size_t>(m_ + n_));
  }

  void solve() {
    northwest_corner();
    rebuild();
    const std::size_t cells = static_cast<std::size_t>(m_) * static_cast<std::size_t>(n_);
    block_ = std::max<std::size_t>(std::min<std::size_t>(cells, 32),
                                   static_cast<std::size_t>(std::sqrt(static_cast<double>(cells))));
    const std::size_t max_pivots = 200 * static_cast<std::size_t>(m_ + n_) * static_cast<std::size_t>(m_ + n_) + 1000;
    for (;;) {
      const std::ptrdiff_t entering = price();
      if (entering < 0) break;
      pivot(static_cast<int>(entering / n_), static_cast<int>(entering % n_));
      if (++pivots_ > max_pivots) throw NumericalError("transportation simplex exceeded its pivot budget");
    }
  }

  Coupling result() const {
    Coupling out;
    out.plan = Matrix::Zero(m_, n_);
    out.a0 = a0_;
    out.a1 = a1_;
    for (const auto& c : basis_) {
      double f = c.value;
      if (f < 0.0) {
        if (f < -1e-9) throw NumericalError("transportation simplex produced a negative flow");
        f = 0.0;
      }
      out.plan(c.i, c.j) = f;
      out.objective += f * cost_(c.i, c.j);
    }
    out.u.assign(pot_.begin(), pot_.begin() + m_);
    out.v.assign(pot_.begin() + m_, pot_.end());
    out.pivots = pivots_;
    return out;
  }

 private:
  struct Cell {
    int i;
    int j;
    double value;
    std::int64_t eps;
  };

  struct Lex {
    double value;
    std::int64_t eps;
  };

  bool lex_less(const Lex& a, const Lex& b) const {
    if (std::abs(a.value - b.value) > flow_tol_) return a.value < b.value;
    return a.eps < b.eps;
  }

  Lex supply(int i) const { return {a0_[static_cast<std::size_t>(i)], 1}; }
  Lex demand(int j) const { return {a1_[static_cast<std::size_t>(j)], j == n_ - 1 ? m_ : 0}; }

  void add_cell(int i, int j, Lex f) {
    const int id = static_cast<int>(basis_.size());
    basis_.push_back({i, j, f.value, f.eps});
    adj_[static_cast<std::size_t>(i)].push_back(id);
    adj_[static_cast<std::size_t>(m_ + j)].push_back(id);
  }

  void northwest_corner() {
    basis_.reserve(static_cast<std::size_t>(m_ + n_ - 1));
    int i = 0;
    int j = 0;
    Lex s = supply(0);
    Lex d = demand(0);
    for (;;) {
      if (i == m_ - 1 && j == n_ - 1) {
        add_cell(i, j, s);
        break;
      }
      const bool take_row = (j == n_ - 1) || (i < m_ - 1 && lex_less(s, d));
      if (take_row) {
        add_cell(i, j, s);
        d = {d.value - s.value, d.eps - s.eps};
        s = supply(++i);
      } else {
        add_cell(i, j, d);
        s = {s.value - d.value, s.eps - d.eps};
        d = demand(++j);
      }
    }
  }

  /// BFS from row 0: parents, depths, potentials, then flows by leaf peeling.
  void rebuild() {
    const auto nodes = static_cast<std::size_t>(m_ + n_);
    parent_node_.assign(nodes, -1);
    parent_cell_.assign(nodes, -1);
    depth_.assign(nodes, -1);
    pot_.assign(nodes, 0.0);
    order_.clear();
    order_.push_back(0);
    depth_[0] = 0;
    for (std::size_t head = 0; head < order_.size(); ++head) {
      const int x = order_[head];
      for (int id : adj_[static_cast<std::size_t>(x)]) {
        const Cell& c = basis_[static_cast<std::size_t>(id)];
        const int y = (x == c.i) ? m_ + c.j : c.i;
        if (depth_[static_cast<std::size_t>(y)] >= 0) continue;
        depth_[static_cast<std::size_t>(y)] = depth_[static_cast<std::size_t>(x)] + 1;
        parent_node_[static_cast<std::size_t>(y)] = x;
        parent_cell_[static_cast<std::size_t>(y)] = id;
        // u_i + v_j = c_ij on basic cells.
        pot_[static_cast<std::size_t>(y)] = cost_(c.i, c.j) - pot_[static_cast<std::size_t>(x)];
        order_.push_back(y);
      }
    }
    if (order_.size() != nodes) throw NumericalError("transportation basis is not a spanning tree");

    residual_.resize(nodes);
    for (int i = 0; i < m_; ++i) residual_[static_cast<std::size_t>(i)] = supply(i);
    for (int j = 0; j < n_; ++j) residual_[static_cast<std::size_t>(m_ + j)] = demand(j);
    for (std::size_t k = order_.size(); k-- > 1;) {
      const int x = order_[k];
      const Lex f = residual_[static_cast<std::size_t>(x)];
      Cell& c = basis_[static_cast<std::size_t>(parent_cell_[static_cast<std::size_t>(x)])];
      c.value = f.value;
      c.eps = f.eps;
      Lex& p = residual_[static_cast<std::size_t>(parent_node_[static_cast<std::size_t>(x)])];
      p.value -= f.value;
      p.eps -= f.eps;
    }
  }

  /// Block search: the most negative reduced cost within the first block
  /// (scanning cyclically from where the last search stopped) that has one.
  std::ptrdiff_t price() {
    const std::size_t cells = static_cast<std::size_t>(m_) * static_cast<std::size_t>(n_);
    const double* c = cost_.data();
    std::size_t idx = next_;
    int i = static_cast<int>(idx / static_cast<std::size_t>(n_));
    int j = static_cast<int>(idx % static_cast<std::size_t>(n_));
    double best = -cost_tol_;
    std::ptrdiff_t best_idx = -1;
    std::size_t in_block = 0;
    for (std::size_t scanned = 0; scanned < cells; ++scanned) {
      const double rc = c[idx] - pot_[static_cast<std::size_t>(i)] - pot_[static_cast<std::size_t>(m_ + j)];
      if (rc < best) {
        best = rc;
        best_idx = static_cast<std::ptrdiff_t>(idx);
      }
      ++idx;
      if (++j == n_) {
        j = 0;
        if (++i == m_) {
          i = 0;
          idx = 0;
        }
      }
      if (++in_block == block_) {
        if (best_idx >= 0) break;
        in_block = 0;
      }
    }
    next_ = idx;
    return best_idx;
  }

  void pivot(int ei, int ej) {
    // Tree path from column node (m + ej) to row node ei; its cells alternate -, +, -, ...
    int x = m_ + ej;
    int y = ei;
    std::vector<int>& from_col = path_a_;
    std::vector<int>& from_row = path_b_;
    from_col.clear();
    from_row.clear();
    while (depth_[static_cast<std::size_t>(x)] > depth_[static_cast<std::size_t>(y)]) {
      from_col.push_back(parent_cell_[static_cast<std::size_t>(x)]);
      x = parent_node_[static_cast<std::size_t>(x)];
    }
    while (depth_[static_cast<std::size_t>(y)] > depth_[static_cast<std::size_t>(x)]) {
      from_row.push_back(parent_cell_[static_cast<std::size_t>(y)]);
      y = parent_node_[static_cast<std::size_t>(y)];
    }
    while (x != y) {
      from_col.push_back(parent_cell_[static_cast<std::size_t>(x)]);
      x = parent_node_[static_cast<std::size_t>(x)];
      from_row.push_back(parent_cell_[static_cast<std::size_t>(y)]);
      y = parent_node_[static_cast<std::size_t>(y)];
    }
    from_col.insert(from_col.end(), from_row.rbegin(), from_row.rend());

    int leaving = -1;
    Lex theta{0.0, 0};
    for (std::size_t k = 0; k < from_col.size(); k += 2) {
      const Cell& c = basis_[static_cast<std::size_t>(from_col[k])];
      const Lex f{c.value, c.eps};
      if (leaving < 0 || lex_less(f, theta)) {
        theta = f;
        leaving = from_col[k];
      }
    }

    Cell& out = basis_[static_cast<std::size_t>(leaving)];
    auto drop = [&](int node) {
      auto& a = adj_[static_cast<std::size_t>(node)];
      a.erase(std::find(a.begin(), a.end(), leaving));
    };
    drop(out.i);
    drop(m_ + out.j);
    out = {ei, ej, theta.value, theta.eps};
    adj_[static_cast<std::size_t>(ei)].push_back(leaving);
    adj_[static_cast<std::size_t>(m_ + ej)].push_back(leaving);
    rebuild();
  }

  int m_;
  int n_;
  const Matrix& cost_;
  std::vector<double> a0_;
  std::vector<double> a1_;
  double flow_tol_ = 0.0;
  double cost_tol_ = 0.0;
  std::vector<Cell> basis_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> parent_node_;
  std::vector<int> parent_cell_;
  std::vector<int> depth_;
  std::vector<int> order_;
  std::vector<double> pot_;
  std::vector<Lex> residual_;
  std::vector<int> path_a_;
  std::vector<int> path_b_;
  std::size_t block_ = 1;
  std::size_t next_ = 0;
  std::size_t pivots_ = 0;
};

}  // namespace detail

/// Solves min <P, C> over U(a0, a1).
inline Coupling optimal_coupling(const CostMatrix& c, std::span<const double> a0,
                                 std::span<const double> a1) {
  if (a0.size() != c.rows() || a1.size() != c.cols()) {
    throw ValidationError("marginal lengths do not match the cost matrix");
  }
  if (a0.empty() || a1.empty()) throw ValidationError("coupling needs nonempty marginals");
  for (double w : a0)
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("marginal weights must be positive");
  for (double w : a1)
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("marginal weights must be positive");
  const double s0 = std::accumulate(a0.begin(), a0.end(), 0.0);
  const double s1 = std::accumulate(a1.begin(), a1.end(), 0.0);
  if (std::abs(s0 - s1) > 1e-9 * std::max(1.0, s0)) {
    throw ValidationError("unbalanced marginals");
  }
  detail::TransportationSimplex solver(c.values, a0, a1);
  solver.solve();
  return solver.result();
}

/// Default marginals: unit mass per control row, n0 / n1 per treated row.
inline Coupling optimal_coupling(const CostMatrix& c) {
  const std::vector<double> a0(c.rows(), 1.0);
  const std::vector<double> a1(c.cols(), static_cast<double>(c.rows()) / static_cast<double>(c.cols()));
  return optimal_coupling(c, a0, a1);
}

namespace detail {

/// Among perfect matchings of `tight` (row -> sorted admissible columns),
/// rewrites `match` into the lexicographically smallest one. Row i is fixed
/// to the smallest column reachable by an alternating cycle through unfixed
/// rows.
inline void lexicographic_refine(const std::vector<std::vector<std::size_t>>& tight,
                                 std::vector<std::size_t>& match) {
  const std::size_t n = match.size();
  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[match[i]] = i;
  std::vector<std::ptrdiff_t> came_from(n);  // column -> previous column on the path
  std::vector<std::size_t> queue;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : tight[i]) {
      if (j >= match[i]) break;
      if (owner[j] < i) continue;
      // Row owner[j] must move: find an alternating path from it to column match[i]
      // using only unfixed rows other than i.
      const std::size_t target = match[i];
      std::fill(came_from.begin(), came_from.end(), -2);
      queue.clear();
      came_from[j] = -1;
      queue.push_back(j);
      bool found = false;
      for (std::size_t h = 0; h < queue.size() && !found; ++h) {
        const std::size_t col = queue[h];
        const std::size_t r = owner[col];
        for (std::size_t next : tight[r]) {
          if (came_from[next] != -2) continue;
          if (next != target && owner[next] <= i) continue;
          came_from[next] = static_cast<std::ptrdiff_t>(col);
          if (next == target) {
            found = true;
            break;
          }
          queue.push_back(next);
        }
      }
      if (!found) continue;
      // Shift along the path: owner of each column on it takes the next column.
      std::size_t col = target;
      while (came_from[col] >= 0) {
        const auto prev = static_cast<std::size_t>(came_from[col]);
        const std::size_t r = owner[prev];
        match[r] = col;
        owner[col] = r;
        col = prev;
      }
      match[i] = j;
      owner[j] = i;
      break;
    }
  }
}

}  // namespace detail

/// Optimal assignment on a square cost matrix. Among cost ties the
/// lexicographically smallest permutation is returned.
inline Matching optimal_matching(const CostMatrix& c) {
  if (c.rows() != c.cols()) throw ValidationError("optimal matching needs a square cost matrix");
  const std::size_t n = c.rows();
  if (n == 0) throw ValidationError("optimal matching needs a nonempty cost matrix");
  const std::vector<double> ones(n, 1.0);
  const Coupling p = optimal_coupling(c, ones, ones);

  // Unit marginals make every basic solution integral.
  std::vector<std::size_t> match(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (p.plan(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.5) {
        match[i] = j;
        break;
      }
    }
    if (match[i] == n) throw NumericalError("assignment basis is not integral");
  }

  // Optimal permutations are exactly the perfect matchings on zero reduced cost cells.
  const double maxc = c.values.maxCoeff();
  const double tol = 1e-9 * std::max(maxc, std::numeric_limits<double>::min());
  std::vector<std::vector<std::size_t>> tight(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (c(i, j) - p.u[i] - p.v[j] <= tol || j == match[i]) tight[i].push_back(j);
  detail::lexicographic_refine(tight, match);

  Matching m;
  m.sigma = std::move(match);
  for (std::size_t i = 0; i < n; ++i) m.objective += c(i, m.sigma[i]);
  return m;
}

/// Row i of the plan divided by a0[i]: counterfactual weights of control
/// row i over the treated rows. Each row sums to one.
inline Matrix coupling_rows(const Coupling& p) {
  Matrix w = p.plan;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double a = p.a0[static_cast<std::size_t>(i)];
    if (!(a > 0.0)) throw ValidationError("coupling row with zero mass");
    w.row(i) /= a;
  }
  return w;
}

inline void write_coupling_csv(std::ostream& out, const Coupling& p) {
  out << "i,j,mass\n";
  char buf[64];
  for (const auto& e : p.support()) {
    const auto r = std::to_chars(buf, buf + sizeof(buf), e.mass);
    out << e.i << ',' << e.j << ',' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\n';
  }
}

inline void write_matching_csv(std::ostream& out, std::span<const std::size_t> control,
                               std::span<const std::size_t> treated) {
  out << "control_index,treated_index\n";
  for (std::size_t k = 0; k < control.size(); ++k) out << control[k] << ',' << treated[k] << '\n';
}

}  // namespace otcf
