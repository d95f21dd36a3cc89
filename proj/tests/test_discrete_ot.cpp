#include "oracles/lp.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace otcf;

namespace {

Matrix integer_costs(int m, int n, int levels, std::mt19937_64& eng) {
  Matrix c(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) c(i, j) = static_cast<double>(eng() % static_cast<unsigned>(levels));
  return c;
}

std::vector<double> random_weights(std::size_t n, std::mt19937_64& eng) {
  std::vector<double> w(n);
  for (auto& v : w) v = 1.0 + static_cast<double>(eng() % 4);
  return w;
}

void check_feasible(const Coupling& p) {
  EXPECT_LE(p.marginal_residual(), 1e-9);
  EXPECT_GE(p.plan.minCoeff(), 0.0);
}

}  // namespace

TEST(Cost, Basics) {
  Matrix p(1, 2);
  p << 0.5, -1.0;
  EXPECT_EQ(build_cost(p, p).values(0, 0), 0.0);
  Matrix a(1, 1), b(1, 1);
  a << 0.0;
  b << 3.0;
  EXPECT_EQ(build_cost(a, b).values(0, 0), 9.0);
  EXPECT_EQ(build_cost(a, b, CostKind::euclidean).values(0, 0), 3.0);
  EXPECT_NEAR(build_cost(a, b, CostKind::power, 3.0).values(0, 0), 27.0, 1e-12);
  EXPECT_THROW(build_cost(a, p), ValidationError);
  Matrix bad(1, 1);
  bad << std::numeric_limits<double>::infinity();
  EXPECT_THROW(build_cost(a, bad), ValidationError);
  EXPECT_THROW(make_cost(-1.0 * Matrix::Ones(2, 2)), ValidationError);
}

TEST(Cost, SymmetricForSharedPoints) {
  std::mt19937_64 eng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = tu::random_normal(7, 3, eng);
    const auto c = build_cost(x, x);
    EXPECT_TRUE(c.values.isApprox(c.values.transpose(), 0.0));
  }
}

TEST(Matching, IdentityFavoringMatrix) {
  const auto c = make_cost(Matrix::Ones(5, 5) - Matrix::Identity(5, 5));
  const auto m = optimal_matching(c);
  EXPECT_EQ(m.sigma, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(m.objective, 0.0);
}

TEST(Matching, OneDimensionIsRankMatching) {
  std::mt19937_64 eng(2);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 3 + rep;
    const Matrix x0 = tu::random_normal(n, 1, eng);
    const Matrix x1 = tu::random_normal(n, 1, eng, 1.0, 2.0);
    const auto m = optimal_matching(build_cost(x0, x1));
    std::vector<std::size_t> r0(n), r1(n);
    std::iota(r0.begin(), r0.end(), 0);
    std::iota(r1.begin(), r1.end(), 0);
    std::sort(r0.begin(), r0.end(), [&](auto a, auto b) { return x0(a, 0) < x0(b, 0); });
    std::sort(r1.begin(), r1.end(), [&](auto a, auto b) { return x1(a, 0) < x1(b, 0); });
    std::vector<std::size_t> expected(n);
    for (int k = 0; k < n; ++k) expected[r0[k]] = r1[k];
    EXPECT_EQ(m.sigma, expected);
  }
}

TEST(Matching, ExhaustiveOracleWithTies) {
  std::mt19937_64 eng(3);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 1 + rep % 6;
    const Matrix c = integer_costs(n, n, 1 + rep % 4, eng);
    const auto got = optimal_matching(make_cost(c));
    const auto want = oracle::brute_force_assignment(c);
    ASSERT_EQ(got.objective, want.objective);
    ASSERT_EQ(got.sigma, want.sigma) << "rep " << rep;
  }
}

TEST(Matching, ExhaustiveOracleContinuous) {
  std::mt19937_64 eng(4);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + rep % 5;
    const Matrix x0 = tu::random_normal(n, 2, eng), x1 = tu::random_normal(n, 2, eng);
    const auto c = build_cost(x0, x1);
    EXPECT_NEAR(optimal_matching(c).objective, oracle::brute_force_assignment(c.values).objective, 1e-9);
  }
}

TEST(Matching, ScalingInvariance) {
  std::mt19937_64 eng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + rep % 7;
    const Matrix c = integer_costs(n, n, 3, eng);
    const auto a = optimal_matching(make_cost(c));
    const auto b = optimal_matching(make_cost(7.5 * c));
    EXPECT_EQ(a.sigma, b.sigma);
  }
}

TEST(Matching, RejectsNonSquare) { EXPECT_THROW(optimal_matching(make_cost(Matrix::Ones(2, 3))), ValidationError); }

TEST(Coupling, UniqueZeroCostPermutation) {
  Matrix c = Matrix::Ones(4, 4);
  const std::vector<int> perm{2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) c(i, perm[i]) = 0.0;
  const auto p = optimal_coupling(make_cost(c));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(p.plan(i, j), j == perm[i] ? 1.0 : 0.0);
  EXPECT_EQ(p.objective, 0.0);
}

TEST(Coupling, ForcedColumn) {
  Matrix c(2, 1);
  c << 5.0, 0.25;
  const std::vector<double> a0{1, 1}, a1{2};
  const auto p = optimal_coupling(make_cost(c), a0, a1);
  EXPECT_EQ(p.plan(0, 0), 1.0);
  EXPECT_EQ(p.plan(1, 0), 1.0);
  const Matrix w = coupling_rows(p);
  EXPECT_EQ(w(0, 0), 1.0);
  EXPECT_EQ(w(1, 0), 1.0);
}

TEST(Coupling, DefaultMarginals) {
  std::mt19937_64 eng(6);
  const auto p = optimal_coupling(build_cost(tu::random_normal(3, 2, eng), tu::random_normal(5, 2, eng)));
  for (double v : p.a0) EXPECT_EQ(v, 1.0);
  for (double v : p.a1) EXPECT_DOUBLE_EQ(v, 0.6);
  check_feasible(p);
}

TEST(Coupling, MatchesLpOracle) {
  std::mt19937_64 eng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const int m = rep < 100 ? 4 : 1 + static_cast<int>(eng() % 6);
    const int n = rep < 100 ? 6 : 1 + static_cast<int>(eng() % 6);
    const Matrix c = rep % 3 == 0 ? integer_costs(m, n, 3, eng)
                                  : build_cost(tu::random_normal(m, 2, eng), tu::random_normal(n, 2, eng)).values;
    auto a0 = random_weights(m, eng);
    auto a1 = random_weights(n, eng);
    const double s0 = std::accumulate(a0.begin(), a0.end(), 0.0);
    const double s1 = std::accumulate(a1.begin(), a1.end(), 0.0);
    for (auto& v : a1) v *= s0 / s1;
    const auto p = optimal_coupling(make_cost(c), a0, a1);
    check_feasible(p);
    const auto lp = oracle::transport_lp(c, a0, a1);
    ASSERT_NEAR(p.objective, lp.objective, 1e-7 * std::max(1.0, std::abs(lp.objective))) << "rep " << rep;
    EXPECT_NEAR(p.objective, (p.plan.array() * c.array()).sum(), 1e-9 * std::max(1.0, p.objective));
  }
}

TEST(Coupling, DegenerateInstancesTerminate) {
  std::mt19937_64 eng(8);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 10 + rep;
    const auto p = optimal_coupling(make_cost(integer_costs(n, n, 2, eng)));
    check_feasible(p);
  }
}

TEST(Coupling, Validation) {
  const auto c = make_cost(Matrix::Ones(2, 2));
  const std::vector<double> a0{1, 1}, bad{1, 2}, zero{2, 0};
  EXPECT_THROW(optimal_coupling(c, a0, bad), ValidationError);
  EXPECT_THROW(optimal_coupling(c, zero, a0), ValidationError);
  EXPECT_THROW(check_instance_size(10000, 10000, false), ResourceGuardError);
  EXPECT_NO_THROW(check_instance_size(10000, 10000, true));
}

TEST(Coupling, RowsAreBarycentricWeights) {
  std::mt19937_64 eng(9);
  const Matrix x0 = tu::random_normal(6, 2, eng), x1 = tu::random_normal(9, 2, eng);
  const auto p = optimal_coupling(build_cost(x0, x1));
  const Matrix w = coupling_rows(p);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-9);
    EXPECT_GE(w.row(i).minCoeff(), 0.0);
    const Eigen::RowVectorXd bary = w.row(i) * x1;
    const auto lp = [&] {
      // hull membership: exists lambda >= 0, sum 1, lambda' x1 = bary
      Eigen::MatrixXd a(3, x1.rows());
      Eigen::VectorXd b(3);
      a.row(0).setOnes();
      b[0] = 1.0;
      for (int d = 0; d < 2; ++d) {
        const double sign = bary[d] < 0 ? -1.0 : 1.0;
        a.row(1 + d) = sign * x1.col(d).transpose();
        b[1 + d] = sign * bary[d];
      }
      return oracle::solve_lp(a, b, Eigen::VectorXd::Zero(x1.rows()));
    };
    EXPECT_NO_THROW(lp());
  }
}

TEST(Coupling, PermutationRowsAreOneHot) {
  std::mt19937_64 eng(10);
  const Matrix x0 = tu::random_normal(5, 1, eng), x1 = tu::random_normal(5, 1, eng);
  const Matrix w = coupling_rows(optimal_coupling(build_cost(x0, x1)));
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_EQ(w.row(i).maxCoeff(), 1.0);
    EXPECT_EQ(w.row(i).sum(), 1.0);
  }
}

TEST(Coupling, CsvExports) {
  Matrix c(2, 1);
  c << 1.0, 2.0;
  const std::vector<double> a0{1, 1}, a1{2};
  std::ostringstream out;
  write_coupling_csv(out, optimal_coupling(make_cost(c), a0, a1));
  EXPECT_EQ(out.str(), "i,j,mass\n0,0,1\n1,0,1\n");
  std::ostringstream m;
  const std::vector<std::size_t> ci{3, 5}, ti{1, 0};
  write_matching_csv(m, ci, ti);
  EXPECT_EQ(m.str(), "control_index,treated_index\n3,1\n5,0\n");
}
