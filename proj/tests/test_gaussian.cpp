#include "oracles/sqrtm2.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace otcf;

namespace {

double rel_frob(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

Matrix correlated(std::size_t n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  const Eigen::MatrixXd l = cov.llt().matrixL();
  Matrix z = tu::random_normal(static_cast<Eigen::Index>(n), cov.rows(), eng);
  Matrix x = z * l.transpose();
  x.rowwise() += mean.transpose();
  return x;
}

ObservationalDataset stack(const Matrix& x0, const Matrix& x1) {
  const auto n0 = x0.rows(), n1 = x1.rows();
  Matrix x(n0 + n1, x0.cols());
  x << x0, x1;
  std::vector<int> t(static_cast<std::size_t>(n0 + n1), 0);
  std::fill(t.begin() + n0, t.end(), 1);
  return ObservationalDataset(std::vector<double>(t.size(), 0.0), t, x, {});
}

}  // namespace

TEST(Sqrtm, IdentityAndDiagonal) {
  EXPECT_TRUE(sqrtm_spd(Eigen::MatrixXd::Identity(3, 3)).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-14));
  Eigen::MatrixXd m = Eigen::Vector2d(4, 9).asDiagonal();
  const Eigen::MatrixXd r = sqrtm_spd(m);
  EXPECT_NEAR(r(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(r(1, 1), 3.0, 1e-14);
  EXPECT_NEAR(r(0, 1), 0.0, 1e-14);
}

TEST(Sqrtm, RandomReconstruction) {
  std::mt19937_64 eng(2024);
  const Matrix b = tu::random_normal(3, 3, eng);
  const Eigen::MatrixXd m = b.transpose() * b;
  const Eigen::MatrixXd r = sqrtm_spd(m);
  EXPECT_LT((r * r - m).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Sqrtm, MatchesClosedForm2x2) {
  std::mt19937_64 eng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Matrix2d m = tu::random_spd(2, eng);
    EXPECT_LT((sqrtm_spd(m) - Eigen::MatrixXd(oracle::sqrtm2(m))).norm(), 1e-10 * m.norm());
  }
}

TEST(Sqrtm, ReconstructionPropertyAcrossDims) {
  std::mt19937_64 eng(77);
  for (int rep = 0; rep < 1000; ++rep) {
    const int k = 1 + rep % 6;
    const Eigen::MatrixXd m = tu::random_spd(k, eng);
    const Eigen::MatrixXd r = sqrtm_spd(m);
    ASSERT_LT(rel_frob(r * r, m), 1e-9) << "k=" << k;
    ASSERT_LT((r - r.transpose()).norm(), 1e-12 * r.norm());
  }
}

TEST(Sqrtm, RejectsAsymmetric) {
  Eigen::MatrixXd m(2, 2);
  m << 1, 0.5, 0, 1;
  EXPECT_THROW(sqrtm_spd(m), ValidationError);
}

TEST(GaussianTransport, EqualCovariancesGiveTranslation) {
  std::mt19937_64 eng(1);
  Matrix x0 = tu::random_normal(300, 3, eng);
  Matrix x1 = x0;
  x1.rowwise() += Eigen::RowVector3d(1, -2, 0.5);
  const auto t = fit_gaussian_transport(stack(x0, x1));
  EXPECT_LT((t.matrix() - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  const Vector shift = t.mu1() - t.mu0();
  EXPECT_NEAR(shift[0], 1.0, 1e-8);
  EXPECT_NEAR(shift[1], -2.0, 1e-8);
  const Vector p = t.apply(Vector(Eigen::Vector3d(0.1, 0.2, 0.3)));
  EXPECT_NEAR(p[2], 0.8, 1e-8);
}

TEST(GaussianTransport, OneDimensionReducesToScalarMap) {
  std::mt19937_64 eng(2);
  const Matrix x0 = tu::random_normal(400, 1, eng, 0.5, 2.0);
  const Matrix x1 = tu::random_normal(300, 1, eng, -1.0, 0.7);
  const auto d = stack(x0, x1);
  const auto t = fit_gaussian_transport(d);
  const auto g = fit_gaussian_transport_1d(d, 0);
  EXPECT_NEAR(t.matrix()(0, 0), g.slope(), 1e-10);
  EXPECT_NEAR(t.apply(std::vector<double>{1.3})[0], g(1.3), 1e-10);
}

TEST(GaussianTransport, SemPopulationMatrix) {
  const auto p = sem::toy_params(0.4);
  const auto c0 = sem::mediator_covariance(p, 0);
  const auto c1 = sem::mediator_covariance(p, 1);
  Eigen::Matrix2d s0, s1;
  s0 << c0[0][0], c0[0][1], c0[1][0], c0[1][1];
  s1 << c1[0][0], c1[0][1], c1[1][0], c1[1][1];
  const Eigen::Matrix2d a_pop = oracle::gaussian_ot2(s0, s1);
  const auto sample = sem::simulate(p, 100000, 12345);
  const auto t = fit_gaussian_transport(sample.data);
  EXPECT_EQ(t.columns(), (std::vector<std::size_t>{0, 1}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(t.matrix()(i, j), a_pop(i, j), 0.02);
}

TEST(GaussianTransport, RejectsColliderColumns) {
  const auto sample = sem::simulate(sem::toy_params(), 200, 1);
  EXPECT_THROW(fit_gaussian_transport(sample.data, {0, 2}), ValidationError);
}

TEST(GaussianTransport, NeedsEnoughRows) {
  std::mt19937_64 eng(4);
  EXPECT_THROW(fit_gaussian_transport(stack(tu::random_normal(2, 2, eng), tu::random_normal(5, 2, eng))),
               ValidationError);
}

TEST(GaussianTransport, RidgeForNearSingularControl) {
  std::mt19937_64 eng(9);
  Matrix x0 = tu::random_normal(200, 2, eng);
  x0.col(1) = x0.col(0) * 2.0;
  x0.col(1).array() += 1e-9 * tu::random_normal(200, 1, eng).array();
  const Matrix x1 = tu::random_normal(200, 2, eng);
  const auto t = fit_gaussian_transport(stack(x0, x1));
  EXPECT_GT(t.ridge(), 0.0);
  EXPECT_THROW(fit_gaussian_transport(stack(Matrix::Zero(5, 2), x1)), NumericalError);
}

TEST(GaussianTransport, PushForwardMeanAndCovariance) {
  Eigen::Matrix3d c0, c1;
  c0 << 2, 0.3, 0.1, 0.3, 1, -0.2, 0.1, -0.2, 0.5;
  c1 << 1, -0.4, 0.2, -0.4, 1.5, 0.3, 0.2, 0.3, 0.8;
  const Matrix x0 = correlated(50000, Eigen::Vector3d(0, 1, 2), c0, 5);
  const Matrix x1 = correlated(50000, Eigen::Vector3d(1, 1, -1), c1, 6);
  const auto t = fit_gaussian_transport(stack(x0, x1));
  Matrix m(1, 3);
  m.row(0) = t.mu0().transpose();
  const Matrix img_mean = push_forward(t, m);
  EXPECT_LT((img_mean.row(0).transpose() - t.mu1()).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix img = push_forward(t, x0);
  EXPECT_LT(rel_frob(compute_moments(img).cov, compute_moments(x1).cov), 0.05);
  EXPECT_THROW(push_forward(t, Matrix::Zero(2, 2)), ValidationError);
}

TEST(GaussianTransport, FixedPointSymmetryAndInverseProperty) {
  std::mt19937_64 eng(31);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = 1 + rep % 5;
    GroupMoments m0{Vector::Zero(k), tu::random_spd(k, eng)};
    GroupMoments m1{Vector::Ones(k), tu::random_spd(k, eng)};
    if (detail::condition_number(m0.cov) > 1e6 || detail::condition_number(m1.cov) > 1e6) continue;
    const auto t = fit_gaussian_transport(m0, m1);
    const auto& a = t.matrix();
    ASSERT_LT((a - a.transpose()).norm(), 1e-12 * a.norm());
    ASSERT_LT(fixed_point_residual(a, m0.cov, m1.cov), 1e-8);
    const auto rev = fit_gaussian_transport(m1, m0);
    ASSERT_LT((rev.matrix() * a - Eigen::MatrixXd::Identity(k, k)).norm() / std::sqrt(double(k)), 1e-6);
    ASSERT_LT((t.apply(m0.mean) - m1.mean).norm(), 1e-12);
  }
}

TEST(GaussianTransport, FullRowPassesCollidersThrough) {
  const auto sample = sem::simulate(sem::toy_params(), 2000, 3);
  const auto t = fit_gaussian_transport(sample.data);
  const auto row = sample.data.row(0);
  const auto out = t.apply_full_row(row);
  EXPECT_EQ(out[2], row[2]);
  const auto mediated = t.apply(std::vector<double>{row[0], row[1]});
  EXPECT_EQ(out[0], mediated[0]);
}

TEST(GaussianTransport, JsonRoundTrip) {
  const auto sample = sem::simulate(sem::toy_params(), 2000, 3);
  const auto t = fit_gaussian_transport(sample.data);
  const auto back = GaussianTransport::from_json(nlohmann::json::parse(t.to_json().dump()));
  EXPECT_EQ(back.columns(), t.columns());
  const auto a = t.apply(std::vector<double>{0.3, -0.7});
  const auto b = back.apply(std::vector<double>{0.3, -0.7});
  EXPECT_EQ(a, b);
}
