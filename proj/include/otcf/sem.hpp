#pragma once

#include "otcf/dataset.hpp"
#include "otcf/error.hpp"
#include "otcf/parallel.hpp"
#include "otcf/random.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace otcf::sem {

/// Gaussian structural equation model with two correlated mediators, one
/// collider and a linear outcome:
///
///   T   = 1(U_t < threshold)
///   X^m = mu_T + L_T U_m,   L_T the lower Cholesky factor of Sigma_T
///   X^c = mu_c + sigma_c U_c
///   Y   = alpha + beta_m . X^m + beta_c X^c + gamma T + U_y
struct SemParams {
  std::array<double, 2> mu0{0.0, 0.0};
  std::array<double, 2> mu1{0.0, 0.0};
  std::array<double, 2> sd0{1.0, 1.0};
  std::array<double, 2> sd1{1.0, 1.0};
  double r0 = 0.0;
  double r1 = 0.0;
  double collider_mean = 0.0;
  double collider_sd = 1.0;
  double alpha = 0.0;
  std::array<double, 2> beta_m{1.0, 1.0};
  double beta_c = 1.0;
  double gamma = 0.0;
  double threshold = 0.0;

  void validate() const {
    for (double s : {sd0[0], sd0[1], sd1[0], sd1[1], collider_sd})
      if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("SEM standard deviations must be positive");
    if (!(std::abs(r0) < 1.0) || !(std::abs(r1) < 1.0)) throw ValidationError("SEM correlations must lie in (-1, 1)");
    if (!std::isfinite(threshold)) throw ValidationError("SEM threshold must be finite");
  }

  nlohmann::json to_json() const {
    return {{"mu0", mu0}, {"mu1", mu1}, {"sd0", sd0}, {"sd1", sd1}, {"r0", r0}, {"r1", r1},
            {"collider_mean", collider_mean}, {"collider_sd", collider_sd}, {"alpha", alpha},
            {"beta_m", beta_m}, {"beta_c", beta_c}, {"gamma", gamma}, {"threshold", threshold}};
  }

  static SemParams from_json(const nlohmann::json& j) {
    SemParams p;
    p.mu0 = j.at("mu0").get<std::array<double, 2>>();
    p.mu1 = j.at("mu1").get<std::array<double, 2>>();
    p.sd0 = j.at("sd0").get<std::array<double, 2>>();
    p.sd1 = j.at("sd1").get<std::array<double, 2>>();
    p.r0 = j.at("r0").get<double>();
    p.r1 = j.at("r1").get<double>();
    p.collider_mean = j.at("collider_mean").get<double>();
    p.collider_sd = j.at("collider_sd").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.beta_m = j.at("beta_m").get<std::array<double, 2>>();
    p.beta_c = j.at("beta_c").get<double>();
    p.gamma = j.at("gamma").get<double>();
    p.threshold = j.value("threshold", 0.0);
    p.validate();
    return p;
  }
};

/// Instance used for the toy-model figures: treated first mediator
/// 2 + 1.2 e1, treated second mediator scaled by 0.8, Y = 2 + T + X1 - X2 + Xc + e.
inline SemParams toy_params(double r = 0.4) {
  SemParams p;
  p.mu0 = {0.0, 0.0};
  p.mu1 = {2.0, 0.0};
  p.sd0 = {1.0, 1.0};
  p.sd1 = {1.2, 0.8};
  p.r0 = r;
  p.r1 = r;
  p.collider_mean = 0.0;
  p.collider_sd = 1.0;
  p.alpha = 2.0;
  p.beta_m = {1.0, -1.0};
  p.beta_c = 1.0;
  p.gamma = 1.0;
  p.threshold = 0.0;
  p.validate();
  return p;
}

/// Observed data plus both potential outcomes (oracle use only).
struct SemSample {
  ObservationalDataset data;
  std::vector<double> y0;  // Y under do(T = 0)
  std::vector<double> y1;  // Y under do(T = 1)
};

namespace detail {

struct MediatorDraw {
  double x1;
  double x2;
};

inline MediatorDraw mediators(const SemParams& p, int t, double u1, double u2) {
  const auto& mu = t ? p.mu1 : p.mu0;
  const auto& sd = t ? p.sd1 : p.sd0;
  const double r = t ? p.r1 : p.r0;
  return {mu[0] + sd[0] * u1, mu[1] + sd[1] * (r * u1 + std::sqrt(1.0 - r * r) * u2)};
}

inline double outcome(const SemParams& p, int t, MediatorDraw m, double xc, double uy) {
  return p.alpha + p.beta_m[0] * m.x1 + p.beta_m[1] * m.x2 + p.beta_c * xc + p.gamma * t + uy;
}

}  // namespace detail

/// Rows per random substream; block b draws from substream (seed, b).
inline constexpr std::size_t kSimulationBlock = 4096;

/// Draws n rows. Both potential outcomes of a row share its noises
/// (U_m, U_c, U_y): under do(T = 1) the same U_m is pushed through mu_1, L_1.
/// Covariates are (x1m, x2m) mediators and xc collider.
inline SemSample simulate(const SemParams& p, std::size_t n, std::uint64_t seed, unsigned jobs = 1) {
  p.validate();
  if (n < 1) throw ValidationError("simulate needs n >= 1");
  std::vector<double> y(n), y0(n), y1(n);
  std::vector<int> t(n);
  Matrix x(static_cast<Eigen::Index>(n), 3);
  const std::size_t blocks = (n + kSimulationBlock - 1) / kSimulationBlock;
  parallel_for(blocks, jobs, [&](std::size_t b) {
    Engine eng = make_engine(seed, kStreamSimulate, b);
    std::normal_distribution<double> normal;
    const std::size_t end = std::min(n, (b + 1) * kSimulationBlock);
    for (std::size_t i = b * kSimulationBlock; i < end; ++i) {
      const double ut = normal(eng);
      const double u1 = normal(eng);
      const double u2 = normal(eng);
      const double uc = normal(eng);
      const double uy = normal(eng);
      const int ti = ut < p.threshold ? 1 : 0;
      const double xc = p.collider_mean + p.collider_sd * uc;
      const auto m0 = detail::mediators(p, 0, u1, u2);
      const auto m1 = detail::mediators(p, 1, u1, u2);
      y0[i] = detail::outcome(p, 0, m0, xc, uy);
      y1[i] = detail::outcome(p, 1, m1, xc, uy);
      const auto& m = ti ? m1 : m0;
      t[i] = ti;
      y[i] = ti ? y1[i] : y0[i];
      const auto r = static_cast<Eigen::Index>(i);
      x(r, 0) = m.x1;
      x(r, 1) = m.x2;
      x(r, 2) = xc;
    }
  });
  ObservationalDataset d(std::move(y), std::move(t), std::move(x), {"x1m", "x2m", "xc"},
                         {CovariateRole::mediator, CovariateRole::mediator, CovariateRole::collider});
  return {std::move(d), std::move(y0), std::move(y1)};
}

/// Mediator covariance Sigma_t = L_t L_t^T.
inline std::array<std::array<double, 2>, 2> mediator_covariance(const SemParams& p, int t) {
  const auto& sd = t ? p.sd1 : p.sd0;
  const double r = t ? p.r1 : p.r0;
  return {{{sd[0] * sd[0], r * sd[0] * sd[1]}, {r * sd[0] * sd[1], sd[1] * sd[1]}}};
}

/// E[Y | X1^m = x1] under do(T = t): the second mediator is replaced by its
/// conditional mean given the first, the collider by its mean.
inline double arm_conditional_mean(const SemParams& p, int t, double x1) {
  const auto& mu = t ? p.mu1 : p.mu0;
  const auto& sd = t ? p.sd1 : p.sd0;
  const double r = t ? p.r1 : p.r0;
  const double x2 = mu[1] + sd[1] * r * (x1 - mu[0]) / sd[0];
  return p.alpha + p.beta_m[0] * x1 + p.beta_m[1] * x2 + p.beta_c * p.collider_mean + p.gamma * t;
}

/// x1 -> mu11 + (sigma11 / sigma01)(x1 - mu01), the counterfactual first mediator.
inline double transport_x1(const SemParams& p, double x1) {
  return p.mu1[0] + p.sd1[0] / p.sd0[0] * (x1 - p.mu0[0]);
}

/// E[Y_{T<-1} - Y_{T<-0}] including the mediator mean shifts.
inline double analytic_ate(const SemParams& p) {
  return p.gamma + p.beta_m[0] * (p.mu1[0] - p.mu0[0]) + p.beta_m[1] * (p.mu1[1] - p.mu0[1]);
}

/// The direct effect gamma alone.
inline double gamma_direct(const SemParams& p) { return p.gamma; }

/// Ceteris paribus: both arms evaluated at the same x1.
inline double analytic_cate_cp(const SemParams& p, double x1) {
  return arm_conditional_mean(p, 1, x1) - arm_conditional_mean(p, 0, x1);
}

/// Mutatis mutandis: the treated arm evaluated at the transported x1.
inline double analytic_cate_mm(const SemParams& p, double x1) {
  return arm_conditional_mean(p, 1, transport_x1(p, x1)) - arm_conditional_mean(p, 0, x1);
}

/// Both CATE curves are affine in x1; intercepts and slopes, and the gap
/// CATE_mm - CATE_cp = gap_slope * x1 + gap_intercept.
struct CateLines {
  double cp_intercept;
  double cp_slope;
  double mm_intercept;
  double mm_slope;
  double gap_intercept;
  double gap_slope;
};

inline CateLines cate_lines(const SemParams& p) {
  // Slope of E[Y | X1 = x1] within each arm.
  auto arm_slope = [&](int t) {
    const auto& sd = t ? p.sd1 : p.sd0;
    const double r = t ? p.r1 : p.r0;
    return p.beta_m[0] + p.beta_m[1] * sd[1] * r / sd[0];
  };
  const double s = p.sd1[0] / p.sd0[0];
  CateLines l{};
  l.cp_slope = arm_slope(1) - arm_slope(0);
  l.cp_intercept = analytic_cate_cp(p, 0.0);
  l.mm_slope = arm_slope(1) * s - arm_slope(0);
  l.mm_intercept = analytic_cate_mm(p, 0.0);
  l.gap_slope = arm_slope(1) * (s - 1.0);
  l.gap_intercept = l.mm_intercept - l.cp_intercept;
  return l;
}

}  // namespace otcf::sem
