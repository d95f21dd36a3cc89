#pragma once

#include <cmath>
#include <random>

namespace oracle {

/// Straight-line Monte Carlo of the two-mediator Gaussian SEM, written
/// without the library. Returns OLS lines for
///   mm: y1* - y0* on x1 under do(T = 0)   (shared noise, transported mediator)
///   cp: E[y1* | x1(1)] - E[y0* | x1(0)]   (arm regressions compared at one x1)
struct SemLines {
  double mm_intercept, mm_slope;
  double cp_intercept, cp_slope;
  double ate;
};

struct SemSpec {
  double mu0[2], mu1[2], sd0[2], sd1[2], r0, r1;
  double alpha, b1, b2, bc, gamma;
};

inline SemLines sem_monte_carlo(const SemSpec& s, std::size_t draws, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n;
  // running sums for three simple regressions
  struct Ols {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
    void add(double x, double y) {
      sx += x; sy += y; sxx += x * x; sxy += x * y; m += 1;
    }
    double slope() const { return (sxy - sx * sy / m) / (sxx - sx * sx / m); }
    double intercept() const { return (sy - slope() * sx) / m; }
  } mm, arm0, arm1;
  double ate = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double u1 = n(eng), u2 = n(eng), uc = n(eng), uy = n(eng);
    const double c = uc;
    const double x10 = s.mu0[0] + s.sd0[0] * u1;
    const double x20 = s.mu0[1] + s.sd0[1] * (s.r0 * u1 + std::sqrt(1 - s.r0 * s.r0) * u2);
    const double x11 = s.mu1[0] + s.sd1[0] * u1;
    const double x21 = s.mu1[1] + s.sd1[1] * (s.r1 * u1 + std::sqrt(1 - s.r1 * s.r1) * u2);
    const double y0 = s.alpha + s.b1 * x10 + s.b2 * x20 + s.bc * c + uy;
    const double y1 = s.alpha + s.b1 * x11 + s.b2 * x21 + s.bc * c + s.gamma + uy;
    mm.add(x10, y1 - y0);
    arm0.add(x10, y0);
    arm1.add(x11, y1);
    ate += y1 - y0;
  }
  return {mm.intercept(), mm.slope(), arm1.intercept() - arm0.intercept(), arm1.slope() - arm0.slope(),
          ate / static_cast<double>(draws)};
}

inline SemSpec toy_spec(double r = 0.4) {
  return {{0, 0}, {2, 0}, {1, 1}, {1.2, 0.8}, r, r, 2, 1, -1, 1, 1};
}

}  // namespace oracle
