#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clickdyne/linear_sde.hpp"

using namespace clickdyne;
using cplx_t = std::complex<double>;

namespace {

MatC random_stable(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatC a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = cplx_t(0.3 * g(rng), 0.3 * g(rng));
  }
  const double shift = max_real_eigenvalue(a);
  return a - (shift + 0.5) * MatC::Identity(n, n);
}

MatC random_psd(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatC b(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) b(i, j) = cplx_t(g(rng), g(rng));
  }
  return b * b.adjoint();
}

}  // namespace

TEST(LinearSde, ScalarOrnsteinUhlenbeck) {
  const double k = 1.7, n = 3.0, dt = 0.05;
  MatC a(1, 1), d(1, 1);
  a(0, 0) = -k;
  d(0, 0) = 2.0 * k * n;
  EXPECT_NEAR(stationary_covariance(a, d)(0, 0).real(), n, 1e-14);
  const auto step = discretize(a, d, dt);
  EXPECT_NEAR(step.transition(0, 0).real(), std::exp(-k * dt), 1e-15);
  EXPECT_NEAR(step.covariance(0, 0).real(), n * (1.0 - std::exp(-2.0 * k * dt)), 1e-14);
  EXPECT_NEAR(std::norm(step.noise_factor(0, 0)), step.covariance(0, 0).real(), 1e-15);
}

TEST(LinearSde, RotatingMode) {
  MatC a(1, 1), d(1, 1);
  a(0, 0) = cplx_t(-0.4, -2.0);
  d(0, 0) = 0.8;
  const auto step = discretize(a, d, 0.1);
  EXPECT_NEAR(std::abs(step.transition(0, 0) - std::exp(a(0, 0) * 0.1)), 0.0, 1e-15);
  EXPECT_NEAR(step.covariance(0, 0).real(), 1.0 - std::exp(-0.08), 1e-14);
}

TEST(LinearSde, LyapunovResidualAndStepConsistency) {
  std::mt19937_64 rng(2);
  for (Eigen::Index n = 2; n <= 4; ++n) {
    const MatC a = random_stable(rng, n);
    const MatC d = random_psd(rng, n);
    const MatC s = stationary_covariance(a, d);
    EXPECT_LT((a * s + s * a.adjoint() + d).norm(), 1e-11 * d.norm());
    EXPECT_LT((s - s.adjoint()).norm(), 1e-14 * s.norm());

    // The stationary state is invariant under one exact step.
    const auto step = discretize(a, d, 0.2);
    const MatC s1 = step.transition * s * step.transition.adjoint() + step.covariance;
    EXPECT_LT((s1 - s).norm(), 1e-11 * s.norm());
    EXPECT_LT((step.noise_factor * step.noise_factor.adjoint() - step.covariance).norm(), 1e-12 * s.norm());

    // Two half steps compose to one full step.
    const auto h = discretize(a, d, 0.1);
    const MatC f2 = h.transition * h.transition;
    const MatC q2 = h.transition * h.covariance * h.transition.adjoint() + h.covariance;
    EXPECT_LT((f2 - step.transition).norm(), 1e-13);
    EXPECT_LT((q2 - step.covariance).norm(), 1e-12 * step.covariance.norm());
  }
}

TEST(LinearSde, HermitianFactorClipsRoundOff) {
  MatC q(2, 2);
  q << 1.0, 1.0, 1.0, 1.0 - 1e-17;
  const MatC l = hermitian_factor(q);
  EXPECT_FALSE(l.hasNaN());
  EXPECT_LT((l * l.adjoint() - q).norm(), 1e-12);
}

TEST(LinearSde, UnstableDriftRejected) {
  MatC a(2, 2), d = MatC::Identity(2, 2);
  a << -1.0, 2.0, 2.0, -1.0;  // eigenvalues 1 and -3
  EXPECT_GT(max_real_eigenvalue(a), 0.0);
  for (int which = 0; which < 2; ++which) {
    try {
      if (which == 0) stationary_covariance(a, d);
      else discretize(a, d, 0.1);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::StabilityViolation);
    }
  }
}
