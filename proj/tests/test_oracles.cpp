// Sanity checks on the reference computations themselves.

#include "oracles.hpp"

#include <gtest/gtest.h>

TEST(ShearOracle, GridConverged) {
  const double a = oracle::shear_limit_1d(1.0, 1.0, 256).value;
  const double b = oracle::shear_limit_1d(1.0, 1.0, 512).value;
  EXPECT_NEAR(a, b, 1e-3 * b);
}

TEST(ShearOracle, BoundedByTheFlowAndActiveConstraint) {
  const auto r = oracle::shear_limit_1d(1.0, 1.0);
  EXPECT_GT(r.value, 0.1);
  EXPECT_LT(r.value, 1.0);
  EXPECT_GT(r.mu, 0.0);
  EXPECT_GE(r.feasible_scan_points, 1);
}

TEST(ShearOracle, LinearInAmplitudeAndMonotoneInZeta) {
  const double v1 = oracle::shear_limit_1d(1.0, 1.0).value;
  EXPECT_NEAR(oracle::shear_limit_1d(2.0, 1.0).value, 2.0 * v1, 1e-6 * v1);
  EXPECT_LT(oracle::shear_limit_1d(1.0, 0.5).value, v1);
  EXPECT_GT(oracle::shear_limit_1d(1.0, 2.0).value, v1);
}

TEST(ShearOracle, LargeZetaApproachesTheFlowMaximum) {
  // the constraint relaxes and w^2 concentrates near the maximum of sin
  EXPECT_GT(oracle::shear_limit_1d(1.0, 1e4).value, 0.95);
}
