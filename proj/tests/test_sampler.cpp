#include <gtest/gtest.h>

#include "dkit/sampler.hpp"
#include "fixtures.hpp"

using namespace dkit;

namespace {

// Independent oracle: the schedule formula evaluated in long double.
long double edm_ref(int i, int n, long double smin, long double smax, long double rho) {
  const long double a = std::pow(smax, 1.0L / rho), b = std::pow(smin, 1.0L / rho);
  return std::pow(a + (static_cast<long double>(i) / (n - 1)) * (b - a), rho);
}

}  // namespace

TEST(EdmSchedule, TenStepValues) {
  auto s = edm_schedule(0.002, 80, 7, 10);
  ASSERT_EQ(s.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(s[i], static_cast<double>(edm_ref(i, 10, 0.002L, 80.0L, 7.0L)), 1e-12);
  // published list, printed values are truncations of the exact levels
  const double listed[] = {80.0, 42.415, 21.108, 9.723, 4.06, 1.501, 0.469, 0.116, 0.020, 0.002};
  const int decimals[] = {1, 3, 3, 3, 2, 3, 3, 3, 3, 3};
  for (int i = 0; i < 10; ++i) {
    EXPECT_GE(s[i], listed[i] - 1e-12) << i;
    EXPECT_LT(s[i], listed[i] + std::pow(10.0, -decimals[i])) << i;
  }
}

TEST(EdmSchedule, EndpointsAndMonotone) {
  auto two = edm_schedule(0.002, 80, 7, 2);
  EXPECT_EQ(two.values(), (std::vector<double>{80.0, 0.002}));
  auto s = edm_schedule(0.002, 80, 7, 100);
  EXPECT_EQ(s[0], 80.0);
  EXPECT_EQ(s[99], 0.002);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i], s[i - 1]);
  EXPECT_THROW(edm_schedule(0.0, 80, 7, 10), InvalidArgument);
  EXPECT_THROW(edm_schedule(1.0, 0.5, 7, 10), InvalidArgument);
  EXPECT_THROW(edm_schedule(0.002, 80, 7, 1), InvalidArgument);
  EXPECT_THROW(edm_schedule(0.002, 80, -1, 10), InvalidArgument);
}

TEST(OdeSample, EulerRecursionByHand) {
  // D(x; t) = 0.5 x in d = 1 so each step multiplies by r + (1 - r)/2.
  FunctionDenoiser half(1, [](const Vector& x, double) { return Vector(0.5 * x); });
  SigmaSchedule sched(1.0, 4.0, 1.0, {4.0, 2.0, 1.0});
  Vector x0(1);
  x0 << 8.0;
  auto t = ode_sample(half, sched, x0);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t.sigmas, (std::vector<double>{4.0, 2.0, 1.0, 0.0}));
  EXPECT_DOUBLE_EQ(t.states[1](0), 8.0 * 0.75);
  EXPECT_DOUBLE_EQ(t.states[2](0), 6.0 * 0.75);
  EXPECT_DOUBLE_EQ(t.states[3](0), 4.5 * 0.5);
}

TEST(OdeSample, ConstantMapEndsAtTarget) {
  Vector y(3);
  y << 0.2, -0.5, 0.9;
  auto c = constant_denoiser(y);
  auto sched = edm_schedule(0.002, 80, 7, 10);
  Rng rng(1);
  Vector xT = normal_vector(rng, 3, 80.0);
  auto t = ode_sample(*c, sched, xT);
  EXPECT_EQ(t.states.front(), xT);
  EXPECT_EQ(t.final_state(), y);
  const double r = sched[1] / sched[0];
  EXPECT_LT((t.states[1] - (r * xT + (1 - r) * y)).norm(), 1e-12);
}

TEST(OdeSample, OneStepScheduleReturnsDenoiserOutput) {
  auto s = fixtures::synthetic_stats(Vector::LinSpaced(4, 0.1, 1.0), 2);
  GaussianDenoiser D(s);
  SigmaSchedule one(80.0, 80.0, 7.0, {80.0});
  Rng rng(2);
  Vector xT = normal_vector(rng, 4, 80.0);
  auto t = ode_sample(D, one, xT);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.final_state(), gaussian_denoise(s, xT, 80.0));
}

TEST(OdeSample, IsotropicGaussianStaysParallel) {
  GaussianStats s{Vector::Zero(5), Matrix::Identity(5, 5), Vector::Constant(5, 0.3)};
  GaussianDenoiser D(s);
  Rng rng(3);
  Vector xT = normal_vector(rng, 5, 80.0);
  auto t = ode_sample(D, edm_schedule(0.002, 80, 7, 30), xT);
  const Vector f = t.final_state();
  EXPECT_LT((f - f.dot(xT) / xT.squaredNorm() * xT).norm(), 1e-12 * f.norm());
  auto exact = gaussian_trajectory(s, xT, edm_schedule(0.002, 80, 7, 30)).final_state();
  EXPECT_GT(f.dot(exact), 0.0);
}

TEST(OdeSample, ErrorCarriesStepIndex) {
  FunctionDenoiser bad(2, [](const Vector& x, double t) {
    if (t < 1.0) throw NumericError("boom");
    return x;
  });
  try {
    ode_sample(bad, edm_schedule(0.002, 80, 7, 10), Vector::Zero(2));
    FAIL();
  } catch (const StepError& e) {
    EXPECT_NE(std::string(e.what()).find("step 6"), std::string::npos) << e.what();
    EXPECT_THROW(std::rethrow_exception(e.cause()), NumericError);
  }
}

TEST(GaussianTrajectory, ClosedFormProperties) {
  auto X = fixtures::uniform_data(6, 3, 9);  // rank 2
  auto s = empirical_stats(X);
  auto sched = edm_schedule(0.002, 80, 7, 10);
  Rng rng(4);
  Vector xT = normal_vector(rng, 6, 80.0);
  auto t = gaussian_trajectory(s, xT, sched);
  ASSERT_EQ(t.size(), 11u);
  EXPECT_EQ(t.states.front(), xT);
  EXPECT_EQ(t.sigmas.back(), 0.0);
  // x_0 - mu lies in the span of the components with positive variance
  Matrix Ur = s.basis.leftCols(s.rank());
  Vector c = t.final_state() - s.mean;
  EXPECT_LT((c - Ur * (Ur.transpose() * c)).norm(), 1e-12 * (1 + c.norm()));

  // per-mode oracle: sqrt((s^2 + l)/(T^2 + l)) on span(U), s/T off it
  const double sig = 3.0;
  Vector got = gaussian_state(s, xT, 80.0, sig);
  Vector coeff = s.basis.transpose() * (xT - s.mean);
  Vector orth = (xT - s.mean) - s.basis * coeff;
  Vector expect = s.mean + orth * (sig / 80.0);
  for (Eigen::Index i = 0; i < coeff.size(); ++i)
    expect += s.basis.col(i) * coeff(i) * std::sqrt((sig * sig + s.eigvals(i)) / (6400.0 + s.eigvals(i)));
  EXPECT_LT((got - expect).norm(), 1e-12);
}

TEST(GaussianTrajectory, LargeEigenvaluesKeepStart) {
  GaussianStats s{Vector::Zero(3), Matrix::Identity(3, 3), Vector::Constant(3, 1e12)};
  Vector xT(3);
  xT << 1, 2, 3;
  EXPECT_LT((gaussian_state(s, xT, 1.0, 0.0) - xT).norm(), 1e-9);
}

TEST(OdeSample, ConvergesToClosedFormAsStepsGrow) {
  auto s = empirical_stats(fixtures::gaussian_data(8, 400, 5));
  GaussianDenoiser D(s);
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Vector xT = normal_vector(rng, 8, 80.0);
    const Vector exact = gaussian_state(s, xT, 80.0, 0.0);
    double prev = INFINITY;
    for (int n : {10, 50, 200, 400}) {
      const double e = (ode_sample(D, edm_schedule(0.002, 80, 7, n), xT).final_state() - exact).norm() / exact.norm();
      EXPECT_LT(e, prev) << "n=" << n;
      prev = e;
    }
    EXPECT_LT(prev, 2e-2);
  }
}

TEST(OdeSample, MultiDeltaMemorizes) {
  auto Y = fixtures::uniform_data(8, 16, 7);
  MultiDeltaDenoiser D(Y);
  auto sched = edm_schedule(0.002, 80, 7, 100);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto t = ode_sample(D, sched, normal_vector(rng, 8, 80.0));
    for (const auto& st : t.states) EXPECT_TRUE(st.allFinite());
    double dist = 0;
    auto i = [&] {
      Eigen::Index best = 0;
      double bd = INFINITY;
      for (Eigen::Index r = 0; r < Y.n_samples(); ++r) {
        const double dd = (Y.row(r) - t.final_state()).norm();
        if (dd < bd) bd = dd, best = r;
      }
      dist = bd;
      return best;
    }();
    EXPECT_LT(dist / Y.row(i).norm(), 1e-2);
  }
}

TEST(TrajectoryCsv, Layout) {
  Trajectory t{{2.0, 0.0}, {Vector::Constant(2, 1.0), Vector::Constant(2, 0.5)}};
  EXPECT_EQ(trajectory_csv(t), "step,sigma,x0,x1\n0,2,1,1\n1,0,0.5,0.5\n");
}
