#include <gtest/gtest.h>

#include "dkit/distill.hpp"
#include "dkit/jacobian.hpp"
#include "dkit/metrics.hpp"
#include "fixtures.hpp"

using namespace dkit;

namespace {

struct Affine final : Denoiser {
  AffineDenoiser A;
  explicit Affine(AffineDenoiser a) : A(std::move(a)) {}
  Eigen::Index dim() const override { return A.dim(); }
  Vector evaluate(const Vector& x, double) const override { return affine_denoise(A, x); }
};

Vector distinct_eigvals(Eigen::Index d) {
  Vector ev(d);
  for (Eigen::Index i = 0; i < d; ++i) ev(i) = 2.0 * std::pow(0.7, static_cast<double>(i));
  return ev;
}

}  // namespace

TEST(JacobianFd, AffineMapGivesWeight) {
  Rng rng(1);
  Matrix W(6, 6);
  fill_normal(rng, 1.0, W);
  Affine D({W, normal_vector(rng, 6)});
  EXPECT_LT((jacobian_fd(D, normal_vector(rng, 6), 0.5) - W).norm(), 1e-8);
}

TEST(JacobianFd, GaussianIsPointIndependent) {
  auto s = fixtures::synthetic_stats(distinct_eigvals(8), 2);
  GaussianDenoiser G(s);
  const Matrix ref = closed_form_linear(s, 0.6).weight;
  Rng rng(3);
  for (int i = 0; i < 5; ++i) EXPECT_LT((jacobian_fd(G, normal_vector(rng, 8), 0.6) - ref).norm(), 1e-8);
}

TEST(JacobianFd, MultiDeltaFlatAtHugeNoise) {
  auto X = fixtures::uniform_data(4, 10, 1);
  MultiDeltaDenoiser M(X);
  EXPECT_LT(jacobian_fd(M, X.row(0), 1e4).norm(), 1e-6);
}

TEST(JacobianFd, Validation) {
  Affine D(AffineDenoiser::zeros(3));
  EXPECT_THROW(jacobian_fd(D, Vector::Zero(2), 1.0), InvalidArgument);
  EXPECT_THROW(jacobian_fd(D, Vector::Zero(3), 1.0, 0.0), InvalidArgument);
}

TEST(JacobianSvd, Diagonal) {
  Matrix J = Eigen::Vector3d(3.0, 2.0, 1.0).asDiagonal();
  auto r = jacobian_svd(J, 2);
  EXPECT_NEAR(r.singular_values(0), 3.0, 1e-14);
  EXPECT_NEAR(r.singular_values(1), 2.0, 1e-14);
  EXPECT_NEAR(std::abs(r.left(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(r.right(1, 1)), 1.0, 1e-14);
  EXPECT_THROW(jacobian_svd(J, 0), InvalidArgument);
  EXPECT_THROW(jacobian_svd(J, 4), InvalidArgument);
  EXPECT_THROW(jacobian_svd(Matrix::Zero(2, 3), 1), InvalidArgument);
}

TEST(JacobianSvd, GaussianSpectrumAndVectors) {
  const Eigen::Index d = 16;
  const Vector ev = distinct_eigvals(d);
  auto s = fixtures::synthetic_stats(ev, 4);
  GaussianDenoiser G(s);
  const double sigma = 0.8;
  Rng rng(5);
  auto r = analyze_jacobian(G, normal_vector(rng, d, 0.3), sigma, d);
  for (Eigen::Index i = 0; i < d; ++i) EXPECT_NEAR(r.singular_values(i), ev(i) / (ev(i) + sigma * sigma), 1e-8);
  auto c = singular_vector_correlation(r.left, s.basis);
  for (Eigen::Index i = 0; i < d; ++i) EXPECT_GT(c.values(i, i), 0.99);
  for (Eigen::Index i = 0; i < d; ++i) EXPECT_NEAR(std::abs(r.left.col(i).dot(r.right.col(i))), 1.0, 1e-8);
  auto j = jacobian_json(r);
  EXPECT_EQ(j["k"], d);
  EXPECT_EQ(j["singular_values"].size(), static_cast<std::size_t>(d));
}

TEST(Perturb, ZeroMagnitudeReproducesTrajectory) {
  auto X = fixtures::uniform_data(4, 8, 2);
  MultiDeltaDenoiser M(X);
  auto sched = edm_schedule(0.002, 80.0, 7.0, 20);
  Rng rng(1);
  auto traj = ode_sample(M, sched, normal_vector(rng, 4, 80.0));
  Vector v = Vector::Unit(4, 1);
  auto finals = perturb_and_resample(M, sched, traj, 5, v, {0.0});
  EXPECT_EQ(finals[0], traj.final_state());
}

TEST(Perturb, AffineDisplacementIsLinear) {
  Rng rng(2);
  Matrix W(3, 3);
  fill_normal(rng, 0.4, W);
  Affine D({W, normal_vector(rng, 3)});
  auto sched = edm_schedule(0.002, 80.0, 7.0, 12);
  auto traj = ode_sample(D, sched, normal_vector(rng, 3, 80.0));
  Vector v = normal_vector(rng, 3).normalized();
  auto f = perturb_and_resample(D, sched, traj, 4, v, {0.0, 0.5, 1.0, 2.0});
  Vector d1 = f[2] - f[0];
  EXPECT_LT(((f[1] - f[0]) - 0.5 * d1).norm(), 1e-8 * d1.norm() + 1e-14);
  EXPECT_LT(((f[3] - f[0]) - 2.0 * d1).norm(), 1e-8 * d1.norm() + 1e-14);
}

TEST(Perturb, OrthogonalDirectionVanishesUnderGaussian) {
  Vector ev(4);
  ev << 0.5, 0.2, 0.0, 0.0;
  auto s = fixtures::synthetic_stats(ev, 6);
  GaussianDenoiser G(s);
  auto sched = edm_schedule(0.002, 80.0, 7.0, 15);
  Rng rng(7);
  auto traj = ode_sample(G, sched, normal_vector(rng, 4, 80.0));
  Vector v = s.basis.col(3);
  auto f = perturb_and_resample(G, sched, traj, sched.size() - 1, v, {0.0, 1.0});
  EXPECT_LT((f[1] - f[0]).norm(), 1e-12);
}

TEST(Perturb, Validation) {
  Affine D(AffineDenoiser::zeros(2));
  auto sched = edm_schedule(0.002, 80.0, 7.0, 5);
  auto traj = ode_sample(D, sched, Vector::Ones(2));
  EXPECT_THROW(perturb_and_resample(D, sched, traj, 9, Vector::Unit(2, 0), {1.0}), InvalidArgument);
  EXPECT_THROW(perturb_and_resample(D, sched, traj, 1, Vector::Ones(2), {1.0}), InvalidArgument);
}
