#pragma once

// Synthetic datasets shared by the unit and acceptance suites.

#include <Eigen/QR>

#include "dkit/dkit.hpp"

namespace dkit::fixtures {

inline DataMatrix two_point() {
  RowMatrix m(2, 2);
  m << 1, 0, -1, 0;
  return DataMatrix(m);
}

inline Matrix random_orthogonal(Eigen::Index d, Rng& rng) {
  Matrix g(d, d);
  fill_normal(rng, 1.0, g);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(d, d);
}

// Correlated Gaussian samples with standard deviations `scales` along a
// random orthonormal basis, shifted by a random mean in [-0.2, 0.2] and
// clipped into [-1, 1].
inline DataMatrix gaussian_data(Eigen::Index d, Eigen::Index n, std::uint64_t seed, double top_scale = 0.35,
                                double decay = 0.85) {
  Rng rng(seed);
  Matrix Q = random_orthogonal(d, rng);
  Vector scales(d);
  for (Eigen::Index i = 0; i < d; ++i) scales(i) = top_scale * std::pow(decay, static_cast<double>(i));
  Vector mean = Vector::NullaryExpr(d, [&] { return std::uniform_real_distribution<double>(-0.2, 0.2)(rng); });
  Matrix z(n, d);
  fill_normal(rng, 1.0, z);
  RowMatrix x = (z * scales.asDiagonal() * Q.transpose()).rowwise() + mean.transpose();
  return DataMatrix(x.cwiseMax(-1.0).cwiseMin(1.0));
}

// Two tight clusters at +/- c along a random unit direction.
inline DataMatrix two_cluster(Eigen::Index d, Eigen::Index n, std::uint64_t seed, double separation = 0.6,
                              double spread = 0.08) {
  Rng rng(seed);
  Vector dir = normal_vector(rng, d);
  dir.normalize();
  RowMatrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double side = (i % 2 == 0) ? 1.0 : -1.0;
    x.row(i) = (side * separation * dir + normal_vector(rng, d, spread)).transpose();
  }
  return DataMatrix(x.cwiseMax(-1.0).cwiseMin(1.0));
}

// Uniform samples in [-1, 1]^d.
inline DataMatrix uniform_data(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RowMatrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return DataMatrix(x);
}

// Stats with prescribed eigenvalues along a random basis (not tied to any
// dataset); mean of the given magnitude.
inline GaussianStats synthetic_stats(const Vector& eigvals, std::uint64_t seed, double mean_scale = 0.3) {
  Rng rng(seed);
  const Eigen::Index d = eigvals.size();
  GaussianStats s;
  s.basis = random_orthogonal(d, rng);
  s.eigvals = eigvals;
  s.mean = normal_vector(rng, d, mean_scale);
  return s;
}

}  // namespace dkit::fixtures
