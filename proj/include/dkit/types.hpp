#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>

#include "dkit/error.hpp"

namespace dkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense d x d matrices (affine weights, Jacobians) are materialized only up
// to this dimension.
inline constexpr Eigen::Index kMaxDenseDim = 4096;

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(mix_seed(master) ^ (index * 0xd1342543de82ef95ULL + 1));
}

// Fills in storage order, so the draw sequence depends only on the layout.
template <typename Derived>
void fill_normal(Rng& rng, double stddev, Eigen::PlainObjectBase<Derived>& out) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
}

inline Vector normal_vector(Rng& rng, Eigen::Index n, double stddev = 1.0) {
  Vector v(n);
  fill_normal(rng, stddev, v);
  return v;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want)
    throw InvalidArgument(std::string(what) + ": dimension " + std::to_string(got) +
                          " does not match expected " + std::to_string(want));
}

}  // namespace dkit
