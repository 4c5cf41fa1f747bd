#pragma once

// Local linear analysis of denoisers: finite-difference Jacobians, their
// singular triplets, and trajectory perturbation along singular directions.

#include <vector>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "dkit/sampler.hpp"

namespace dkit {

/// Column j = (D(x + h e_j) - D(x - h e_j)) / (2h).
inline Matrix jacobian_fd(const Denoiser& D, const Vector& x, double sigma, double h = 1e-4) {
  const Eigen::Index d = D.dim();
  require_dim(x.size(), d, "Jacobian point");
  if (d > kMaxDenseDim)
    throw InvalidArgument("Jacobian: dimension exceeds dense limit " + std::to_string(kMaxDenseDim));
  if (!(h > 0.0)) throw InvalidArgument("Jacobian step must be positive");
  Matrix probes(2 * d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    probes.row(2 * j) = x.transpose();
    probes.row(2 * j + 1) = x.transpose();
    probes(2 * j, j) += h;
    probes(2 * j + 1, j) -= h;
  }
  const Matrix out = D.evaluate_batch(probes, sigma);
  Matrix J(d, d);
  for (Eigen::Index j = 0; j < d; ++j) J.col(j) = (out.row(2 * j) - out.row(2 * j + 1)).transpose() / (2.0 * h);
  if (!J.allFinite()) throw NumericError("Jacobian has non-finite entries");
  return J;
}

struct JacobianReport {
  Vector point;
  double sigma = 0.0;
  Vector singular_values;  // descending
  Matrix left;             // d x k
  Matrix right;            // d x k
};

/// Top-k singular triplets of J, descending.
inline JacobianReport jacobian_svd(const Matrix& J, Eigen::Index k) {
  if (J.rows() != J.cols()) throw InvalidArgument("Jacobian must be square");
  if (k < 1 || k > J.rows()) throw InvalidArgument("k must lie in [1, dim]");
  Eigen::JacobiSVD<Matrix> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
  JacobianReport r;
  r.singular_values = svd.singularValues().head(k);
  r.left = svd.matrixU().leftCols(k);
  r.right = svd.matrixV().leftCols(k);
  return r;
}

inline JacobianReport analyze_jacobian(const Denoiser& D, const Vector& x, double sigma, Eigen::Index k,
                                       double h = 1e-4) {
  JacobianReport r = jacobian_svd(jacobian_fd(D, x, sigma, h), k);
  r.point = x;
  r.sigma = sigma;
  return r;
}

/// Metadata and singular values; vector blocks go to raw-f64 containers.
inline nlohmann::json jacobian_json(const JacobianReport& r) {
  std::vector<double> sv(r.singular_values.data(), r.singular_values.data() + r.singular_values.size());
  return {{"sigma", r.sigma},
          {"dim", r.point.size()},
          {"k", r.singular_values.size()},
          {"singular_values", sv},
          {"left_vectors", "left.f64"},
          {"right_vectors", "right.f64"},
          {"point", "point.f64"}};
}

/// Resumes sampling from state_i + m v at level sigma_i for each magnitude m
/// and returns the final states.
inline std::vector<Vector> perturb_and_resample(const Denoiser& D, const SigmaSchedule& schedule,
                                                const Trajectory& trajectory, std::size_t step, const Vector& direction,
                                                const std::vector<double>& magnitudes) {
  if (step >= schedule.size() || step >= trajectory.size())
    throw InvalidArgument("perturbation step outside the trajectory");
  require_dim(direction.size(), D.dim(), "perturbation direction");
  if (std::abs(direction.norm() - 1.0) > 1e-8) throw InvalidArgument("perturbation direction must be unit norm");
  std::vector<Vector> finals;
  finals.reserve(magnitudes.size());
  for (double m : magnitudes) {
    Trajectory tail;
    ode_continue(D, schedule, step, trajectory.states[step] + m * direction, tail);
    finals.push_back(tail.final_state());
  }
  return finals;
}

}  // namespace dkit
