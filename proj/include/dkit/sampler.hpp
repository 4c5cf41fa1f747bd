#pragma once

// Discrete probability-flow ODE sampling under the EDM noise schedule, and
// the closed-form trajectory of the Gaussian denoiser used as its oracle.

#include <sstream>
#include <string>
#include <vector>

#include "dkit/denoiser.hpp"

namespace dkit {

/// Strictly decreasing noise levels from sigma_max to sigma_min, followed by
/// an implicit terminal level 0.
class SigmaSchedule {
 public:
  SigmaSchedule(double sigma_min, double sigma_max, double rho, std::vector<double> values)
      : sigma_min_(sigma_min), sigma_max_(sigma_max), rho_(rho), values_(std::move(values)) {}

  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }
  double rho() const { return rho_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

 private:
  double sigma_min_, sigma_max_, rho_;
  std::vector<double> values_;
};

/// sigma_i = (smax^(1/rho) + i/(n-1) (smin^(1/rho) - smax^(1/rho)))^rho, with
/// the endpoints pinned exactly.
inline SigmaSchedule edm_schedule(double sigma_min, double sigma_max, double rho, int n_steps) {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max && std::isfinite(sigma_max)))
    throw InvalidArgument("schedule needs 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw InvalidArgument("schedule needs rho > 0");
  if (n_steps < 2) throw InvalidArgument("schedule needs at least 2 steps");
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  std::vector<double> v(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) {
    const double frac = static_cast<double>(i) / (n_steps - 1);
    v[static_cast<std::size_t>(i)] = std::pow(a + frac * (b - a), rho);
  }
  v.front() = sigma_max;
  v.back() = sigma_min;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1]))
      throw InvalidArgument("schedule is not strictly decreasing at step " + std::to_string(i) +
                            " (too many steps for the range)");
  return {sigma_min, sigma_max, rho, std::move(v)};
}

/// (sigma_i, x_i) pairs from sigma_max down to the terminal level 0;
/// n_steps + 1 entries.
struct Trajectory {
  std::vector<double> sigmas;
  std::vector<Vector> states;

  std::size_t size() const { return states.size(); }
  const Vector& final_state() const { return states.back(); }
};

/// Continues the Euler recursion from `x` at schedule index `start` and
/// appends every subsequent state (not `x` itself) to `out`.
inline void ode_continue(const Denoiser& D, const SigmaSchedule& schedule, std::size_t start, Vector x,
                         Trajectory& out) {
  const std::size_t n = schedule.size();
  for (std::size_t i = start; i < n; ++i) {
    const double t = schedule[i];
    Vector denoised;
    try {
      denoised = D.evaluate(x, t);
    } catch (const std::exception& e) {
      throw StepError("sampling step " + std::to_string(i) + " (sigma=" + std::to_string(t) + ")", e.what());
    }
    if (!denoised.allFinite())
      throw NumericError("non-finite denoiser output at sampling step " + std::to_string(i));
    if (i + 1 < n) {
      const double ratio = schedule[i + 1] / t;
      x = ratio * x + (1.0 - ratio) * denoised;
      out.sigmas.push_back(schedule[i + 1]);
    } else {
      // t_{i+1} = 0: the update reduces to the denoiser output.
      x = std::move(denoised);
      out.sigmas.push_back(0.0);
    }
    out.states.push_back(x);
  }
}

/// x_{i+1} = (t_{i+1}/t_i) x_i + (1 - t_{i+1}/t_i) D(x_i; t_i), with sigma(t) = t.
inline Trajectory ode_sample(const Denoiser& D, const SigmaSchedule& schedule, const Vector& x_T) {
  require_dim(x_T.size(), D.dim(), "sampler start");
  Trajectory traj;
  traj.sigmas.reserve(schedule.size() + 1);
  traj.states.reserve(schedule.size() + 1);
  traj.sigmas.push_back(schedule[0]);
  traj.states.push_back(x_T);
  ode_continue(D, schedule, 0, x_T, traj);
  return traj;
}

/// State at level `sigma` on the exact ODE path of the Gaussian denoiser
/// started from x_T at sigma_T.
inline Vector gaussian_state(const GaussianStats& stats, const Vector& x_T, double sigma_T, double sigma) {
  require_dim(x_T.size(), stats.dim(), "trajectory start");
  if (sigma == sigma_T) return x_T;
  const Vector centered = x_T - stats.mean;
  const Vector coeff = stats.basis.transpose() * centered;
  const Vector orth = centered - stats.basis * coeff;
  const double s2 = sigma * sigma, T2 = sigma_T * sigma_T;
  Vector scaled(coeff.size());
  for (Eigen::Index i = 0; i < coeff.size(); ++i)
    scaled(i) = std::sqrt((s2 + stats.eigvals(i)) / (T2 + stats.eigvals(i))) * coeff(i);
  Vector out = stats.mean + stats.basis * scaled;
  if (sigma > 0.0) out += (sigma / sigma_T) * orth;
  return out;
}

inline Trajectory gaussian_trajectory(const GaussianStats& stats, const Vector& x_T,
                                      const SigmaSchedule& schedule) {
  require_dim(x_T.size(), stats.dim(), "trajectory start");
  Trajectory traj;
  const double T = schedule[0];
  for (double s : schedule.values()) {
    traj.sigmas.push_back(s);
    traj.states.push_back(gaussian_state(stats, x_T, T, s));
  }
  traj.sigmas.push_back(0.0);
  traj.states.push_back(gaussian_state(stats, x_T, T, 0.0));
  return traj;
}

/// CSV with columns step, sigma, x0..x{d-1}; full round-trip precision.
inline std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream os;
  os.precision(17);
  os << "step,sigma";
  if (!traj.states.empty())
    for (Eigen::Index j = 0; j < traj.states.front().size(); ++j) os << ",x" << j;
  os << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    os << i << ',' << traj.sigmas[i];
    for (Eigen::Index j = 0; j < traj.states[i].size(); ++j) os << ',' << traj.states[i](j);
    os << '\n';
  }
  return os.str();
}

}  // namespace dkit
