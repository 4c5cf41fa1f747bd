#pragma once

// Self-contained verification suites run by `dkit verify`. Each builds its own
// synthetic data from the seed and reports named checks against tolerances.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "dkit/distill.hpp"
#include "dkit/metrics.hpp"
#include "dkit/report.hpp"
#include "dkit/sampler.hpp"

namespace dkit {

struct VerifyOptions {
  Eigen::Index dim = 16;
  Eigen::Index n_samples = 0;  // 0 = suite default
  std::uint64_t seed = 0;
  std::optional<double> tolerance;  // overrides the suite's primary tolerance
};

struct VerifyCheck {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool upper = true;  // value < tolerance passes; otherwise value > tolerance
  bool passed = false;
};

struct VerifyReport {
  std::string suite;
  std::vector<VerifyCheck> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }

  void add(std::string name, double value, double tol, bool upper = true) {
    const bool ok = upper ? value < tol : value > tol;
    checks.push_back({std::move(name), value, tol, upper, ok});
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"suite", suite}, {"passed", passed()}, {"checks", nlohmann::json::array()}};
    for (const auto& c : checks)
      j["checks"].push_back({{"name", c.name},
                             {"value", c.value},
                             {"tolerance", c.tolerance},
                             {"bound", c.upper ? "upper" : "lower"},
                             {"passed", c.passed}});
    return j;
  }
};

namespace detail {

// Correlated Gaussian data along a random basis with geometrically decaying
// spread, clipped into [-1, 1].
inline DataMatrix synthetic_gaussian(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix g(d, d);
  fill_normal(rng, 1.0, g);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
  Vector scales(d);
  for (Eigen::Index i = 0; i < d; ++i) scales(i) = 0.35 * std::pow(0.85, static_cast<double>(i));
  Vector mean(d);
  for (Eigen::Index i = 0; i < d; ++i) mean(i) = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  Matrix z(n, d);
  fill_normal(rng, 1.0, z);
  RowMatrix x = (z * scales.asDiagonal() * Q.transpose()).rowwise() + mean.transpose();
  return DataMatrix(x.cwiseMax(-1.0).cwiseMin(1.0));
}

inline DataMatrix synthetic_uniform(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RowMatrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return DataMatrix(x);
}

// Two antipodal clusters along the normalized all-ones direction scaled to
// +/-0.95 per coordinate: one dominant eigenvalue of about 0.9 d.
inline DataMatrix synthetic_dominant(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double side = (i % 2 == 0) ? 0.95 : -0.95;
    x.row(i) = (Vector::Constant(d, side) + normal_vector(rng, d, 0.03)).transpose();
  }
  return DataMatrix(x.cwiseMax(-1.0).cwiseMin(1.0));
}

inline double relative_error(const Vector& a, const Vector& ref) { return (a - ref).norm() / ref.norm(); }

}  // namespace detail

/// Plain gradient descent on the exact full-batch denoising loss recovers the
/// closed-form affine denoiser.
inline VerifyReport verify_linear_dsm(const VerifyOptions& o) {
  const double tol = o.tolerance.value_or(1e-3);
  const Eigen::Index n = o.n_samples > 0 ? o.n_samples : 2000;
  const DataMatrix X = detail::synthetic_gaussian(o.dim, n, o.seed);
  const GaussianStats stats = empirical_stats(X);
  VerifyReport rep{"theorem1", {}};
  for (double sigma : {0.1, 1.0, 10.0}) {
    DistillConfig cfg;
    cfg.steps = 20000;
    cfg.batch = static_cast<int>(n);
    cfg.noise = NoiseMode::analytic;
    cfg.lr = 1.0 / linear_dsm_curvature(X, sigma);
    cfg.seed = o.seed;
    const LinearFit fit = train_linear_dsm(X, sigma, cfg);
    const AffineDenoiser ref = closed_form_linear(stats, sigma);
    const std::string at = " sigma=" + detail::fmt(sigma);
    rep.add("weight_nmse" + at, weight_nmse(fit.model.weight, ref.weight), tol);
    rep.add("bias_relative_error" + at, detail::relative_error(fit.model.bias, ref.bias), tol);
  }
  return rep;
}

/// Euler sampling with the Gaussian denoiser approaches the closed-form
/// terminal state, with error shrinking as steps are added.
inline VerifyReport verify_trajectory(const VerifyOptions& o) {
  const double tol = o.tolerance.value_or(1e-2);
  const Eigen::Index n = o.n_samples > 0 ? o.n_samples : 500;
  const DataMatrix X = detail::synthetic_gaussian(o.dim, n, o.seed);
  const GaussianDenoiser D(empirical_stats(X));
  const int steps[] = {10, 50, 200, 400};
  constexpr int kSeeds = 20;
  std::vector<std::vector<double>> err(kSeeds);
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(s)));
    const Vector x_T = normal_vector(rng, o.dim, 80.0);
    for (int k : steps) {
      const SigmaSchedule sched = edm_schedule(0.002, 80.0, 7.0, k);
      const Vector euler = ode_sample(D, sched, x_T).final_state();
      const Vector exact = gaussian_state(D.stats(), x_T, 80.0, 0.0);
      err[s].push_back(detail::relative_error(euler, exact));
    }
  }
  VerifyReport rep{"trajectory", {}};
  for (std::size_t j = 0; j < std::size(steps); ++j) {
    double worst = 0.0;
    for (const auto& e : err) worst = std::max(worst, e[j]);
    if (steps[j] == 400) rep.add("max_relative_error n=400", worst, tol);
    else rep.checks.push_back({"max_relative_error n=" + std::to_string(steps[j]), worst, 0.0, true, true});
  }
  int non_monotone = 0;
  for (const auto& e : err)
    for (std::size_t j = 1; j < e.size(); ++j)
      if (!(e[j] < e[j - 1])) ++non_monotone;
  rep.add("seeds_with_non_decreasing_error", non_monotone, 0.5);
  return rep;
}

/// Sampling with the multi-delta denoiser reproduces training points.
inline VerifyReport verify_memorize(const VerifyOptions& o) {
  const double tol = o.tolerance.value_or(1e-2);
  const Eigen::Index n = o.n_samples > 0 ? o.n_samples : 32;
  const DataMatrix Y = detail::synthetic_uniform(o.dim, n, o.seed);
  const MultiDeltaDenoiser D(Y);
  const SigmaSchedule sched = edm_schedule(0.002, 80.0, 7.0, 100);
  constexpr int kStarts = 100;
  Matrix finals(kStarts, o.dim);
  int hits = 0;
  for (int s = 0; s < kStarts; ++s) {
    Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(s)));
    const Vector out = ode_sample(D, sched, normal_vector(rng, o.dim, 80.0)).final_state();
    finals.row(s) = out.transpose();
    if (relative_nn_distance(Y, out) < tol) ++hits;
  }
  VerifyReport rep{"memorize", {}};
  rep.add("fraction_within_tolerance", static_cast<double>(hits) / kStarts, 0.95 - 1e-12, false);
  rep.add("gl_score", gl_score(finals, Y).value, 0.05);
  return rep;
}

/// The Gaussian denoiser's error is uncorrelated with its input; the zero
/// map's is not when the data variance dominates the noise.
inline VerifyReport verify_orthogonality(const VerifyOptions& o) {
  const double tol = o.tolerance.value_or(0.05);
  const Eigen::Index n = o.n_samples > 0 ? o.n_samples : 1000;
  const DataMatrix X = detail::synthetic_dominant(o.dim, n, o.seed);
  const GaussianStats stats = empirical_stats(X);
  const GaussianDenoiser D(stats);
  const auto zero = constant_denoiser(Vector::Zero(o.dim));
  const double lmax = stats.eigvals.size() ? stats.eigvals(0) : 0.0;
  VerifyReport rep{"orthogonality", {}};
  std::uint64_t level = 0;
  for (double sigma : {0.5, 1.0, 4.0}) {
    const std::uint64_t seed = derive_seed(o.seed, level++);
    const std::string at = " sigma=" + detail::fmt(sigma);
    rep.add("gaussian_residual" + at, orthogonality_residual(D, X, sigma, 10000, seed), tol);
    if (lmax >= 10.0 * sigma * sigma)
      rep.add("zero_map_residual" + at, orthogonality_residual(*zero, X, sigma, 10000, seed), 0.3, false);
  }
  return rep;
}

inline VerifyReport run_verify(const std::string& suite, const VerifyOptions& o) {
  if (o.tolerance && !(*o.tolerance > 0.0)) throw InvalidArgument("tolerance must be positive");
  if (o.dim < 1) throw InvalidArgument("dim must be positive");
  if (suite == "theorem1") return verify_linear_dsm(o);
  if (suite == "trajectory") return verify_trajectory(o);
  if (suite == "memorize") return verify_memorize(o);
  if (suite == "orthogonality") return verify_orthogonality(o);
  throw InvalidArgument("unknown verify suite '" + suite + "'");
}

}  // namespace dkit
