#pragma once

// Diagnostics: linearity scores, score-field differences, the generalization
// (nearest-neighbor) score, weight and singular-vector comparisons, and
// per-sigma sweeps.

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dkit/denoiser.hpp"
#include "dkit/sampler.hpp"
#include "dkit/toy.hpp"

namespace dkit {

// Monte-Carlo estimate plus the number of draws dropped for zero norms.
struct Estimate {
  double value = 0.0;
  int used = 0;
  int skipped = 0;
};

enum class LinearityVariant { cosine, nmse };
enum class ScoreDiffVariant { rmse, nmse };

inline constexpr int kDefaultDraws = 100;

namespace detail {

inline Vector noisy_row(const DataMatrix& X, double sigma, Rng& rng) {
  Vector x = X.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(X.n_samples()))));
  return x + normal_vector(rng, X.dim(), sigma);
}

}  // namespace detail

/// Average agreement between D(a x1 + b x2) and a D(x1) + b D(x2) over noisy
/// data pairs. cosine: mean |cos|, 1 for linear maps. nmse: mean
/// |diff| / |D(a x1 + b x2)|, 0 for linear maps. Requires a^2 + b^2 = 1.
inline Estimate linearity_score(const Denoiser& D, const DataMatrix& X, double sigma, double alpha, double beta,
                                int n_pairs, std::uint64_t seed, LinearityVariant variant) {
  if (std::abs(alpha * alpha + beta * beta - 1.0) > 1e-12)
    throw InvalidArgument("linearity score needs alpha^2 + beta^2 = 1");
  if (!(sigma > 0.0)) throw InvalidArgument("linearity score needs sigma > 0");
  if (n_pairs < 1) throw InvalidArgument("linearity score needs n_pairs >= 1");
  require_dim(D.dim(), X.dim(), "denoiser");
  Rng rng(seed);
  Estimate est;
  double sum = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    const Vector x1 = detail::noisy_row(X, sigma, rng);
    const Vector x2 = detail::noisy_row(X, sigma, rng);
    const Vector joint = D.evaluate(alpha * x1 + beta * x2, sigma);
    const Vector split = alpha * D.evaluate(x1, sigma) + beta * D.evaluate(x2, sigma);
    const double nj = joint.norm();
    if (variant == LinearityVariant::cosine) {
      const double ns = split.norm();
      if (nj == 0.0 || ns == 0.0) {
        ++est.skipped;
        continue;
      }
      sum += std::abs(joint.dot(split)) / (nj * ns);
    } else {
      if (nj == 0.0) {
        ++est.skipped;
        continue;
      }
      sum += (joint - split).norm() / nj;
    }
    ++est.used;
  }
  if (est.used == 0) throw NumericError("linearity score: every pair had a zero-norm output");
  est.value = sum / est.used;
  return est;
}

/// Mean over n noisy draws of sqrt(|D1 - D2|^2 / d) (rmse) or
/// |D1 - D2| / |D1| (nmse).
inline double score_diff(const Denoiser& D1, const Denoiser& D2, const DataMatrix& X, double sigma, int n,
                         std::uint64_t seed, ScoreDiffVariant variant) {
  if (!(sigma > 0.0)) throw InvalidArgument("score difference needs sigma > 0");
  if (n < 1) throw InvalidArgument("score difference needs n >= 1");
  require_dim(D1.dim(), X.dim(), "first denoiser");
  require_dim(D2.dim(), X.dim(), "second denoiser");
  Rng rng(seed);
  const double d = static_cast<double>(X.dim());
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector y = detail::noisy_row(X, sigma, rng);
    const Vector a = D1.evaluate(y, sigma);
    const Vector b = D2.evaluate(y, sigma);
    if (variant == ScoreDiffVariant::rmse) {
      sum += std::sqrt((a - b).squaredNorm() / d);
    } else {
      const double na = a.norm();
      if (na == 0.0) throw NumericError("nmse score difference: reference output has zero norm");
      sum += (a - b).norm() / na;
    }
  }
  return sum / n;
}

/// Index of the nearest row of Y (Euclidean; lowest index wins ties).
inline Eigen::Index nearest_row(const DataMatrix& Y, const Vector& x, double* distance = nullptr) {
  Eigen::Index best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < Y.n_samples(); ++i) {
    const double d2 = (Y.values().row(i).transpose() - x).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  if (distance) *distance = std::sqrt(best_d2);
  return best;
}

/// |x - NN_Y(x)| / |NN_Y(x)|; infinite when the nearest row is zero.
inline double relative_nn_distance(const DataMatrix& Y, const Vector& x) {
  double dist = 0.0;
  const Eigen::Index i = nearest_row(Y, x, &dist);
  const double n = Y.values().row(i).norm();
  if (n == 0.0) return dist == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return dist / n;
}

/// (1/k) sum |x_i - NN_Y(x_i)| / |x_i| over the sample rows; zero-norm
/// samples are skipped and counted.
inline Estimate gl_score(const Matrix& samples, const DataMatrix& Y) {
  if (samples.rows() < 1) throw InvalidArgument("GL score needs at least one sample");
  require_dim(samples.cols(), Y.dim(), "GL samples");
  Estimate est;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Vector x = samples.row(i).transpose();
    const double nx = x.norm();
    if (nx == 0.0) {
      ++est.skipped;
      continue;
    }
    double dist = 0.0;
    nearest_row(Y, x, &dist);
    sum += dist / nx;
    ++est.used;
  }
  if (est.used == 0) throw NumericError("GL score: every sample had zero norm");
  est.value = sum / est.used;
  return est;
}

// Scores above this indicate samples are not copies of training data.
inline constexpr double kGeneralizationThreshold = 0.6;

/// |W1 - W2|_F^2 / |W2|_F^2.
inline double weight_nmse(const Matrix& W1, const Matrix& W2) {
  if (W1.rows() != W2.rows() || W1.cols() != W2.cols())
    throw InvalidArgument("weight NMSE: shape mismatch");
  const double ref = W2.squaredNorm();
  if (!(ref > 0.0)) throw InvalidArgument("weight NMSE: reference matrix is zero");
  return (W1 - W2).squaredNorm() / ref;
}

struct Correlation {
  Matrix values;
  bool normalized = false;  // true when input columns had to be rescaled
};

/// Entry (i, j) = |U1[:, i]^T U2[:, j]|.
inline Correlation singular_vector_correlation(const Matrix& U1, const Matrix& U2) {
  if (U1.rows() != U2.rows()) throw InvalidArgument("singular vector correlation: row mismatch");
  Correlation out;
  auto unit = [&](const Matrix& U) {
    Matrix V = U;
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
      const double n = V.col(j).norm();
      if (!(n > 0.0)) throw InvalidArgument("singular vector correlation: zero column");
      if (std::abs(n - 1.0) > 1e-8) {
        V.col(j) /= n;
        out.normalized = true;
      }
    }
    return V;
  };
  out.values = (unit(U1).transpose() * unit(U2)).cwiseAbs().cwiseMin(1.0);
  return out;
}

/// Per-sigma curve of a scalar metric.
struct MetricSeries {
  std::string name;
  std::vector<double> sigmas;
  std::vector<double> values;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> level_seeds;
};

using LevelMetric = std::function<double(double sigma, std::uint64_t seed)>;

/// Evaluates `metric` at every schedule level with seed derive_seed(seed, i).
inline MetricSeries metric_sweep(const std::string& name, const LevelMetric& metric, const SigmaSchedule& schedule,
                                 std::uint64_t seed, int n = kDefaultDraws) {
  MetricSeries s{name, {}, {}, n, seed, {}};
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double sigma = schedule[i];
    const std::uint64_t level_seed = derive_seed(seed, i);
    double v = 0.0;
    try {
      v = metric(sigma, level_seed);
    } catch (const std::exception& e) {
      throw StepError(name + " at sigma=" + std::to_string(sigma), e.what());
    }
    if (!std::isfinite(v)) throw NumericError(name + " is not finite at sigma=" + std::to_string(sigma));
    s.sigmas.push_back(sigma);
    s.values.push_back(v);
    s.level_seeds.push_back(level_seed);
  }
  return s;
}

/// Columns: sigma, value, n, seed (the per-level seed).
inline std::string series_csv(const MetricSeries& s) {
  std::ostringstream os;
  os.precision(17);
  os << "sigma,value,n,seed\n";
  for (std::size_t i = 0; i < s.values.size(); ++i)
    os << s.sigmas[i] << ',' << s.values[i] << ',' << s.n << ',' << s.level_seeds[i] << '\n';
  return os.str();
}

inline nlohmann::json series_json(const MetricSeries& s) {
  return {{"name", s.name}, {"sigma", s.sigmas}, {"value", s.values},
          {"n", s.n},       {"seed", s.seed},    {"level_seeds", s.level_seeds}};
}

}  // namespace dkit
