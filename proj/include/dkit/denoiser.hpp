#pragma once

// Uniform denoiser interface D(x; sigma) and the closed-form denoisers:
// the multi-delta (empirical point set) optimum, the Gaussian (Wiener)
// optimum, and dense affine maps.

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include "dkit/dataset.hpp"
#include "dkit/types.hpp"

namespace dkit {

class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual Eigen::Index dim() const = 0;

  // Deterministic for fixed (x, sigma); output has dim() entries.
  virtual Vector evaluate(const Vector& x, double sigma) const = 0;

  // Rows are independent inputs. The default evaluates row by row.
  virtual Matrix evaluate_batch(const Matrix& batch, double sigma) const {
    Matrix out(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      out.row(i) = evaluate(batch.row(i).transpose(), sigma).transpose();
    return out;
  }

  // False when evaluations must be serialized by the caller (external plugins).
  virtual bool concurrent_safe() const { return true; }
};

using DenoiserPtr = std::shared_ptr<const Denoiser>;

namespace detail {
inline void check_input(const Vector& x, Eigen::Index dim) {
  require_dim(x.size(), dim, "denoiser input");
  require_finite(x, "denoiser input");
}
}  // namespace detail

/// Softmax-weighted average of the data rows with logits -|x - y_i|^2 / (2 sigma^2),
/// evaluated with max-subtraction.
inline Vector multi_delta_denoise(const DataMatrix& Y, const Vector& x, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("multi-delta denoiser needs sigma > 0");
  detail::check_input(x, Y.dim());
  const auto& rows = Y.values();
  Vector logits = -(rows.rowwise() - x.transpose()).rowwise().squaredNorm() / (2.0 * sigma * sigma);
  const double top = logits.maxCoeff();
  Vector w = (logits.array() - top).exp();
  Vector out = rows.transpose() * w / w.sum();
  // the weighted average cannot leave the data's bounding box except by rounding
  return out.cwiseMax(rows.colwise().minCoeff().transpose()).cwiseMin(rows.colwise().maxCoeff().transpose());
}

/// Shrinkage factor lambda / (lambda + sigma^2); 0 for lambda == 0 even at sigma == 0.
inline double wiener_gain(double lambda, double sigma) {
  if (lambda <= 0.0) return 0.0;
  return lambda / (lambda + sigma * sigma);
}

inline Vector wiener_gains(const GaussianStats& stats, double sigma) {
  Vector g(stats.eigvals.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = wiener_gain(stats.eigvals(i), sigma);
  return g;
}

/// mu + U diag(lambda/(lambda+sigma^2)) U^T (x - mu), computed in the rank-r basis.
inline Vector gaussian_denoise(const GaussianStats& stats, const Vector& x, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("Gaussian denoiser needs sigma >= 0");
  detail::check_input(x, stats.dim());
  Vector coeff = stats.basis.transpose() * (x - stats.mean);
  coeff.array() *= wiener_gains(stats, sigma).array();
  return stats.mean + stats.basis * coeff;
}

/// Dense affine map W x + b; sigma is recorded for provenance only.
struct AffineDenoiser {
  Matrix weight;
  Vector bias;
  double sigma = 0.0;

  AffineDenoiser() = default;
  AffineDenoiser(Matrix w, Vector b, double s = 0.0) : weight(std::move(w)), bias(std::move(b)), sigma(s) {
    if (weight.rows() != weight.cols() || weight.rows() != bias.size())
      throw InvalidArgument("affine denoiser: W must be d x d and b length d");
    if (weight.rows() > kMaxDenseDim)
      throw InvalidArgument("affine denoiser: dimension " + std::to_string(weight.rows()) +
                            " exceeds dense limit " + std::to_string(kMaxDenseDim));
    require_finite(weight, "affine weight");
    require_finite(bias, "affine bias");
  }

  static AffineDenoiser zeros(Eigen::Index d) { return {Matrix::Zero(d, d), Vector::Zero(d)}; }

  Eigen::Index dim() const { return bias.size(); }
};

inline Vector affine_denoise(const AffineDenoiser& D, const Vector& x) {
  require_dim(x.size(), D.dim(), "affine denoiser input");
  return D.weight * x + D.bias;
}

/// Score estimate (D(x; sigma) - x) / sigma^2.
inline Vector denoiser_to_score(const Denoiser& D, const Vector& x, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("score conversion needs sigma > 0");
  return (D.evaluate(x, sigma) - x) / (sigma * sigma);
}

// Interface adapters for the closed-form denoisers.

class MultiDeltaDenoiser final : public Denoiser {
 public:
  explicit MultiDeltaDenoiser(DataMatrix data) : data_(std::move(data)) {}
  Eigen::Index dim() const override { return data_.dim(); }
  Vector evaluate(const Vector& x, double sigma) const override {
    return multi_delta_denoise(data_, x, sigma);
  }
  const DataMatrix& data() const { return data_; }

 private:
  DataMatrix data_;
};

class GaussianDenoiser final : public Denoiser {
 public:
  explicit GaussianDenoiser(GaussianStats stats) : stats_(std::move(stats)) {}
  Eigen::Index dim() const override { return stats_.dim(); }
  Vector evaluate(const Vector& x, double sigma) const override {
    return gaussian_denoise(stats_, x, sigma);
  }
  Matrix evaluate_batch(const Matrix& batch, double sigma) const override {
    require_dim(batch.cols(), dim(), "denoiser batch");
    require_finite(batch, "denoiser input");
    Matrix coeff = (batch.rowwise() - stats_.mean.transpose()) * stats_.basis;
    coeff = coeff * wiener_gains(stats_, sigma).asDiagonal();
    return (coeff * stats_.basis.transpose()).rowwise() + stats_.mean.transpose();
  }
  const GaussianStats& stats() const { return stats_; }

 private:
  GaussianStats stats_;
};

class AffineMap final : public Denoiser {
 public:
  explicit AffineMap(AffineDenoiser params) : params_(std::move(params)) {}
  Eigen::Index dim() const override { return params_.dim(); }
  Vector evaluate(const Vector& x, double) const override { return affine_denoise(params_, x); }
  Matrix evaluate_batch(const Matrix& batch, double) const override {
    require_dim(batch.cols(), dim(), "denoiser batch");
    return (batch * params_.weight.transpose()).rowwise() + params_.bias.transpose();
  }
  const AffineDenoiser& params() const { return params_; }

 private:
  AffineDenoiser params_;
};

// Wraps any callable (x, sigma) -> Vector.
class FunctionDenoiser final : public Denoiser {
 public:
  using Fn = std::function<Vector(const Vector&, double)>;
  FunctionDenoiser(Eigen::Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  Eigen::Index dim() const override { return dim_; }
  Vector evaluate(const Vector& x, double sigma) const override {
    require_dim(x.size(), dim_, "denoiser input");
    Vector out = fn_(x, sigma);
    require_dim(out.size(), dim_, "denoiser output");
    return out;
  }

 private:
  Eigen::Index dim_;
  Fn fn_;
};

inline std::shared_ptr<FunctionDenoiser> identity_denoiser(Eigen::Index dim) {
  return std::make_shared<FunctionDenoiser>(dim, [](const Vector& x, double) { return x; });
}

inline std::shared_ptr<FunctionDenoiser> constant_denoiser(Vector value) {
  const auto d = value.size();
  return std::make_shared<FunctionDenoiser>(d, [v = std::move(value)](const Vector&, double) { return v; });
}

}  // namespace dkit
