#pragma once

// Linear distillation of arbitrary denoisers, the closed-form optimal affine
// denoiser, direct gradient-descent training of an affine denoiser on the
// denoising loss, and the orthogonality-principle residual.

#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "dkit/adam.hpp"
#include "dkit/binio.hpp"
#include "dkit/denoiser.hpp"
#include "dkit/toy.hpp"

namespace dkit {

enum class LrSchedule { constant, cosine };

// How the noise expectation is handled by train_linear_dsm.
enum class NoiseMode {
  sampled,   // fresh Gaussian draws every step
  analytic,  // E_eps taken in closed form: adds sigma^2 |W|_F^2 to the loss
};

struct DistillConfig {
  int steps = 2000;  // K
  int batch = 64;    // n
  double lr = 1e-2;  // eta
  std::uint64_t seed = 0;
  bool adam = true;
  AdamParams adam_params{};
  LrSchedule schedule = LrSchedule::constant;
  NoiseMode noise = NoiseMode::sampled;

  void validate() const {
    if (steps < 1) throw InvalidArgument("distillation needs steps >= 1");
    if (batch < 1) throw InvalidArgument("distillation needs batch >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("distillation needs a finite lr >= 0");
  }

  double lr_at(int step) const {
    if (schedule == LrSchedule::constant) return lr;
    return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * step / steps));
  }
};

struct LinearFit {
  AffineDenoiser model;
  std::vector<double> loss;  // loss of the iterate before each step
};

/// W = U diag(lambda/(lambda+sigma^2)) U^T, b = (I - W) mu.
inline AffineDenoiser closed_form_linear(const GaussianStats& stats, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("closed form needs sigma >= 0");
  if (stats.dim() > kMaxDenseDim)
    throw InvalidArgument("closed form: dimension exceeds dense limit " + std::to_string(kMaxDenseDim));
  Matrix W = stats.basis * wiener_gains(stats, sigma).asDiagonal() * stats.basis.transpose();
  W = 0.5 * (W + W.transpose()).eval();
  Vector b = stats.mean - W * stats.mean;
  return {std::move(W), std::move(b), sigma};
}

// The dense affine map closed_form_linear(stats, sigma), rebuilt for the
// sigma of each call.
class ClosedFormDenoiser final : public Denoiser {
 public:
  explicit ClosedFormDenoiser(GaussianStats stats) : stats_(std::move(stats)) {}
  Eigen::Index dim() const override { return stats_.dim(); }
  Vector evaluate(const Vector& x, double sigma) const override {
    return affine_denoise(closed_form_linear(stats_, sigma), x);
  }
  Matrix evaluate_batch(const Matrix& batch, double sigma) const override {
    require_dim(batch.cols(), dim(), "denoiser batch");
    const AffineDenoiser A = closed_form_linear(stats_, sigma);
    return (batch * A.weight.transpose()).rowwise() + A.bias.transpose();
  }
  const GaussianStats& stats() const { return stats_; }

 private:
  GaussianStats stats_;
};

namespace detail {

inline void require_dense_dim(Eigen::Index d) {
  if (d > kMaxDenseDim)
    throw InvalidArgument("dimension " + std::to_string(d) + " exceeds the dense limit " +
                          std::to_string(kMaxDenseDim));
}

struct AffineOptimizer {
  const DistillConfig& cfg;
  AdamState adam;
  Vector flat;  // [vec(W) column-major, b]
  Eigen::Index d;

  AffineOptimizer(const DistillConfig& c, Eigen::Index dim)
      : cfg(c), adam(dim * dim + dim, c.adam_params), flat(Vector::Zero(dim * dim + dim)), d(dim) {}

  Eigen::Map<Matrix> W() { return {flat.data(), d, d}; }
  Eigen::Map<Vector> b() { return {flat.data() + d * d, d}; }

  void step(const Matrix& gW, const Vector& gb, int k) {
    Vector g(flat.size());
    Eigen::Map<Matrix>(g.data(), d, d) = gW;
    g.tail(d) = gb;
    const double lr = cfg.lr_at(k);
    if (cfg.adam) adam.step(flat, g, lr);
    else flat -= lr * g;
  }

  AffineDenoiser result(double sigma) { return {Matrix(W()), Vector(b()), sigma}; }
};

}  // namespace detail

/// Fits W, b (both starting at zero) to the teacher's outputs on noisy data:
/// minimizes mean |W (x + eps) + b - D(x + eps; sigma)|^2 over batches of n
/// rows with fresh noise, with Adam (default) or plain gradient steps.
inline LinearFit distill_linear(const Denoiser& teacher, const DataMatrix& X, double sigma,
                                const DistillConfig& cfg) {
  cfg.validate();
  if (!(sigma > 0.0)) throw InvalidArgument("distillation needs sigma > 0");
  require_dim(teacher.dim(), X.dim(), "teacher");
  const Eigen::Index d = X.dim();
  detail::require_dense_dim(d);
  detail::AffineOptimizer opt(cfg, d);
  Rng rng(cfg.seed);
  LinearFit fit;
  fit.loss.reserve(static_cast<std::size_t>(cfg.steps));
  Matrix clean, noisy;
  for (int k = 0; k < cfg.steps; ++k) {
    detail::noisy_batch(X, detail::draw_with_replacement(static_cast<std::size_t>(X.n_samples()),
                                                         static_cast<std::size_t>(cfg.batch), rng),
                        sigma, rng, clean, noisy);
    Matrix target;
    try {
      target = teacher.evaluate_batch(noisy, sigma);
    } catch (const std::exception& e) {
      throw StepError("teacher evaluation at distillation step " + std::to_string(k), e.what());
    }
    Matrix resid = (noisy * opt.W().transpose()).rowwise() + opt.b().transpose();
    resid -= target;
    const double n = static_cast<double>(cfg.batch);
    const double value = resid.squaredNorm() / n;
    if (!std::isfinite(value)) throw TrainingDiverged("distillation loss is not finite", static_cast<std::size_t>(k));
    fit.loss.push_back(value);
    opt.step((2.0 / n) * resid.transpose() * noisy, (2.0 / n) * resid.colwise().sum().transpose(), k);
  }
  fit.model = opt.result(sigma);
  return fit;
}

/// Plain gradient descent on mean |W (x + eps) + b - x|^2 (clean targets).
/// With batch >= N every step uses the whole dataset in order; with
/// NoiseMode::analytic the noise expectation is exact, so full-batch steps are
/// deterministic gradient descent on the population loss. Throws
/// TrainingDiverged once the loss exceeds 10x its initial value.
inline LinearFit train_linear_dsm(const DataMatrix& X, double sigma, DistillConfig cfg) {
  cfg.adam = false;
  cfg.validate();
  if (!(sigma > 0.0)) throw InvalidArgument("train_linear_dsm needs sigma > 0");
  const Eigen::Index d = X.dim();
  detail::require_dense_dim(d);
  detail::AffineOptimizer opt(cfg, d);
  Rng rng(cfg.seed);
  const bool full = cfg.batch >= X.n_samples();
  const double s2 = sigma * sigma;

  // Full-batch moments: M = mean x x^T, mu = mean x.
  Matrix M;
  Vector mu;
  if (full) {
    M = X.values().transpose() * X.values() / static_cast<double>(X.n_samples());
    mu = X.mean();
  }
  LinearFit fit;
  fit.loss.reserve(static_cast<std::size_t>(cfg.steps));
  Matrix clean, noisy;
  for (int k = 0; k < cfg.steps; ++k) {
    Matrix gW;
    Vector gb;
    double value = 0.0;
    auto W = opt.W();
    auto b = opt.b();
    if (full && cfg.noise == NoiseMode::analytic) {
      const Matrix A = W - Matrix::Identity(d, d);
      const Matrix AM = A * M;
      const Vector Amu = A * mu;
      value = (AM.cwiseProduct(A)).sum() + 2.0 * b.dot(Amu) + b.squaredNorm() + s2 * W.squaredNorm();
      gW = 2.0 * AM + 2.0 * b * mu.transpose() + 2.0 * s2 * W;
      gb = 2.0 * Amu + 2.0 * b;
    } else {
      std::vector<std::size_t> idx;
      if (full) {
        idx.resize(static_cast<std::size_t>(X.n_samples()));
        std::iota(idx.begin(), idx.end(), std::size_t{0});
      } else {
        idx = detail::draw_with_replacement(static_cast<std::size_t>(X.n_samples()),
                                            static_cast<std::size_t>(cfg.batch), rng);
      }
      detail::noisy_batch(X, idx, sigma, rng, clean, noisy);
      const double n = static_cast<double>(idx.size());
      if (cfg.noise == NoiseMode::analytic) {
        // E_eps |W(x+eps)+b-x|^2 = |(W-I)x + b|^2 + sigma^2 |W|_F^2
        Matrix resid = (clean * W.transpose()).rowwise() + b.transpose();
        resid -= clean;
        value = resid.squaredNorm() / n + s2 * W.squaredNorm();
        gW = (2.0 / n) * resid.transpose() * clean + 2.0 * s2 * W;
        gb = (2.0 / n) * resid.colwise().sum().transpose();
      } else {
        Matrix resid = (noisy * W.transpose()).rowwise() + b.transpose();
        resid -= clean;
        value = resid.squaredNorm() / n;
        gW = (2.0 / n) * resid.transpose() * noisy;
        gb = (2.0 / n) * resid.colwise().sum().transpose();
      }
    }
    if (!std::isfinite(value)) throw TrainingDiverged("linear DSM loss is not finite", static_cast<std::size_t>(k));
    if (!fit.loss.empty() && value > 10.0 * fit.loss.front())
      throw TrainingDiverged("linear DSM loss exceeded 10x its initial value", static_cast<std::size_t>(k));
    fit.loss.push_back(value);
    opt.step(gW, gb, k);
  }
  fit.model = opt.result(sigma);
  return fit;
}

/// |E[(D(x+eps) - x)(x+eps-mu)^T]|_F / |E[(x+eps-mu)(x+eps-mu)^T]|_F
/// estimated from n_samples seeded draws.
inline double orthogonality_residual(const Denoiser& D, const DataMatrix& X, double sigma, int n_samples,
                                     std::uint64_t seed) {
  if (!(sigma > 0.0)) throw InvalidArgument("orthogonality residual needs sigma > 0");
  if (n_samples < 1) throw InvalidArgument("orthogonality residual needs n_samples >= 1");
  require_dim(D.dim(), X.dim(), "denoiser");
  const Eigen::Index d = X.dim();
  const Vector mu = X.mean();
  Rng rng(seed);
  Matrix cross = Matrix::Zero(d, d), gram = Matrix::Zero(d, d);
  constexpr int kChunk = 256;
  Matrix clean, noisy;
  for (int done = 0; done < n_samples; done += kChunk) {
    const int m = std::min(kChunk, n_samples - done);
    detail::noisy_batch(X, detail::draw_with_replacement(static_cast<std::size_t>(X.n_samples()),
                                                         static_cast<std::size_t>(m), rng),
                        sigma, rng, clean, noisy);
    Matrix out = D.evaluate_batch(noisy, sigma);
    Matrix centered = noisy.rowwise() - mu.transpose();
    cross.noalias() += (out - clean).transpose() * centered;
    gram.noalias() += centered.transpose() * centered;
  }
  const double g = gram.norm();
  if (!(g > 0.0)) throw NumericError("orthogonality residual: degenerate input covariance");
  return cross.norm() / g;
}

/// Analytic gradient-descent stability bound: plain GD on the linear DSM
/// loss diverges for lr > 2 / L with L the largest Hessian eigenvalue of the
/// augmented second-moment matrix, 2 [[E xx^T + sigma^2 I, mu], [mu^T, 1]].
inline double linear_dsm_curvature(const DataMatrix& X, double sigma) {
  const Eigen::Index d = X.dim();
  Matrix H(d + 1, d + 1);
  H.topLeftCorner(d, d) = X.values().transpose() * X.values() / static_cast<double>(X.n_samples());
  H.topLeftCorner(d, d).diagonal().array() += sigma * sigma;
  const Vector mu = X.mean();
  H.topRightCorner(d, 1) = mu;
  H.bottomLeftCorner(1, d) = mu.transpose();
  H(d, d) = 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  return 2.0 * es.eigenvalues().maxCoeff();
}

// Checkpoint: "AFF1", u32 dim, f64 sigma, W row-major, b; all little-endian.
inline std::vector<unsigned char> encode_affine(const AffineDenoiser& D) {
  std::vector<unsigned char> buf;
  binio::put_bytes(buf, "AFF1");
  binio::put_u32(buf, static_cast<std::uint32_t>(D.dim()));
  binio::put_f64(buf, D.sigma);
  RowMatrix W = D.weight;
  binio::put_f64s(buf, std::span(W.data(), static_cast<std::size_t>(W.size())));
  binio::put_f64s(buf, std::span(D.bias.data(), static_cast<std::size_t>(D.bias.size())));
  return buf;
}

inline AffineDenoiser decode_affine(std::span<const unsigned char> bytes,
                                    const std::string& source = "affine checkpoint") {
  binio::Reader r(bytes, source);
  r.expect_magic("AFF1");
  const std::uint32_t d = r.u32();
  if (d == 0) throw FormatError(source + ": zero dimension");
  const double sigma = r.f64();
  RowMatrix W(d, d);
  Vector b(d);
  r.f64s(std::span(W.data(), static_cast<std::size_t>(W.size())));
  r.f64s(std::span(b.data(), static_cast<std::size_t>(b.size())));
  r.expect_end();
  return {Matrix(W), std::move(b), sigma};
}

inline void save_affine(const std::filesystem::path& path, const AffineDenoiser& D) {
  binio::write_file(path, encode_affine(D));
}

inline AffineDenoiser load_affine(const std::filesystem::path& path) {
  return decode_affine(binio::read_file(path), path.string());
}

inline std::string loss_csv(const std::vector<double>& loss) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) os << i << ',' << loss[i] << '\n';
  return os.str();
}

}  // namespace dkit
