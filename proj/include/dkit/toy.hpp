#pragma once

// A small fully connected denoiser, (x, ln sigma) -> tanh(h) -> tanh(h) -> d,
// with hand-written backprop and Adam training at a single noise level.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dkit/adam.hpp"
#include "dkit/binio.hpp"
#include "dkit/dataset.hpp"
#include "dkit/denoiser.hpp"

namespace dkit {

enum class ToyMode : std::uint8_t {
  dae = 0,   // D = F
  skip = 1,  // D = c_skip(sigma) x + c_out(sigma) F
};

// Skip-connection coefficients. Defaults follow the standard preconditioning
// with sigma_data; either coefficient can be pinned to a constant.
struct SkipCoefficients {
  double sigma_data = 0.5;
  std::optional<double> fixed_skip;
  std::optional<double> fixed_out;

  double skip(double sigma) const {
    if (fixed_skip) return *fixed_skip;
    const double sd2 = sigma_data * sigma_data;
    return sd2 / (sigma * sigma + sd2);
  }
  double out(double sigma) const {
    if (fixed_out) return *fixed_out;
    return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data);
  }
};

class ToyDenoiser final : public Denoiser {
 public:
  // Parameter layout (also the checkpoint order), matrices row-major:
  //   W1 [h x (d+1)], b1 [h], W2 [h x h], b2 [h], W3 [d x h], b3 [d]
  ToyDenoiser(Eigen::Index dim, Eigen::Index hidden, ToyMode mode, SkipCoefficients coeffs = {})
      : dim_(dim), hidden_(hidden), mode_(mode), coeffs_(coeffs) {
    if (dim < 1) throw InvalidArgument("toy denoiser: dim must be positive");
    if (hidden < 1) throw InvalidArgument("toy denoiser: hidden width must be positive");
    params_ = Vector::Zero(parameter_count(dim, hidden));
  }

  static Eigen::Index parameter_count(Eigen::Index d, Eigen::Index h) {
    return h * (d + 1) + h + h * h + h + d * h + d;
  }

  Eigen::Index dim() const override { return dim_; }
  Eigen::Index hidden() const { return hidden_; }
  ToyMode mode() const { return mode_; }
  const SkipCoefficients& coefficients() const { return coeffs_; }
  void set_coefficients(SkipCoefficients c) { coeffs_ = c; }

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }

  Vector evaluate(const Vector& x, double sigma) const override {
    require_dim(x.size(), dim_, "toy denoiser input");
    Matrix batch = x.transpose();
    return evaluate_batch(batch, sigma).row(0).transpose();
  }

  Matrix evaluate_batch(const Matrix& batch, double sigma) const override {
    if (!(sigma > 0.0)) throw InvalidArgument("toy denoiser needs sigma > 0");
    require_dim(batch.cols(), dim_, "toy denoiser batch");
    Cache c;
    forward(batch, sigma, c);
    return c.out;
  }

  // Mean over the batch of |D(inputs_i) - targets_i|^2; fills `grad` (same
  // layout as parameters()) when non-null.
  double loss(const Matrix& inputs, const Matrix& targets, double sigma, Vector* grad) const {
    Cache c;
    forward(inputs, sigma, c);
    const double B = static_cast<double>(inputs.rows());
    Matrix diff = c.out - targets;
    const double value = diff.squaredNorm() / B;
    if (grad) backward(c, diff * (2.0 / B), sigma, *grad);
    return value;
  }

 private:
  struct Cache {
    Matrix z0, h1, h2, f, out;
  };

  using RowMap = Eigen::Map<RowMatrix>;
  using ConstRowMap = Eigen::Map<const RowMatrix>;

  Eigen::Index off_b1() const { return hidden_ * (dim_ + 1); }
  Eigen::Index off_w2() const { return off_b1() + hidden_; }
  Eigen::Index off_b2() const { return off_w2() + hidden_ * hidden_; }
  Eigen::Index off_w3() const { return off_b2() + hidden_; }
  Eigen::Index off_b3() const { return off_w3() + dim_ * hidden_; }

  ConstRowMap w1() const { return {params_.data(), hidden_, dim_ + 1}; }
  ConstRowMap w2() const { return {params_.data() + off_w2(), hidden_, hidden_}; }
  ConstRowMap w3() const { return {params_.data() + off_w3(), dim_, hidden_}; }
  auto b1() const { return params_.segment(off_b1(), hidden_); }
  auto b2() const { return params_.segment(off_b2(), hidden_); }
  auto b3() const { return params_.segment(off_b3(), dim_); }

  void forward(const Matrix& x, double sigma, Cache& c) const {
    const Eigen::Index B = x.rows();
    c.z0.resize(B, dim_ + 1);
    c.z0.leftCols(dim_) = x;
    c.z0.col(dim_).setConstant(std::log(sigma));
    c.h1 = ((c.z0 * w1().transpose()).rowwise() + b1().transpose()).array().tanh();
    c.h2 = ((c.h1 * w2().transpose()).rowwise() + b2().transpose()).array().tanh();
    c.f = (c.h2 * w3().transpose()).rowwise() + b3().transpose();
    if (mode_ == ToyMode::dae) {
      c.out = c.f;
    } else {
      c.out = coeffs_.skip(sigma) * x + coeffs_.out(sigma) * c.f;
    }
  }

  void backward(const Cache& c, const Matrix& d_out, double sigma, Vector& grad) const {
    grad.resize(params_.size());
    const Matrix d_f = mode_ == ToyMode::dae ? d_out : Matrix(coeffs_.out(sigma) * d_out);
    RowMap(grad.data() + off_w3(), dim_, hidden_) = d_f.transpose() * c.h2;
    grad.segment(off_b3(), dim_) = d_f.colwise().sum().transpose();
    Matrix d_a2 = (d_f * w3()).array() * (1.0 - c.h2.array().square());
    RowMap(grad.data() + off_w2(), hidden_, hidden_) = d_a2.transpose() * c.h1;
    grad.segment(off_b2(), hidden_) = d_a2.colwise().sum().transpose();
    Matrix d_a1 = (d_a2 * w2()).array() * (1.0 - c.h1.array().square());
    RowMap(grad.data(), hidden_, dim_ + 1) = d_a1.transpose() * c.z0;
    grad.segment(off_b1(), hidden_) = d_a1.colwise().sum().transpose();
  }

  Eigen::Index dim_, hidden_;
  ToyMode mode_;
  SkipCoefficients coeffs_;
  Vector params_;
};

/// Weights ~ N(0, 1/fan_in) from the seeded generator, biases zero.
inline ToyDenoiser init_toy(std::uint64_t seed, Eigen::Index dim, Eigen::Index hidden, ToyMode mode,
                            SkipCoefficients coeffs = {}) {
  ToyDenoiser model(dim, hidden, mode, coeffs);
  Rng rng(seed);
  Vector& p = model.parameters();
  Eigen::Index off = 0;
  auto fill = [&](Eigen::Index rows, Eigen::Index fan_in) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    for (Eigen::Index i = 0; i < rows * fan_in; ++i) p(off + i) = normal(rng);
    off += rows * fan_in + rows;  // bias block stays zero
  };
  fill(hidden, dim + 1);
  fill(hidden, hidden);
  fill(dim, hidden);
  return model;
}

struct ToyTrainConfig {
  int steps = 2000;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int validation_size = 256;
  AdamParams adam{};
};

struct ToyTrainResult {
  ToyDenoiser model;
  std::vector<double> train_loss;       // minibatch loss before each step
  std::vector<double> validation_loss;  // fixed held-out batch, before each step and after the last
  bool diverged = false;                // final validation loss above the initial one
};

namespace detail {

// Clean rows and their noisy versions for a batch of sampled indices.
inline void noisy_batch(const DataMatrix& X, const std::vector<std::size_t>& idx, double sigma, Rng& rng,
                        Matrix& clean, Matrix& noisy) {
  const auto B = static_cast<Eigen::Index>(idx.size());
  clean.resize(B, X.dim());
  for (Eigen::Index i = 0; i < B; ++i) clean.row(i) = X.values().row(static_cast<Eigen::Index>(idx[i]));
  noisy.resize(B, X.dim());
  fill_normal(rng, sigma, noisy);
  noisy += clean;
}

// Partial Fisher-Yates: `count` distinct indices out of `pool`.
inline std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t>& pool, std::size_t count,
                                                         Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count)};
}

inline std::vector<std::size_t> draw_with_replacement(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = uniform_index(rng, n);
  return idx;
}

}  // namespace detail

/// Adam on the denoising loss E|D(x + eps; sigma) - x|^2 at one noise level.
inline ToyTrainResult train_toy(ToyDenoiser model, const DataMatrix& X, double sigma, const ToyTrainConfig& cfg) {
  if (!(sigma > 0.0)) throw InvalidArgument("train_toy needs sigma > 0");
  if (!(cfg.lr >= 0.0)) throw InvalidArgument("train_toy needs lr >= 0");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.validation_size < 1)
    throw InvalidArgument("train_toy: steps >= 0, batch >= 1, validation_size >= 1 required");
  if (cfg.batch > X.n_samples()) throw InvalidArgument("train_toy: batch exceeds dataset size");
  require_dim(X.dim(), model.dim(), "training data");

  Rng val_rng(derive_seed(cfg.seed, 1));
  Matrix val_clean, val_noisy;
  detail::noisy_batch(X, detail::draw_with_replacement(static_cast<std::size_t>(X.n_samples()),
                                                       static_cast<std::size_t>(cfg.validation_size), val_rng),
                      sigma, val_rng, val_clean, val_noisy);

  Rng rng(derive_seed(cfg.seed, 0));
  std::vector<std::size_t> pool(static_cast<std::size_t>(X.n_samples()));
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  AdamState adam(model.parameters().size(), cfg.adam);

  ToyTrainResult result{model, {}, {}, false};
  ToyDenoiser& m = result.model;
  result.train_loss.reserve(static_cast<std::size_t>(cfg.steps));
  result.validation_loss.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  Vector grad;
  Matrix clean, noisy;
  for (int step = 0; step < cfg.steps; ++step) {
    result.validation_loss.push_back(m.loss(val_noisy, val_clean, sigma, nullptr));
    detail::noisy_batch(X, detail::draw_without_replacement(pool, static_cast<std::size_t>(cfg.batch), rng),
                        sigma, rng, clean, noisy);
    const double value = m.loss(noisy, clean, sigma, &grad);
    if (!std::isfinite(value) || !grad.allFinite())
      throw TrainingDiverged("toy training produced a non-finite loss", static_cast<std::size_t>(step));
    result.train_loss.push_back(value);
    adam.step(m.parameters(), grad, cfg.lr);
  }
  const double final_val = m.loss(val_noisy, val_clean, sigma, nullptr);
  if (!std::isfinite(final_val) || !m.parameters().allFinite())
    throw TrainingDiverged("toy training produced non-finite parameters", static_cast<std::size_t>(cfg.steps));
  result.validation_loss.push_back(final_val);
  result.diverged = final_val > result.validation_loss.front();
  return result;
}

struct GradCheckOptions {
  int n_params = 50;
  double step = 1e-5;
  std::uint64_t seed = 0;
  // Test hook applied to the analytic gradient before comparison.
  std::function<void(Vector&)> tamper;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  int checked = 0;
};

/// Compares backprop against central differences of |D(x; sigma) - target|^2
/// on randomly chosen parameters. Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckReport grad_check(const ToyDenoiser& model, const Vector& x, const Vector& target, double sigma,
                                  const GradCheckOptions& opt = {}) {
  require_finite(model.parameters(), "model parameters");
  Matrix in = x.transpose(), tgt = target.transpose();
  Vector grad;
  model.loss(in, tgt, sigma, &grad);
  if (opt.tamper) opt.tamper(grad);

  const auto P = static_cast<std::size_t>(model.parameters().size());
  std::vector<std::size_t> order(P);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opt.seed);
  const auto count = std::min<std::size_t>(P, static_cast<std::size_t>(std::max(opt.n_params, 0)));
  auto chosen = detail::draw_without_replacement(order, count, rng);

  ToyDenoiser probe = model;
  GradCheckReport report;
  for (std::size_t idx : chosen) {
    const auto i = static_cast<Eigen::Index>(idx);
    const double orig = probe.parameters()(i);
    probe.parameters()(i) = orig + opt.step;
    const double up = probe.loss(in, tgt, sigma, nullptr);
    probe.parameters()(i) = orig - opt.step;
    const double down = probe.loss(in, tgt, sigma, nullptr);
    probe.parameters()(i) = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double analytic = grad(i);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic - numeric) / denom);
    ++report.checked;
  }
  return report;
}

// Checkpoint: "TOY1", u8 mode, u32 dim, u32 hidden, parameters (f64 LE) in
// the layout documented on ToyDenoiser. Skip coefficients are not stored;
// loading restores the defaults.
inline std::vector<unsigned char> encode_toy(const ToyDenoiser& m) {
  std::vector<unsigned char> buf;
  binio::put_bytes(buf, "TOY1");
  buf.push_back(static_cast<unsigned char>(m.mode()));
  binio::put_u32(buf, static_cast<std::uint32_t>(m.dim()));
  binio::put_u32(buf, static_cast<std::uint32_t>(m.hidden()));
  binio::put_f64s(buf, std::span(m.parameters().data(), static_cast<std::size_t>(m.parameters().size())));
  return buf;
}

inline ToyDenoiser decode_toy(std::span<const unsigned char> bytes, const std::string& source = "toy checkpoint") {
  binio::Reader r(bytes, source);
  r.expect_magic("TOY1");
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError(source + ": unknown mode byte " + std::to_string(mode));
  const std::uint32_t d = r.u32(), h = r.u32();
  if (d == 0 || h == 0) throw FormatError(source + ": zero dimension");
  ToyDenoiser m(d, h, static_cast<ToyMode>(mode));
  r.f64s(std::span(m.parameters().data(), static_cast<std::size_t>(m.parameters().size())));
  r.expect_end();
  return m;
}

inline void save_toy(const std::filesystem::path& path, const ToyDenoiser& m) { binio::write_file(path, encode_toy(m)); }

inline ToyDenoiser load_toy(const std::filesystem::path& path) {
  return decode_toy(binio::read_file(path), path.string());
}

// One model per noise level; evaluation dispatches to the level nearest in
// log-sigma.
class ToyFamily final : public Denoiser {
 public:
  void add(double sigma, ToyDenoiser model) {
    if (!members_.empty()) require_dim(model.dim(), dim(), "toy family member");
    members_.push_back({sigma, std::move(model)});
  }
  Eigen::Index dim() const override { return members_.empty() ? 0 : members_.front().model.dim(); }
  std::size_t size() const { return members_.size(); }

  const ToyDenoiser& nearest(double sigma) const {
    if (members_.empty()) throw InvalidArgument("empty toy family");
    const double ls = std::log(sigma);
    const Member* best = &members_.front();
    for (const auto& m : members_)
      if (std::abs(std::log(m.sigma) - ls) < std::abs(std::log(best->sigma) - ls)) best = &m;
    return best->model;
  }

  Vector evaluate(const Vector& x, double sigma) const override { return nearest(sigma).evaluate(x, sigma); }
  Matrix evaluate_batch(const Matrix& batch, double sigma) const override {
    return nearest(sigma).evaluate_batch(batch, sigma);
  }

 private:
  struct Member {
    double sigma;
    ToyDenoiser model;
  };
  std::vector<Member> members_;
};

}  // namespace dkit
