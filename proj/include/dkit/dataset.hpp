#pragma once

// Training data ingestion and the empirical Gaussian statistics (mean and
// covariance eigendecomposition) that define the Gaussian denoiser.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "dkit/binio.hpp"
#include "dkit/types.hpp"

namespace dkit {

/// N samples of dimension d, one per row, every entry finite and in [-1, 1].
class DataMatrix {
 public:
  explicit DataMatrix(RowMatrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw InvalidArgument("DataMatrix needs at least one sample and one dimension");
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        double v = values_(i, j);
        if (!std::isfinite(v)) throw NumericError("non-finite value at row " + std::to_string(i));
        if (v < -1.0 || v > 1.0)
          throw FormatError("value " + std::to_string(v) + " at row " + std::to_string(i) +
                            " column " + std::to_string(j) + " outside [-1, 1]");
      }
  }

  Eigen::Index n_samples() const { return values_.rows(); }
  Eigen::Index dim() const { return values_.cols(); }
  const RowMatrix& values() const { return values_; }
  Vector row(Eigen::Index i) const { return values_.row(i).transpose(); }
  Vector mean() const { return values_.colwise().mean().transpose(); }

 private:
  RowMatrix values_;
};

/// Empirical mean, orthonormal basis U (d x r) and eigenvalues (descending)
/// of the covariance (1/N) sum (y - mu)(y - mu)^T.
struct GaussianStats {
  Vector mean;
  Matrix basis;
  Vector eigvals;

  Eigen::Index dim() const { return mean.size(); }
  // Number of basis columns, min(N, d).
  Eigen::Index components() const { return basis.cols(); }
  // Number of strictly positive eigenvalues.
  Eigen::Index rank() const { return (eigvals.array() > 0.0).count(); }

  Matrix covariance() const {
    return basis * eigvals.asDiagonal() * basis.transpose();
  }
};

enum class DataFormat { csv, raw_f64, pgm_dir };

inline DataFormat parse_data_format(std::string_view s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "raw" || s == "raw-f64") return DataFormat::raw_f64;
  if (s == "pgm" || s == "pgm-dir") return DataFormat::pgm_dir;
  throw InvalidArgument("unknown data format '" + std::string(s) + "' (csv | raw-f64 | pgm-dir)");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view tok, const std::string& where) {
  tok = trim(tok);
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
    throw FormatError(where + ": cannot parse '" + std::string(tok) + "' as a number");
  return v;
}

}  // namespace detail

/// Parses comma-separated rows; blank lines are ignored.
inline DataMatrix parse_csv(std::string_view text, const std::string& source = "csv") {
  std::vector<double> values;
  Eigen::Index dim = -1, rows = 0;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (detail::trim(line).empty()) continue;
    Eigen::Index count = 0;
    std::string where = source + ":" + std::to_string(line_no);
    while (true) {
      auto comma = line.find(',');
      values.push_back(detail::parse_double(line.substr(0, comma), where));
      ++count;
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (dim < 0) dim = count;
    if (count != dim)
      throw FormatError(where + ": dimension mismatch, row has " + std::to_string(count) +
                        " values, expected " + std::to_string(dim));
    ++rows;
  }
  if (rows == 0) throw FormatError(source + ": no samples");
  RowMatrix m = Eigen::Map<RowMatrix>(values.data(), rows, dim);
  return DataMatrix(std::move(m));
}

/// raw-f64 container: "DDL1", u32 N, u32 d, then N*d f64 row-major, all
/// little-endian.
inline std::vector<unsigned char> encode_raw(const RowMatrix& m) {
  std::vector<unsigned char> buf;
  binio::put_bytes(buf, "DDL1");
  binio::put_u32(buf, static_cast<std::uint32_t>(m.rows()));
  binio::put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  binio::put_f64s(buf, std::span(m.data(), static_cast<std::size_t>(m.size())));
  return buf;
}

inline RowMatrix decode_raw(std::span<const unsigned char> bytes, const std::string& source = "raw-f64") {
  binio::Reader r(bytes, source);
  r.expect_magic("DDL1");
  std::uint32_t n = r.u32(), d = r.u32();
  if (n == 0 || d == 0) throw FormatError(source + ": malformed header, zero size");
  std::size_t expect = std::size_t{n} * d;
  if (r.remaining() != expect * 8)
    throw FormatError(source + ": dimension mismatch, header says " + std::to_string(n) + "x" +
                      std::to_string(d) + " but payload holds " +
                      (r.remaining() % 8 == 0 ? std::to_string(r.remaining() / 8) + " values"
                                              : std::to_string(r.remaining()) + " bytes"));
  RowMatrix m(n, d);
  r.f64s(std::span(m.data(), expect));
  return m;
}

inline void write_raw(const std::filesystem::path& path, const RowMatrix& m) {
  binio::write_file(path, encode_raw(m));
}

inline RowMatrix read_raw(const std::filesystem::path& path) {
  return decode_raw(binio::read_file(path), path.string());
}

struct PgmImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // normalized to [-1, 1]
};

/// Binary (P5) PGM with maxval <= 255; pixel p maps to 2p/maxval - 1.
inline PgmImage decode_pgm(std::span<const unsigned char> bytes, const std::string& source) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* field) {
    skip_ws();
    long v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && v <= (1 << 24)) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start || v > 1 << 24)
      throw FormatError(source + ": malformed header, bad " + field);
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError(source + ": malformed header, not a binary PGM (P5)");
  pos = 2;
  PgmImage img;
  img.width = read_int("width");
  img.height = read_int("height");
  int maxval = read_int("maxval");
  if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 255)
    throw FormatError(source + ": malformed header, unsupported size or maxval");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw FormatError(source + ": malformed header");
  ++pos;
  std::size_t count = std::size_t(img.width) * img.height;
  if (bytes.size() - pos < count) throw FormatError(source + ": truncated pixel data");
  img.pixels.resize(count);
  const double scale = 2.0 / maxval;
  for (std::size_t i = 0; i < count; ++i) {
    unsigned p = bytes[pos + i];
    if (p > static_cast<unsigned>(maxval)) throw FormatError(source + ": pixel exceeds maxval");
    img.pixels[i] = p * scale - 1.0;
  }
  return img;
}

inline std::vector<unsigned char> encode_pgm(int width, int height, std::span<const unsigned char> pixels) {
  std::vector<unsigned char> buf;
  binio::put_bytes(buf, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n");
  buf.insert(buf.end(), pixels.begin(), pixels.end());
  return buf;
}

/// Loads every *.pgm in `dir` (sorted by filename) as one flattened sample.
inline DataMatrix load_pgm_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError(dir.string() + ": no .pgm files");
  RowMatrix m;
  int w = 0, h = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    PgmImage img = decode_pgm(binio::read_file(files[i]), files[i].string());
    if (i == 0) {
      w = img.width;
      h = img.height;
      m.resize(static_cast<Eigen::Index>(files.size()), Eigen::Index{w} * h);
    } else if (img.width != w || img.height != h) {
      throw FormatError(files[i].string() + ": dimension mismatch, " + std::to_string(img.width) +
                        "x" + std::to_string(img.height) + " vs " + std::to_string(w) + "x" +
                        std::to_string(h));
    }
    m.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(img.pixels.data(), m.cols());
  }
  return DataMatrix(std::move(m));
}

inline DataMatrix load_dataset(const std::filesystem::path& path, DataFormat format) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  switch (format) {
    case DataFormat::csv: {
      auto bytes = binio::read_file(path);
      return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                       path.string());
    }
    case DataFormat::raw_f64:
      return DataMatrix(read_raw(path));
    case DataFormat::pgm_dir:
      return load_pgm_dir(path);
  }
  throw InvalidArgument("unknown data format");
}

/// Mean plus thin SVD of the centered data scaled by 1/sqrt(N). Basis columns
/// are sign-normalized so the largest-magnitude entry is positive; eigenvalues
/// below 1e-12 * max are set to exactly zero.
/// Operates on any finite sample matrix (rows are samples); the DataMatrix
/// overload is the usual entry point.
inline GaussianStats empirical_stats(const RowMatrix& Y) {
  if (Y.rows() < 1 || Y.cols() < 1) throw InvalidArgument("empirical_stats needs a nonempty matrix");
  require_finite(Y, "dataset");
  const Eigen::Index n = Y.rows();
  GaussianStats s;
  s.mean = Y.colwise().mean().transpose();
  Matrix centered = (Y.rowwise() - s.mean.transpose()) / std::sqrt(static_cast<double>(n));
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Eigen::Index r = std::min(n, Y.cols());
  s.basis = svd.matrixV().leftCols(r);
  s.eigvals = svd.singularValues().head(r).array().square();
  const double top = r > 0 ? s.eigvals(0) : 0.0;
  for (Eigen::Index i = 0; i < r; ++i)
    if (!(s.eigvals(i) > 1e-12 * top)) s.eigvals(i) = 0.0;
  for (Eigen::Index j = 0; j < r; ++j) {
    Eigen::Index arg = 0;
    s.basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (s.basis(arg, j) < 0) s.basis.col(j) *= -1.0;
  }
  return s;
}

inline GaussianStats empirical_stats(const DataMatrix& X) { return empirical_stats(X.values()); }

/// Deterministic seeded split; first part has floor(fraction * N) rows.
inline std::pair<DataMatrix, DataMatrix> split_dataset(const DataMatrix& X, std::uint64_t seed,
                                                       double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw InvalidArgument("split fraction must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(X.n_samples());
  const auto first = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (first == 0 || first == n)
    throw InvalidArgument("split fraction " + std::to_string(fraction) + " leaves an empty part for N=" +
                          std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(rng);
    std::swap(perm[i], perm[j]);
  }
  auto gather = [&](std::size_t lo, std::size_t hi) {
    RowMatrix m(static_cast<Eigen::Index>(hi - lo), X.dim());
    for (std::size_t i = lo; i < hi; ++i)
      m.row(static_cast<Eigen::Index>(i - lo)) = X.values().row(static_cast<Eigen::Index>(perm[i]));
    return DataMatrix(std::move(m));
  };
  return {gather(0, first), gather(first, n)};
}

}  // namespace dkit
