#pragma once

// Little-endian primitives shared by the container, checkpoint and plugin
// formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkit/error.hpp"

namespace dkit::binio {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f64(std::vector<unsigned char>& buf, double v) {
  put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

inline void put_bytes(std::vector<unsigned char>& buf, std::string_view s) {
  buf.insert(buf.end(), s.begin(), s.end());
}

inline void put_f64s(std::vector<unsigned char>& buf, std::span<const double> values) {
  buf.reserve(buf.size() + 8 * values.size());
  for (double v : values) put_f64(buf, v);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline double get_f64(const unsigned char* p) { return std::bit_cast<double>(get_u64(p)); }

inline void get_f64s(const unsigned char* p, std::span<double> out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), p, out.size() * sizeof(double));
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_f64(p + 8 * i);
  }
}

// Sequential reader over an in-memory byte buffer; every overrun is a
// FormatError naming `what`.
class Reader {
 public:
  Reader(std::span<const unsigned char> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    auto v = get_u32(data_.data() + pos_);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    double v = get_f64(data_.data() + pos_);
    pos_ += 8;
    return v;
  }
  void f64s(std::span<double> out) {
    need(8 * out.size());
    get_f64s(data_.data() + pos_, out);
    pos_ += 8 * out.size();
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0)
      throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated payload");
  }
  std::span<const unsigned char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};


inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

}  // namespace dkit::binio
