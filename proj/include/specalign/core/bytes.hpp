#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "specalign/core/tensor.hpp"

namespace specalign {

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
/// Checksum over the little-endian IEEE-754 bytes of the matrix in row-major order.
std::uint64_t checksum(const Mat& m, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }
  /// u32 length followed by the bytes.
  void str(std::string_view s);
  /// u64 rows, u64 cols, then rows*cols f64.
  void matrix(const Mat& m);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source; every read past the end throws CheckpointError naming `context`.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::span<const std::uint8_t> raw(std::size_t n);
  /// Reads tag.size() bytes and throws unless they equal tag.
  void expect_magic(std::string_view tag);
  std::string str();
  Mat matrix();

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
/// Writes to `path.tmp` and renames over `path`.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace specalign
