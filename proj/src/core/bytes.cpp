#include "specalign/core/bytes.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "specalign/core/errors.hpp"

namespace specalign {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t checksum(const Mat& m, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(m.data()[i]);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int k = 0; k < 8; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::matrix(const Mat& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) {
    throw CheckpointError(context_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", " + std::to_string(bytes_.size() - pos_) +
                          " remain)");
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_ + k]) << (8 * k);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes_[pos_ + k]) << (8 * k);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_magic(std::string_view tag) {
  auto got = raw(tag.size());
  if (!std::equal(got.begin(), got.end(), tag.begin())) {
    throw CheckpointError(context_ + ": bad magic, expected '" + std::string(tag) + "'");
  }
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  auto b = raw(n);
  return std::string(b.begin(), b.end());
}

Mat ByteReader::matrix() {
  const std::uint64_t rows = u64();
  const std::uint64_t cols = u64();
  if (rows > (1ULL << 32) || cols > (1ULL << 32) || rows * cols * 8 > remaining()) {
    throw CheckpointError(context_ + ": matrix of " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " exceeds the remaining payload");
  }
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  return m;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return bytes;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace specalign
