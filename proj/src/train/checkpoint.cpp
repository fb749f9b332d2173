#include "specalign/train/checkpoint.hpp"

#include <algorithm>

#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"

namespace specalign {

namespace {
constexpr std::string_view kMagic = "SACKPT\r\n";
}

void CheckpointContainer::add(std::string name, std::vector<std::uint8_t> bytes) {
  if (has(name)) throw CheckpointError("duplicate checkpoint segment '" + name + "'");
  segments_.emplace_back(std::move(name), std::move(bytes));
}

bool CheckpointContainer::has(const std::string& name) const {
  return std::any_of(segments_.begin(), segments_.end(), [&name](const auto& s) { return s.first == name; });
}

std::span<const std::uint8_t> CheckpointContainer::get(const std::string& name) const {
  for (const auto& [n, bytes] : segments_) {
    if (n == name) return bytes;
  }
  throw CheckpointError("checkpoint has no '" + name + "' segment");
}

std::vector<std::string> CheckpointContainer::names() const {
  std::vector<std::string> out;
  for (const auto& s : segments_) out.push_back(s.first);
  return out;
}

std::vector<std::uint8_t> CheckpointContainer::encode() const {
  ByteWriter w;
  w.magic(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(segments_.size()));
  for (const auto& [name, bytes] : segments_) {
    w.str(name);
    w.u64(bytes.size());
    w.raw(bytes);
    w.u64(fnv1a64(bytes));
  }
  const std::uint64_t total = fnv1a64(w.bytes());
  w.u64(total);
  return w.take();
}

CheckpointContainer CheckpointContainer::decode(std::span<const std::uint8_t> bytes, const std::string& context) {
  if (bytes.size() < kMagic.size() + 16) throw CheckpointError(context + ": truncated (" + std::to_string(bytes.size()) + " bytes)");
  ByteReader r(bytes, context);
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError(context + ": container version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kVersion) + ")");
  }
  const std::uint64_t stored_total = [&] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    return v;
  }();
  if (fnv1a64(bytes.first(bytes.size() - 8)) != stored_total) {
    throw CheckpointError(context + ": whole-file checksum mismatch (truncated or corrupted)");
  }
  CheckpointContainer c;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw CheckpointError(context + ": segment '" + name + "' is truncated");
    auto payload = r.raw(static_cast<std::size_t>(len));
    const std::uint64_t sum = r.u64();
    if (fnv1a64(payload) != sum) throw CheckpointError(context + ": checksum mismatch in segment '" + name + "'");
    c.add(std::move(name), std::vector<std::uint8_t>(payload.begin(), payload.end()));
  }
  r.u64();
  if (!r.done()) throw CheckpointError(context + ": trailing bytes after the last segment");
  return c;
}

void CheckpointContainer::save(const std::string& path) const {
  const auto bytes = encode();
  write_file_atomic(path, bytes);
}

CheckpointContainer CheckpointContainer::load(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw CheckpointError(std::string("cannot read checkpoint: ") + e.what());
  }
  return decode(bytes, path);
}

}  // namespace specalign
