#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace specalign {

/// Versioned container of named, individually checksummed segments. Layout in
/// docs/formats.md.
class CheckpointContainer {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(std::string name, std::vector<std::uint8_t> bytes);
  bool has(const std::string& name) const;
  /// Throws CheckpointError naming the segment when it is absent.
  std::span<const std::uint8_t> get(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& segments() const { return segments_; }

  std::vector<std::uint8_t> encode() const;
  /// Throws CheckpointError on bad magic, version mismatch, truncation or a checksum failure.
  static CheckpointContainer decode(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint");

  void save(const std::string& path) const;
  static CheckpointContainer load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> segments_;
};

}  // namespace specalign
