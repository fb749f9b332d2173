#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "specalign/core/bytes.hpp"
#include "specalign/model/model.hpp"

namespace specalign {

/// Checkpoint segment "model": config echo, every parameter tensor in visiting order,
/// then one checksum per parameter group. Layout in docs/formats.md.
std::vector<std::uint8_t> encode_model(const Model& model);
/// Throws CheckpointError on a bad magic, version, name, shape or checksum.
Model decode_model(std::span<const std::uint8_t> bytes);

/// Segment "teacher": same layout restricted to the backbone groups.
std::vector<std::uint8_t> encode_teacher(const Teacher& teacher);
Teacher decode_teacher(std::span<const std::uint8_t> bytes);

void write_config(ByteWriter& w, const ModelVariantConfig& cfg);
ModelVariantConfig read_config(ByteReader& r);

}  // namespace specalign
