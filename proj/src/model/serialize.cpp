#include "specalign/model/serialize.hpp"

#include <map>

#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"

namespace specalign {

namespace {

constexpr std::string_view kModelMagic = "SAMODEL1";
constexpr std::string_view kTeacherMagic = "SATEACH1";
constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::string group;
  const Param* param;
};

void write_params(ByteWriter& w, const std::vector<Entry>& entries) {
  w.u64(entries.size());
  std::map<std::string, std::uint64_t> sums;
  std::vector<std::string> order;
  for (const Entry& e : entries) {
    w.str(e.group);
    w.str(e.param->name);
    w.matrix(e.param->value);
    auto it = sums.find(e.group);
    if (it == sums.end()) {
      order.push_back(e.group);
      it = sums.emplace(e.group, 0xcbf29ce484222325ULL).first;
    }
    it->second = checksum(e.param->value, it->second);
  }
  w.u64(order.size());
  for (const std::string& g : order) {
    w.str(g);
    w.u64(sums[g]);
  }
}

// Reads tensors into the already-built parameters in visiting order.
void read_params(ByteReader& r, const std::vector<std::pair<std::string, Param*>>& targets) {
  const std::uint64_t n = r.u64();
  if (n != targets.size()) {
    throw CheckpointError(r.context() + ": expected " + std::to_string(targets.size()) + " tensors, found " +
                          std::to_string(n));
  }
  std::map<std::string, std::uint64_t> sums;
  for (const auto& [group, param] : targets) {
    const std::string g = r.str();
    const std::string name = r.str();
    if (g != group || name != param->name) {
      throw CheckpointError(r.context() + ": expected tensor '" + param->name + "', found '" + name + "'");
    }
    Mat value = r.matrix();
    if (value.rows() != param->value.rows() || value.cols() != param->value.cols()) {
      throw CheckpointError(r.context() + ": tensor '" + name + "' has shape " + std::to_string(value.rows()) + "x" +
                            std::to_string(value.cols()) + ", expected " + std::to_string(param->value.rows()) +
                            "x" + std::to_string(param->value.cols()));
    }
    param->value = std::move(value);
    auto it = sums.emplace(g, 0xcbf29ce484222325ULL).first;
    it->second = checksum(param->value, it->second);
  }
  const std::uint64_t groups = r.u64();
  if (groups != sums.size()) throw CheckpointError(r.context() + ": group checksum table has the wrong length");
  for (std::uint64_t i = 0; i < groups; ++i) {
    const std::string g = r.str();
    const std::uint64_t stored = r.u64();
    auto it = sums.find(g);
    if (it == sums.end()) throw CheckpointError(r.context() + ": unknown group '" + g + "' in checksum table");
    if (it->second != stored) throw CheckpointError(r.context() + ": checksum mismatch in group '" + g + "'");
  }
}

}  // namespace

void write_config(ByteWriter& w, const ModelVariantConfig& cfg) {
  w.str(cfg.name);
  w.u32(static_cast<std::uint32_t>(cfg.embed_dim));
  w.u32(static_cast<std::uint32_t>(cfg.depth));
  w.u32(static_cast<std::uint32_t>(cfg.num_heads));
  w.f64(cfg.mlp_ratio);
  w.u32(static_cast<std::uint32_t>(cfg.patch_size));
  w.u32(static_cast<std::uint32_t>(cfg.image_size));
  w.u32(static_cast<std::uint32_t>(cfg.adapter_bottleneck));
  w.u32(static_cast<std::uint32_t>(cfg.num_modalities));
}

ModelVariantConfig read_config(ByteReader& r) {
  ModelVariantConfig cfg;
  cfg.name = r.str();
  cfg.embed_dim = static_cast<int>(r.u32());
  cfg.depth = static_cast<int>(r.u32());
  cfg.num_heads = static_cast<int>(r.u32());
  cfg.mlp_ratio = r.f64();
  cfg.patch_size = static_cast<int>(r.u32());
  cfg.image_size = static_cast<int>(r.u32());
  cfg.adapter_bottleneck = static_cast<int>(r.u32());
  cfg.num_modalities = static_cast<int>(r.u32());
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(r.context() + ": stored config is invalid: " + e.what());
  }
  return cfg;
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  ByteWriter w;
  w.magic(kModelMagic);
  w.u32(kVersion);
  write_config(w, model.config());
  std::vector<Entry> entries;
  model.for_each_param(ConstParamVisitor([&entries](const std::string& g, const Param& p) { entries.push_back({g, &p}); }));
  write_params(w, entries);
  return w.take();
}

Model decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "model segment");
  r.expect_magic(kModelMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw CheckpointError("model segment: unsupported version " + std::to_string(version));
  const ModelVariantConfig cfg = read_config(r);
  Model model = build_model(cfg, 0);
  std::vector<std::pair<std::string, Param*>> targets;
  model.for_each_param(ParamVisitor([&targets](const std::string& g, Param& p) { targets.emplace_back(g, &p); }));
  read_params(r, targets);
  if (!r.done()) throw CheckpointError("model segment: trailing bytes");
  return model;
}

std::vector<std::uint8_t> encode_teacher(const Teacher& teacher) {
  ByteWriter w;
  w.magic(kTeacherMagic);
  w.u32(kVersion);
  write_config(w, teacher.config());
  std::vector<Entry> entries;
  teacher.for_each_param(ConstParamVisitor([&entries](const std::string& g, const Param& p) { entries.push_back({g, &p}); }));
  write_params(w, entries);
  return w.take();
}

Teacher decode_teacher(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "teacher segment");
  r.expect_magic(kTeacherMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw CheckpointError("teacher segment: unsupported version " + std::to_string(version));
  const ModelVariantConfig cfg = read_config(r);
  Teacher teacher = make_teacher(build_model(cfg, 0));
  std::vector<std::pair<std::string, Param*>> targets;
  teacher.for_each_param(ParamVisitor([&targets](const std::string& g, Param& p) { targets.emplace_back(g, &p); }));
  read_params(r, targets);
  if (!r.done()) throw CheckpointError("teacher segment: trailing bytes");
  return teacher;
}

}  // namespace specalign
