#include "specalign/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include "json.hpp"
#include <numeric>

#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"
#include "specalign/core/random.hpp"
#include "specalign/data/render.hpp"
#include "specalign/data/scene.hpp"

namespace specalign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kImageMagic = "SAIMAGE1";
constexpr std::uint32_t kDtypeF32 = 1;
constexpr int kManifestVersion = 1;

std::string scene_file(std::uint64_t id, Modality m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(id));
  return "scenes/" + std::string(buf) + "_" + std::string(to_string(m));
}

std::size_t ms_slot(Modality m) {
  if (m == Modality::rgb) throw RoutingError("paired datasets hold multispectral modalities only");
  return static_cast<std::size_t>(index_of(m) - 1);
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::train, Split::val, Split::test}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::vector<PairedSample>& PairedDataset::of(Modality m) { return by_modality[ms_slot(m)]; }
const std::vector<PairedSample>& PairedDataset::of(Modality m) const { return by_modality[ms_slot(m)]; }

std::size_t PairedDataset::total() const {
  return by_modality[0].size() + by_modality[1].size() + by_modality[2].size();
}

void DatasetConfig::validate() const {
  if (n_scenes <= 0) throw ConfigError("n_scenes must be positive");
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
  double sum = 0.0;
  for (double f : split_fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (double r : modality_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("modality ratios must lie in [0, 1]");
  }
}

std::size_t DatasetPlan::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(scenes.begin(), scenes.end(), [s](const SceneEntry& e) { return e.split == s; }));
}

std::size_t DatasetPlan::count(Modality m) const {
  return static_cast<std::size_t>(std::count_if(
      scenes.begin(), scenes.end(), [m](const SceneEntry& e) { return e.has[static_cast<std::size_t>(index_of(m))]; }));
}

DatasetPlan plan_dataset(const DatasetConfig& config) {
  config.validate();
  DatasetPlan plan;
  plan.config = config;
  const auto n = static_cast<std::size_t>(config.n_scenes);

  // Seeded permutation of ids; the first block is train, then val, then test.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(mix_seed(config.seed, 0x5011750000ULL));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[split_rng.index(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(config.split_fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(config.split_fractions[1] * static_cast<double>(n))));

  plan.scenes.resize(n);
  for (std::size_t id = 0; id < n; ++id) {
    SceneEntry& e = plan.scenes[id];
    e.id = id;
    e.label = random_scene(id, config.seed, config.image_size).dominant_label();
  }
  for (std::size_t rank = 0; rank < n; ++rank) {
    plan.scenes[order[rank]].split = rank < n_train ? Split::train : (rank < n_train + n_val ? Split::val : Split::test);
  }

  // Coverage: the first floor(ratio * n) scenes of an independent permutation per band.
  for (Modality m : kSpectralModalities) {
    const std::size_t slot = static_cast<std::size_t>(index_of(m));
    const auto keep = static_cast<std::size_t>(std::floor(config.modality_ratios[slot - 1] * static_cast<double>(n) + 1e-9));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng cover_rng(mix_seed(config.seed, 0xc0be000000ULL + slot));
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[cover_rng.index(i)]);
    for (std::size_t rank = 0; rank < n; ++rank) plan.scenes[perm[rank]].has[slot] = rank < keep;
  }
  return plan;
}

PairedDataset build_in_memory(const DatasetPlan& plan, Split split) {
  PairedDataset out;
  const int size = plan.config.image_size;
  for (const SceneEntry& e : plan.scenes) {
    if (e.split != split) continue;
    const SceneSpec spec = random_scene(e.id, plan.config.seed, size);
    auto rgb = std::make_shared<const Image>(render_scene(spec, Modality::rgb, size));
    for (Modality m : kSpectralModalities) {
      if (!e.has[static_cast<std::size_t>(index_of(m))]) continue;
      PairedSample s;
      s.rgb = rgb;
      s.ms = std::make_shared<const Image>(render_scene(spec, m, size));
      s.modality = m;
      s.scene_id = e.id;
      s.label = e.label;
      out.of(m).push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------- raster codec

std::vector<std::uint8_t> encode_image(const Image& image) {
  ByteWriter w;
  w.magic(kImageMagic);
  w.u32(static_cast<std::uint32_t>(image.channels));
  w.u32(static_cast<std::uint32_t>(image.height));
  w.u32(static_cast<std::uint32_t>(image.width));
  w.u32(kDtypeF32);
  for (float v : image.pixels) w.f32(v);
  return w.take();
}

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& context) {
  try {
    ByteReader r(bytes, context);
    r.expect_magic(kImageMagic);
    const auto c = static_cast<int>(r.u32());
    const auto h = static_cast<int>(r.u32());
    const auto w = static_cast<int>(r.u32());
    if (r.u32() != kDtypeF32) throw DataError(context + ": unsupported dtype");
    if (c <= 0 || h <= 0 || w <= 0 || r.remaining() != static_cast<std::size_t>(c) * h * w * 4) {
      throw DataError(context + ": header does not match payload size");
    }
    Image img(c, h, w);
    for (float& v : img.pixels) v = r.f32();
    return img;
  } catch (const CheckpointError& e) {
    throw DataError(e.what());
  }
}

// ---------------------------------------------------------------- manifest

Manifest generate_dataset(const DatasetConfig& config, const std::string& out_dir) {
  const DatasetPlan plan = plan_dataset(config);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "scenes", ec);
  if (ec) throw IoError("cannot create dataset directory '" + out_dir + "/scenes': " + ec.message());

  Manifest manifest;
  manifest.config = config;
  json header = {{"kind", "header"},
                 {"format", "specalign-dataset"},
                 {"version", kManifestVersion},
                 {"n_scenes", config.n_scenes},
                 {"seed", config.seed},
                 {"image_size", config.image_size},
                 {"split_fractions", config.split_fractions},
                 {"modality_ratios", config.modality_ratios},
                 {"num_classes", kNumShapeClasses}};
  std::string text = header.dump() + "\n";

  for (const SceneEntry& e : plan.scenes) {
    const SceneSpec spec = random_scene(e.id, config.seed, config.image_size);
    ManifestScene ms;
    ms.entry = e;
    json files = json::object();
    for (Modality m : kAllModalities) {
      if (!e.has[static_cast<std::size_t>(index_of(m))]) continue;
      const std::string rel = scene_file(e.id, m);
      const auto bytes = encode_image(render_scene(spec, m, config.image_size));
      write_file_atomic((fs::path(out_dir) / rel).string(), bytes);
      FileEntry fe{rel, fnv1a64(bytes)};
      files[std::string(to_string(m))] = {{"path", fe.path}, {"fnv1a64", to_hex(fe.checksum)}};
      ms.files[static_cast<std::size_t>(index_of(m))] = fe;
    }
    json line = {{"kind", "scene"},
                 {"id", e.id},
                 {"split", std::string(to_string(e.split))},
                 {"label", e.label},
                 {"files", files}};
    text += line.dump() + "\n";
    manifest.scenes.push_back(std::move(ms));
  }
  const std::string path = (fs::path(out_dir) / "manifest").string();
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return manifest;
}

Manifest read_manifest(const std::string& root) {
  const std::string path = (fs::path(root) / "manifest").string();
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest '" + path + "'");
  Manifest manifest;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (j.at("kind") == "header") {
        if (j.at("version").get<int>() != kManifestVersion) throw DataError(path + ": unsupported manifest version");
        manifest.config.n_scenes = j.at("n_scenes").get<int>();
        manifest.config.seed = j.at("seed").get<std::uint64_t>();
        manifest.config.image_size = j.at("image_size").get<int>();
        manifest.config.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
        manifest.config.modality_ratios = j.at("modality_ratios").get<std::array<double, 3>>();
        have_header = true;
        continue;
      }
      ManifestScene ms;
      ms.entry.id = j.at("id").get<std::uint64_t>();
      ms.entry.split = parse_split(j.at("split").get<std::string>());
      ms.entry.label = j.at("label").get<int>();
      for (Modality m : kAllModalities) {
        const auto slot = static_cast<std::size_t>(index_of(m));
        const auto& files = j.at("files");
        const std::string key(to_string(m));
        ms.entry.has[slot] = files.contains(key);
        if (!ms.entry.has[slot]) continue;
        FileEntry fe;
        fe.path = files.at(key).at("path").get<std::string>();
        fe.checksum = std::stoull(files.at(key).at("fnv1a64").get<std::string>(), nullptr, 16);
        ms.files[slot] = fe;
      }
      manifest.scenes.push_back(std::move(ms));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError(path + ": missing header line");
  return manifest;
}

PairedDataset load_dataset(const std::string& root, Split split, std::optional<std::vector<Modality>> only) {
  const Manifest manifest = read_manifest(root);
  auto load = [&root](const FileEntry& fe) {
    const std::string full = (fs::path(root) / fe.path).string();
    if (!fs::exists(full)) throw DataError("missing dataset file '" + full + "'");
    const auto bytes = read_file(full);
    if (fnv1a64(bytes) != fe.checksum) throw DataError("checksum mismatch for dataset file '" + full + "'");
    return std::make_shared<const Image>(decode_image(bytes, full));
  };
  auto wanted = [&only](Modality m) {
    return !only || std::find(only->begin(), only->end(), m) != only->end();
  };

  PairedDataset out;
  for (const ManifestScene& ms : manifest.scenes) {
    if (ms.entry.split != split) continue;
    const auto& rgb_entry = ms.files[static_cast<std::size_t>(index_of(Modality::rgb))];
    if (!rgb_entry) throw DataError("scene " + std::to_string(ms.entry.id) + " has no rgb file");
    std::shared_ptr<const Image> rgb;
    for (Modality m : kSpectralModalities) {
      const auto& fe = ms.files[static_cast<std::size_t>(index_of(m))];
      if (!fe || !wanted(m)) continue;
      if (!rgb) rgb = load(*rgb_entry);
      PairedSample s;
      s.rgb = rgb;
      s.ms = load(*fe);
      s.modality = m;
      s.scene_id = ms.entry.id;
      s.label = ms.entry.label;
      out.of(m).push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace specalign
