#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specalign/core/modality.hpp"
#include "specalign/core/tensor.hpp"

namespace specalign {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };
std::string_view to_string(Split s);
Split parse_split(std::string_view name);

/// One scene seen as RGB and as one multispectral band.
struct PairedSample {
  std::shared_ptr<const Image> rgb;
  std::shared_ptr<const Image> ms;
  Modality modality = Modality::nir;
  std::uint64_t scene_id = 0;
  int label = 0;  // class of the largest shape
};

/// Paired samples of one split, grouped by multispectral modality.
struct PairedDataset {
  std::array<std::vector<PairedSample>, 3> by_modality;  // NIR, SWIR, LWIR

  std::vector<PairedSample>& of(Modality m);
  const std::vector<PairedSample>& of(Modality m) const;
  std::size_t total() const;
};

struct DatasetConfig {
  int n_scenes = 200;
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};  // train, val, test
  std::array<double, 3> modality_ratios{1.0, 1.0, 1.0};  // NIR, SWIR, LWIR coverage
  std::uint64_t seed = 0;
  int image_size = 64;

  void validate() const;
};

struct SceneEntry {
  std::uint64_t id = 0;
  Split split = Split::train;
  int label = 0;
  std::array<bool, 4> has{true, true, true, true};  // indexed by modality; rgb always present
};

/// Split and modality-coverage assignment for every scene; a pure function of the config.
struct DatasetPlan {
  DatasetConfig config;
  std::vector<SceneEntry> scenes;

  std::size_t count(Split s) const;
  std::size_t count(Modality m) const;
};

DatasetPlan plan_dataset(const DatasetConfig& config);

/// Renders one split directly into memory.
PairedDataset build_in_memory(const DatasetPlan& plan, Split split);

// ---------------------------------------------------------------- on-disk format

struct FileEntry {
  std::string path;  // relative to the dataset root
  std::uint64_t checksum = 0;
};

struct ManifestScene {
  SceneEntry entry;
  std::array<std::optional<FileEntry>, 4> files;
};

struct Manifest {
  DatasetConfig config;
  std::vector<ManifestScene> scenes;
};

/// Writes `manifest` and `scenes/<id>_<modality>` rasters under out_dir.
Manifest generate_dataset(const DatasetConfig& config, const std::string& out_dir);
Manifest read_manifest(const std::string& root);

/// Loads a split in manifest order. `only` restricts the multispectral modalities exposed.
/// Throws DataError naming the file on a missing file or checksum mismatch.
PairedDataset load_dataset(const std::string& root, Split split,
                           std::optional<std::vector<Modality>> only = std::nullopt);

/// Raster file: "SAIMAGE1", u32 channels, u32 height, u32 width, u32 dtype (1 = f32), pixels.
std::vector<std::uint8_t> encode_image(const Image& image);
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& context);

}  // namespace specalign
