#include "specalign/model/config.hpp"

#include "specalign/core/errors.hpp"

namespace specalign {

void ModelVariantConfig::validate() const {
  auto fail = [this](const std::string& what) {
    throw ConfigError("model config '" + name + "': " + what);
  };
  if (embed_dim <= 0) fail("embed_dim must be positive");
  if (depth <= 0) fail("depth must be positive");
  if (num_heads <= 0) fail("num_heads must be positive");
  if (embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (patch_size <= 0) fail("patch_size must be positive");
  if (image_size <= 0) fail("image_size must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (embed_dim % 4 != 0) fail("embed_dim must be divisible by 4 for the adapter bottleneck");
  if (adapter_bottleneck != embed_dim / 4) fail("adapter_bottleneck must equal embed_dim / 4");
  if (num_modalities != 4) fail("num_modalities must be 4");
  if (mlp_hidden() <= 0) fail("mlp hidden width must be positive");
}

ModelVariantConfig model_preset(std::string_view name) {
  auto make = [](std::string n, int d, int depth, int heads, int patch, int image) {
    ModelVariantConfig c;
    c.name = std::move(n);
    c.embed_dim = d;
    c.depth = depth;
    c.num_heads = heads;
    c.patch_size = patch;
    c.image_size = image;
    c.adapter_bottleneck = d / 4;
    return c;
  };
  if (name == "toy") return make("toy", 64, 4, 4, 8, 64);
  if (name == "vit-s") return make("vit-s", 384, 12, 6, 14, 224);
  if (name == "vit-b") return make("vit-b", 768, 12, 12, 14, 224);
  if (name == "vit-l") return make("vit-l", 1024, 24, 16, 14, 224);
  if (name == "vit-g") return make("vit-g", 1536, 40, 24, 14, 224);
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

std::vector<std::string> model_preset_names() { return {"toy", "vit-s", "vit-b", "vit-l", "vit-g"}; }

long long adapter_weight_count(int embed_dim) {
  return 2LL * embed_dim * (embed_dim / 4);
}

long long adapter_param_count(int embed_dim) {
  return adapter_weight_count(embed_dim) + embed_dim / 4 + embed_dim;
}

int adapter_instance_count(const ModelVariantConfig& cfg) { return cfg.depth * cfg.num_modalities; }

}  // namespace specalign
