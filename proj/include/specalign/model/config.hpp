#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace specalign {

/// Shape of a ViT backbone plus its adapter extension.
struct ModelVariantConfig {
  std::string name;
  int embed_dim = 0;
  int depth = 0;
  int num_heads = 0;
  double mlp_ratio = 4.0;
  int patch_size = 0;
  int image_size = 0;
  int adapter_bottleneck = 0;
  int num_modalities = 4;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int num_tokens() const { return num_patches() + 1; }
  int head_dim() const { return embed_dim / num_heads; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

  bool operator==(const ModelVariantConfig&) const = default;
};

/// Known presets: "toy", "vit-s", "vit-b", "vit-l", "vit-g".
ModelVariantConfig model_preset(std::string_view name);
std::vector<std::string> model_preset_names();

/// Weight count of one adapter, biases excluded: 2 * D * (D / 4).
long long adapter_weight_count(int embed_dim);
/// Weight count of one adapter including both bias vectors.
long long adapter_param_count(int embed_dim);
/// depth x num_modalities.
int adapter_instance_count(const ModelVariantConfig& cfg);

}  // namespace specalign
