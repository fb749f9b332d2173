#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "specalign/losses/losses.hpp"
#include "specalign/model/config.hpp"
#include "specalign/model/model.hpp"

namespace specalign {

enum class StageId : int { one = 1, two = 2, three = 3 };
inline constexpr std::array<StageId, 3> kAllStages{StageId::one, StageId::two, StageId::three};

/// "I", "II", "III".
std::string_view to_string(StageId s);
StageId parse_stage(std::string_view name);

struct StageConfig {
  StageId stage = StageId::one;
  LossWeights weights;
  int epochs = 1;
  double base_lr = 1e-4;
  int batch_size = 16;
  FreezeSpec freeze;
  int la_warmup_epochs = 0;  // epochs at the start of the stage during which lambda_A is applied as 0
  double warmup_fraction = 0.0;
  double weight_decay = 0.05;
  std::size_t queue_capacity = kPresetQueueCapacity;
  /// Terms switched off for an ablation run; a disabled term is absent from every report.
  TermMask disabled{};
  std::optional<std::string> resume_from;

  bool uses_neighborhood() const;
  /// Throws ConfigError when the freezing or loss setup contradicts the stage.
  void validate(const ModelVariantConfig& model) const;
};

struct VariantPreset {
  ModelVariantConfig model;
  std::array<StageConfig, 3> stages;

  const StageConfig& stage(StageId s) const { return stages[static_cast<std::size_t>(s) - 1]; }
  StageConfig& stage(StageId s) { return stages[static_cast<std::size_t>(s) - 1]; }
};

/// "toy", "vit-s", "vit-b", "vit-l" or "vit-g".
VariantPreset variant_preset(std::string_view name);

nlohmann::json to_json(const StageConfig& cfg);
/// Applies the keys present in `overrides` to `cfg`. Unknown keys are ConfigErrors.
void apply_overrides(StageConfig& cfg, const nlohmann::json& overrides);

}  // namespace specalign
