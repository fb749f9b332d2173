#include "specalign/train/stage_config.hpp"

#include <set>

#include "specalign/core/errors.hpp"

namespace specalign {

using nlohmann::json;

namespace {

constexpr double kStageOneWarmup = 0.05;

struct VariantRow {
  const char* name;
  int epochs1, epochs2, epochs3;
  double lr1, lr2, lr3;
  int bs1, bs2, bs3;
  int unfrozen;
  std::size_t queue;
};

// Toy learning rates and batch size are desk-scale choices; the ViT rows are the
// reference per-variant training parameters.
constexpr VariantRow kRows[] = {
    {"toy", 8, 2, 6, 1e-3, 1e-3, 5e-4, 16, 16, 16, 2, kToyQueueCapacity},
    {"vit-s", 100, 10, 75, 1e-4, 1e-4, 5e-5, 128, 128, 128, 6, kPresetQueueCapacity},
    {"vit-b", 100, 10, 75, 1e-4, 1e-4, 4e-5, 128, 128, 128, 6, kPresetQueueCapacity},
    {"vit-l", 100, 10, 75, 8e-5, 8e-5, 3e-5, 64, 64, 64, 12, kPresetQueueCapacity},
    {"vit-g", 50, 10, 30, 5e-5, 5e-5, 2e-5, 24, 24, 16, 10, kPresetQueueCapacity},
};

StageConfig make_stage(StageId id, int epochs, double lr, int bs, int unfrozen, std::size_t queue) {
  StageConfig s;
  s.stage = id;
  s.epochs = epochs;
  s.base_lr = lr;
  s.batch_size = bs;
  s.queue_capacity = queue;
  switch (id) {
    case StageId::one:
      s.weights = LossWeights::stage_one();
      s.warmup_fraction = kStageOneWarmup;
      break;
    case StageId::two:
      s.weights = LossWeights::stage_two();
      s.la_warmup_epochs = 1;
      break;
    case StageId::three:
      s.weights = LossWeights::stage_three();
      s.freeze.unfrozen_blocks = unfrozen;
      break;
  }
  return s;
}

}  // namespace

std::string_view to_string(StageId s) {
  switch (s) {
    case StageId::one:
      return "I";
    case StageId::two:
      return "II";
    case StageId::three:
      return "III";
  }
  return "?";
}

StageId parse_stage(std::string_view name) {
  if (name == "I" || name == "1") return StageId::one;
  if (name == "II" || name == "2") return StageId::two;
  if (name == "III" || name == "3") return StageId::three;
  throw ConfigError("unknown stage '" + std::string(name) + "' (expected I, II or III)");
}

bool StageConfig::uses_neighborhood() const {
  return weights.neighborhood.has_value() && !disabled[static_cast<std::size_t>(LossTerm::neighborhood)];
}

void StageConfig::validate(const ModelVariantConfig& model) const {
  const std::string tag = "stage " + std::string(to_string(stage));
  weights.validate();
  if (epochs < 0) throw ConfigError(tag + ": epochs must be non-negative");
  if (!(base_lr > 0.0)) throw ConfigError(tag + ": base_lr must be positive");
  if (batch_size <= 0) throw ConfigError(tag + ": batch_size must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError(tag + ": warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError(tag + ": weight_decay must be non-negative");
  if (la_warmup_epochs < 0) throw ConfigError(tag + ": la_warmup_epochs must be non-negative");
  if (freeze.unfrozen_blocks < 0 || freeze.unfrozen_blocks > model.depth) {
    throw ConfigError(tag + ": unfrozen_blocks=" + std::to_string(freeze.unfrozen_blocks) + " outside [0, " +
                      std::to_string(model.depth) + "]");
  }
  if (freeze.stems[0]) throw ConfigError(tag + ": the RGB stem stays frozen");
  if (weights.neighborhood && queue_capacity == 0) throw ConfigError(tag + ": queue_capacity must be positive");
  switch (stage) {
    case StageId::one:
      if (weights.neighborhood) throw ConfigError(tag + ": the neighborhood term is disabled in stage I");
      if (freeze.unfrozen_blocks != 0) throw ConfigError(tag + ": the backbone is frozen in stage I");
      break;
    case StageId::two:
      if (!weights.neighborhood) throw ConfigError(tag + ": stage II needs a neighborhood weight");
      if (freeze.unfrozen_blocks != 0) throw ConfigError(tag + ": the backbone is frozen in stage II");
      if (warmup_fraction != 0.0) throw ConfigError(tag + ": stage II resumes without warmup");
      break;
    case StageId::three:
      if (!weights.neighborhood) throw ConfigError(tag + ": stage III needs a neighborhood weight");
      if (warmup_fraction != 0.0) throw ConfigError(tag + ": stage III resumes without warmup");
      break;
  }
}

VariantPreset variant_preset(std::string_view name) {
  for (const VariantRow& r : kRows) {
    if (name != r.name) continue;
    VariantPreset p;
    p.model = model_preset(name);
    p.stages[0] = make_stage(StageId::one, r.epochs1, r.lr1, r.bs1, r.unfrozen, r.queue);
    p.stages[1] = make_stage(StageId::two, r.epochs2, r.lr2, r.bs2, r.unfrozen, r.queue);
    p.stages[2] = make_stage(StageId::three, r.epochs3, r.lr3, r.bs3, r.unfrozen, r.queue);
    return p;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected toy, vit-s, vit-b, vit-l or vit-g)");
}

json to_json(const StageConfig& cfg) {
  json disabled = json::array();
  for (LossTerm t : kAllLossTerms) {
    if (cfg.disabled[static_cast<std::size_t>(t)]) disabled.push_back(std::string(to_string(t)));
  }
  json j = {{"stage", std::string(to_string(cfg.stage))},
            {"epochs", cfg.epochs},
            {"base_lr", cfg.base_lr},
            {"batch_size", cfg.batch_size},
            {"warmup_fraction", cfg.warmup_fraction},
            {"weight_decay", cfg.weight_decay},
            {"la_warmup_epochs", cfg.la_warmup_epochs},
            {"queue_capacity", cfg.queue_capacity},
            {"lambda_distill", cfg.weights.distill},
            {"lambda_contrast", cfg.weights.contrast},
            {"lambda_patch", cfg.weights.patch},
            {"lambda_neighborhood", cfg.weights.neighborhood ? json(*cfg.weights.neighborhood) : json(nullptr)},
            {"tau", cfg.weights.tau},
            {"patch_sample_ratio", cfg.weights.patch_sample_ratio},
            {"top_k", cfg.weights.top_k},
            {"unfrozen_blocks", cfg.freeze.unfrozen_blocks},
            {"disabled_losses", disabled}};
  if (cfg.resume_from) j["resume_from"] = *cfg.resume_from;
  return j;
}

void apply_overrides(StageConfig& cfg, const json& o) {
  if (!o.is_object()) throw ConfigError("stage overrides must be an object");
  static const std::set<std::string> kKeys{
      "epochs",         "base_lr",         "batch_size",        "warmup_fraction",    "weight_decay",
      "la_warmup_epochs", "queue_capacity", "lambda_distill",    "lambda_contrast",    "lambda_patch",
      "lambda_neighborhood", "tau",        "patch_sample_ratio", "top_k",             "unfrozen_blocks",
      "disabled_losses", "resume_from"};
  for (const auto& [key, value] : o.items()) {
    if (!kKeys.count(key)) throw ConfigError("unknown stage key '" + key + "'");
  }
  try {
    if (o.contains("epochs")) cfg.epochs = o.at("epochs").get<int>();
    if (o.contains("base_lr")) cfg.base_lr = o.at("base_lr").get<double>();
    if (o.contains("batch_size")) cfg.batch_size = o.at("batch_size").get<int>();
    if (o.contains("warmup_fraction")) cfg.warmup_fraction = o.at("warmup_fraction").get<double>();
    if (o.contains("weight_decay")) cfg.weight_decay = o.at("weight_decay").get<double>();
    if (o.contains("la_warmup_epochs")) cfg.la_warmup_epochs = o.at("la_warmup_epochs").get<int>();
    if (o.contains("queue_capacity")) cfg.queue_capacity = o.at("queue_capacity").get<std::size_t>();
    if (o.contains("lambda_distill")) cfg.weights.distill = o.at("lambda_distill").get<double>();
    if (o.contains("lambda_contrast")) cfg.weights.contrast = o.at("lambda_contrast").get<double>();
    if (o.contains("lambda_patch")) cfg.weights.patch = o.at("lambda_patch").get<double>();
    if (o.contains("lambda_neighborhood")) {
      const auto& v = o.at("lambda_neighborhood");
      cfg.weights.neighborhood = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    if (o.contains("tau")) cfg.weights.tau = o.at("tau").get<double>();
    if (o.contains("patch_sample_ratio")) cfg.weights.patch_sample_ratio = o.at("patch_sample_ratio").get<double>();
    if (o.contains("top_k")) cfg.weights.top_k = o.at("top_k").get<int>();
    if (o.contains("unfrozen_blocks")) cfg.freeze.unfrozen_blocks = o.at("unfrozen_blocks").get<int>();
    if (o.contains("disabled_losses")) {
      cfg.disabled = {};
      for (const auto& name : o.at("disabled_losses")) {
        cfg.disabled[static_cast<std::size_t>(parse_loss_term(name.get<std::string>()))] = true;
      }
    }
    if (o.contains("resume_from")) cfg.resume_from = o.at("resume_from").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad stage override: ") + e.what());
  }
}

}  // namespace specalign
