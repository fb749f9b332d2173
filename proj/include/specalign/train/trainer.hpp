#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "specalign/data/dataset.hpp"
#include "specalign/eval/alignment.hpp"
#include "specalign/losses/losses.hpp"
#include "specalign/model/model.hpp"
#include "specalign/queue/memory_queue.hpp"
#include "specalign/train/checkpoint.hpp"
#include "specalign/train/optimizer.hpp"
#include "specalign/train/sampler.hpp"
#include "specalign/train/stage_config.hpp"

namespace specalign {

/// Best validation result seen so far in the current stage.
struct BestRecord {
  bool valid = false;
  double mean_top1 = 0.0;
  double val_loss = 0.0;
  long long epoch = -1;

  /// Higher mean top-1 wins; ties go to the lower validation loss.
  bool improved_by(double top1, double loss) const;
};

/// Teacher CLS per RGB image. The teacher never trains, so each image is embedded once;
/// the rows are dropped whenever the teacher's checksum differs from the one they came from.
class TeacherCache {
 public:
  void sync(const Teacher& teacher);
  const RowVec& cls(const Teacher& teacher, const std::shared_ptr<const Image>& rgb);

 private:
  std::optional<std::uint64_t> checksum_;
  // The stored pointer keeps the image alive, so its address cannot be reused by another.
  std::unordered_map<const Image*, std::pair<std::shared_ptr<const Image>, RowVec>> rows_;
};

struct TrainState {
  Model model;
  Teacher teacher;
  AdamW optimizer;
  std::optional<MemoryQueue> queue;
  RoundRobinSampler sampler;
  Rng rng;
  std::string variant;
  std::uint64_t seed = 0;

  StageId stage = StageId::one;
  bool stage_started = false;
  bool stage_finished = false;
  long long epoch = 0;        // completed epochs in the current stage
  long long step = 0;         // optimizer steps in the current stage
  long long global_step = 0;  // optimizer steps since the first stage
  BestRecord best;
  nlohmann::json stage_config;  // echo of the running stage's configuration
  bool model_only = false;      // restored without optimizer, queue or sampler state
  TeacherCache teacher_cls;     // not checkpointed; rebuilt on demand
};

/// Fresh state: student built from `seed`, teacher copied from the student's backbone.
TrainState init_state(const ModelVariantConfig& cfg, const std::string& variant, std::uint64_t seed);

enum class RestoreMode { full, model_only };

CheckpointContainer checkpoint_state(const TrainState& state);
/// Model-only restores can be evaluated but are refused by the training entry points.
TrainState restore_state(const CheckpointContainer& container, RestoreMode mode = RestoreMode::full);

struct StepOptions {
  /// Also backpropagate the weighted neighborhood term on its own and report the
  /// norm of the gradient it produces on the trainable parameters.
  bool audit_la_gradient = false;
};

struct StepResult {
  LossReport report;
  std::optional<double> la_grad_norm;
};

/// One optimizer step on a single-modality batch at learning rate `lr`.
StepResult train_step(TrainState& state, const StageConfig& cfg, Modality modality,
                      std::span<const PairedSample> batch, double lr, const StepOptions& opts = {});

struct ValidationResult {
  AlignmentReport alignment;
  double val_loss = 0.0;             // stage I weights, fixed patch sampling seed
  double rgb_teacher_cosine = 0.0;   // student RGB CLS vs teacher CLS, mean over scenes
};

/// Alignment report plus a validation loss that is comparable across stages.
ValidationResult evaluate_split(const Model& model, const Teacher& teacher, const PairedDataset& data,
                                const std::string& stage_tag, TeacherCache* cache = nullptr);

using MetricsSink = std::function<void(const nlohmann::json&)>;

struct RunOptions {
  StepOptions step;
  /// Stop after this many optimizer steps in this call, leaving the stage open.
  std::optional<long long> max_steps;
  bool eval_at_start = false;
  MetricsSink sink;
  /// When set, best.ckpt and final.ckpt for the stage are written under this directory.
  std::optional<std::string> checkpoint_dir;
};

struct StageResult {
  bool completed = false;
  std::vector<nlohmann::json> metrics;
  std::optional<ValidationResult> start_eval;
  std::optional<ValidationResult> best_eval;
  std::optional<ValidationResult> final_eval;
  std::vector<std::uint8_t> best_checkpoint;
  std::vector<std::uint8_t> final_checkpoint;
  TrainableReport trainable;
  std::map<std::string, std::uint64_t> checksums_before;
  std::map<std::string, std::uint64_t> checksums_after;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
};

struct StageData {
  const PairedDataset* train = nullptr;
  const PairedDataset* val = nullptr;  // optional
};

/// Opens the stage (freezing, fresh optimizer and sampler) unless `state` is already in
/// the middle of it, then trains until the stage ends or max_steps is reached.
/// Stage II needs a state from stage I and stage III one from stage II.
StageResult run_stage(TrainState& state, const StageConfig& cfg, const StageData& data, const RunOptions& opts = {});

struct CurriculumOptions {
  std::vector<StageId> stages{StageId::one, StageId::two, StageId::three};
  std::optional<std::string> out_dir;
  std::map<StageId, StepOptions> step_options;
  bool eval_at_start = true;
  MetricsSink sink;
};

struct CurriculumResult {
  std::map<StageId, StageResult> stages;
};

/// Runs the requested stages in order. Stage II starts from stage I's best checkpoint
/// and stage III from stage II's final checkpoint; a first stage other than I must be
/// given `resume` (a checkpoint from the previous stage).
CurriculumResult run_curriculum(const VariantPreset& preset, std::uint64_t seed, const StageData& data,
                                const CurriculumOptions& opts,
                                const std::optional<CheckpointContainer>& resume = std::nullopt);

}  // namespace specalign
