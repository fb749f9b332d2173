#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "specalign/core/modality.hpp"
#include "specalign/core/tensor.hpp"
#include "specalign/model/config.hpp"
#include "specalign/model/layers.hpp"

namespace specalign {

/// Output of one forward pass: the CLS embedding plus the N patch-token embeddings.
struct EmbeddingBundle {
  RowVec cls;
  Mat patches;
  Modality modality = Modality::rgb;
};

/// Shared ViT trunk: patch embedding, CLS token, positional embeddings, blocks, final norm.
struct Backbone {
  ModelVariantConfig config;
  Linear patch_embed;
  Param cls_token;  // 1 x D
  Param pos_embed;  // T x D
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;
};

/// Visits every parameter together with its group name, in a fixed order.
using ParamVisitor = std::function<void(const std::string& group, Param&)>;
using ConstParamVisitor = std::function<void(const std::string& group, const Param&)>;

/// The student: backbone plus modality stems, per-block per-modality adapters and the
/// modality embedding table.
class Model {
 public:
  const ModelVariantConfig& config() const { return backbone_.config; }

  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  RgbStem& rgb_stem() { return rgb_stem_; }
  const RgbStem& rgb_stem() const { return rgb_stem_; }
  /// Throws RoutingError for rgb.
  SpatialStem& spatial_stem(Modality m);
  const SpatialStem& spatial_stem(Modality m) const;
  /// Throws LookupError for an out-of-range block.
  Adapter& adapter(int block, Modality m);
  const Adapter& adapter(int block, Modality m) const;
  Param& modality_embed() { return modality_embed_; }
  const Param& modality_embed() const { return modality_embed_; }

  int adapter_count() const { return static_cast<int>(adapters_.size()); }

  void for_each_param(const ParamVisitor& visit);
  void for_each_param(const ConstParamVisitor& visit) const;
  void zero_grad();
  /// Checksum of every parameter group, keyed by group name.
  std::map<std::string, std::uint64_t> group_checksums() const;
  std::uint64_t checksum() const;
  long long parameter_count() const;

 private:
  friend Model build_model(const ModelVariantConfig& cfg, std::uint64_t seed);

  Backbone backbone_;
  RgbStem rgb_stem_;
  std::array<SpatialStem, 3> spatial_stems_;
  std::vector<Adapter> adapters_;  // index = block * 4 + modality
  Param modality_embed_;           // 4 x D
};

/// Frozen RGB-only backbone used as the distillation target.
class Teacher {
 public:
  Teacher() = default;
  explicit Teacher(Backbone backbone);

  const Backbone& backbone() const { return backbone_; }
  const ModelVariantConfig& config() const { return backbone_.config; }
  std::uint64_t checksum() const;
  void for_each_param(const ConstParamVisitor& visit) const;
  void for_each_param(const ParamVisitor& visit);

 private:
  Backbone backbone_;
};

/// Deterministic construction. Same (cfg, seed) gives bit-identical parameters.
Model build_model(const ModelVariantConfig& cfg, std::uint64_t seed);
/// Copy of the student's backbone as it stands now, without stems, adapters or modality table.
Teacher make_teacher(const Model& model);

/// Everything recorded by a student forward pass that the backward pass needs.
struct StudentTrace {
  Modality modality = Modality::rgb;
  int height = 0;
  int width = 0;
  Mat stem_input;
  SpatialStemCache spatial;
  Mat patches;
  std::vector<BlockCache> blocks;
  std::vector<AdapterCache> adapters;
  RowNormCache final_norm;
};

Mat rgb_stem_forward(const Model& model, const Image& image);
Mat spatial_stem_forward(const Model& model, const Image& image, Modality m);
/// W_up GELU(W_down h + b_down) + b_up for every row of h.
Mat adapter_forward(const Model& model, const Mat& h, int block, Modality m);

/// stem -> patch embed -> CLS -> +pos -> +E[m] -> (block, adapter)* -> final norm.
EmbeddingBundle student_forward(const Model& model, const Image& image, Modality m,
                                StudentTrace* trace = nullptr);

struct RoutedImage {
  const Image* image = nullptr;
  Modality modality = Modality::rgb;
};

/// Groups inputs by modality, runs each group through its adapter set, and returns the
/// bundles in input order.
std::vector<EmbeddingBundle> student_forward_batch(const Model& model, std::span<const RoutedImage> inputs);

/// Accumulates dL/dparam into every trainable parameter reached from (d_cls, d_patches).
void student_backward(Model& model, const StudentTrace& trace, const RowVec& d_cls, const Mat& d_patches);

/// Plain backbone forward on a 3-channel image.
EmbeddingBundle teacher_forward(const Teacher& teacher, const Image& image);

// ---------------------------------------------------------------- freezing

/// Which parameter groups receive gradient updates.
struct FreezeSpec {
  std::array<bool, 4> stems{false, true, true, true};  // indexed by modality
  bool adapters = true;
  bool modality_table = true;
  bool final_norm = true;
  int unfrozen_blocks = 0;  // the last u blocks by index

  bool operator==(const FreezeSpec&) const = default;
};

struct GroupCount {
  std::string group;
  bool trainable = false;
  long long weights = 0;     // biases excluded (matrix-shaped weights only for linear/conv layers)
  long long parameters = 0;  // everything
};

struct TrainableReport {
  std::vector<GroupCount> groups;
  long long trainable_parameters = 0;
  long long frozen_parameters = 0;
  std::vector<int> trainable_blocks;
};

/// Throws ConfigError when unfrozen_blocks is outside [0, depth].
TrainableReport set_trainable(Model& model, const FreezeSpec& spec);

}  // namespace specalign
