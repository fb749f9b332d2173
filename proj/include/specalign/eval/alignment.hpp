#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "specalign/core/modality.hpp"
#include "specalign/core/tensor.hpp"
#include "specalign/data/dataset.hpp"
#include "specalign/model/model.hpp"

namespace specalign {

inline constexpr std::size_t kMinRetrievalScenes = 10;

struct RetrievalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<std::size_t> ranks;  // 0-based rank of the true partner for each query
};

/// Row i of `queries` is paired with row i of `gallery`. Each query ranks every gallery
/// row by cosine similarity; tied scores rank the lower gallery index first.
RetrievalResult retrieval(const Mat& queries, const Mat& gallery);

struct ModalityAlignment {
  Modality modality = Modality::nir;
  std::size_t pairs = 0;
  double mean_cosine = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

struct AlignmentReport {
  std::string stage;  // "init", "I", "II", "III" or a caller tag
  std::vector<ModalityAlignment> modalities;

  /// Mean of top-1 over the modalities present.
  double mean_top1() const;
  std::optional<ModalityAlignment> find(Modality m) const;
  nlohmann::json to_json() const;
};

/// Student CLS embeddings of one split: for each pair, the RGB view and the MS view.
struct SplitEmbeddings {
  struct PerModality {
    Modality modality = Modality::nir;
    std::vector<std::uint64_t> scene_ids;
    Mat rgb;  // pairs x D
    Mat ms;   // pairs x D
  };
  std::vector<PerModality> modalities;  // only modalities with at least one pair
};

SplitEmbeddings embed_split(const Model& model, const PairedDataset& data);

/// Throws DataError when a modality present in the split has fewer than
/// kMinRetrievalScenes pairs.
AlignmentReport alignment_report(const SplitEmbeddings& emb, const std::string& stage);

struct ExportOptions {
  std::size_t count = 100;  // pairs per modality
  std::uint64_t seed = 0;
};

/// CSV with header scene_id,modality,pair,e0..e{D-1}; two rows (rgb then ms) per pair.
/// Pairs are a seeded sample without replacement, listed in sample order.
std::string export_embeddings_csv(const SplitEmbeddings& emb, const ExportOptions& opts);

}  // namespace specalign
