#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "specalign/data/dataset.hpp"
#include "specalign/model/model.hpp"

namespace specalign {

struct ProbeOptions {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 16;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  Modality modality = Modality::nir;  // the pair is RGB + this band
  std::size_t train_pairs = 0;
  std::size_t test_pairs = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double chance = 0.0;
};

struct ProbeReport {
  std::vector<ProbeResult> modalities;
  nlohmann::json to_json() const;
};

/// Linear softmax classifier on concat-fused CLS features, trained with AdamW. The model
/// is only read; the fusion projection stays at its seeded initialization.
/// Throws DataError when a label lies outside [0, kNumShapeClasses).
ProbeReport run_probe(const Model& model, const PairedDataset& train, const PairedDataset& test,
                      const ProbeOptions& opts);

}  // namespace specalign
