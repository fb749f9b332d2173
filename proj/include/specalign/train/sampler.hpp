#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "specalign/core/bytes.hpp"
#include "specalign/core/modality.hpp"
#include "specalign/core/random.hpp"

namespace specalign {

struct SampledBatch {
  Modality modality = Modality::nir;
  std::vector<std::size_t> indices;  // positions in that modality's dataset
  std::size_t epoch = 0;
  std::size_t step_in_epoch = 0;
  bool last_in_epoch = false;
};

/// Cycles NIR -> SWIR -> LWIR one batch at a time. An epoch covers every batch of every
/// modality once; a modality that runs out is skipped until the epoch ends. Each
/// modality's sample order is reshuffled from the caller's rng when an epoch begins.
class RoundRobinSampler {
 public:
  RoundRobinSampler() = default;
  /// sizes are the number of samples per modality in NIR, SWIR, LWIR order.
  /// Throws ConfigError when every size is zero or batch_size is not positive.
  RoundRobinSampler(std::array<std::size_t, 3> sizes, std::size_t batch_size);

  /// ceil(size / batch_size) per modality; the last batch may be short.
  std::array<std::size_t, 3> batches_per_modality() const;
  std::size_t batches_per_epoch() const;
  std::size_t epoch() const { return epoch_; }
  std::size_t step_in_epoch() const { return step_in_epoch_; }
  std::size_t batch_size() const { return batch_size_; }
  const std::array<std::size_t, 3>& sizes() const { return sizes_; }

  SampledBatch next(Rng& rng);

  void serialize(ByteWriter& w) const;
  static RoundRobinSampler deserialize(ByteReader& r);

  bool operator==(const RoundRobinSampler&) const = default;

 private:
  void start_epoch(Rng& rng);

  std::array<std::size_t, 3> sizes_{};
  std::size_t batch_size_ = 1;
  std::size_t epoch_ = 0;
  std::size_t step_in_epoch_ = 0;
  std::size_t cycle_ = 0;  // next slot to try, 0..2
  bool epoch_open_ = false;
  std::array<std::size_t, 3> served_{};  // batches served this epoch per modality
  std::array<std::vector<std::size_t>, 3> order_;
};

}  // namespace specalign
