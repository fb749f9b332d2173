#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "specalign/core/tensor.hpp"

namespace specalign {

inline constexpr std::size_t kPresetQueueCapacity = 65536;
inline constexpr std::size_t kToyQueueCapacity = 1024;

/// Result of a top-k query: row b holds the k_eff best physical indices for query b,
/// in descending similarity, ties broken by the lower physical index.
struct TopK {
  int k_eff = 0;
  std::vector<std::size_t> indices;  // rows x k_eff, row-major
  Mat sims;                          // rows x k_eff

  std::size_t index(Eigen::Index row, int j) const {
    return indices[static_cast<std::size_t>(row) * static_cast<std::size_t>(k_eff) + static_cast<std::size_t>(j)];
  }
};

/// Fixed-capacity FIFO of L2-normalised embeddings. Rows are written at the cursor,
/// overwriting the oldest entry once the queue is full.
class MemoryQueue {
 public:
  /// Throws ConfigError for a zero capacity or dimension.
  MemoryQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t fill() const { return fill_; }
  std::size_t cursor() const { return cursor_; }
  bool empty() const { return fill_ == 0; }
  const Mat& buffer() const { return buffer_; }

  /// Normalises and appends every row of z (B x D). B must not exceed the capacity.
  void push_batch(const Mat& z);
  /// k_eff = min(k, fill). Throws QueueEmptyError when nothing has been pushed.
  TopK top_k(const Mat& z_ref, int k) const;
  /// Stored rows from oldest to newest.
  Mat ordered() const;
  /// Physical row index of logical position j (0 = oldest).
  std::size_t physical_index(std::size_t logical) const;

  std::vector<std::uint8_t> checkpoint() const;
  /// Throws CheckpointError on corruption, version mismatch, or when `expected_dim` is
  /// given and differs from the stored dimension.
  static MemoryQueue restore(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim = {});

  bool operator==(const MemoryQueue& other) const;

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t cursor_ = 0;
  std::size_t fill_ = 0;
  Mat buffer_;
};

/// Rows of z divided by their L2 norms. Throws DegenerateEmbeddingError for norms below 1e-12.
Mat l2_normalize_rows(const Mat& z, const char* what);

}  // namespace specalign
