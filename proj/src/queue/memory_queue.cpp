#include "specalign/queue/memory_queue.hpp"

#include <algorithm>
#include <numeric>

#include "specalign/core/bytes.hpp"
#include "specalign/core/errors.hpp"

namespace specalign {

namespace {

constexpr std::string_view kMagic = "SAQUEUE1";
constexpr std::uint32_t kVersion = 1;
constexpr double kMinNorm = 1e-12;

}  // namespace

Mat l2_normalize_rows(const Mat& z, const char* what) {
  Mat out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double n = z.row(i).norm();
    if (!(n >= kMinNorm)) {
      throw DegenerateEmbeddingError(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                                     std::to_string(n));
    }
    out.row(i) = z.row(i) / n;
  }
  return out;
}

MemoryQueue::MemoryQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity == 0) throw ConfigError("queue capacity must be positive");
  if (dim == 0) throw ConfigError("queue dimension must be positive");
  buffer_ = Mat::Zero(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(dim));
}

void MemoryQueue::push_batch(const Mat& z) {
  if (static_cast<std::size_t>(z.cols()) != dim_) {
    throw ShapeError("queue push: row width " + std::to_string(z.cols()) + " != queue dimension " +
                     std::to_string(dim_));
  }
  if (static_cast<std::size_t>(z.rows()) > capacity_) {
    throw ConfigError("queue push: batch of " + std::to_string(z.rows()) + " rows exceeds capacity " +
                      std::to_string(capacity_));
  }
  const Mat normalized = l2_normalize_rows(z, "queue push");
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    buffer_.row(static_cast<Eigen::Index>(cursor_)) = normalized.row(i);
    cursor_ = (cursor_ + 1) % capacity_;
  }
  fill_ = std::min(capacity_, fill_ + static_cast<std::size_t>(z.rows()));
}

TopK MemoryQueue::top_k(const Mat& z_ref, int k) const {
  if (fill_ == 0) throw QueueEmptyError("top-k requested from an empty queue");
  if (k <= 0) throw ConfigError("top-k needs k >= 1");
  if (static_cast<std::size_t>(z_ref.cols()) != dim_) {
    throw ShapeError("top-k: query width " + std::to_string(z_ref.cols()) + " != queue dimension " +
                     std::to_string(dim_));
  }
  const Mat q = l2_normalize_rows(z_ref, "top-k query");
  const auto filled = static_cast<Eigen::Index>(fill_);
  Mat sims(q.rows(), filled);
  sims.noalias() = q * buffer_.topRows(filled).transpose();

  TopK out;
  out.k_eff = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), fill_));
  out.indices.resize(static_cast<std::size_t>(q.rows()) * static_cast<std::size_t>(out.k_eff));
  out.sims.resize(q.rows(), out.k_eff);
  std::vector<std::size_t> order(fill_);
  for (Eigen::Index b = 0; b < q.rows(); ++b) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto row = sims.row(b);
    std::partial_sort(order.begin(), order.begin() + out.k_eff, order.end(), [&row](std::size_t a, std::size_t c) {
      const double sa = row(static_cast<Eigen::Index>(a));
      const double sc = row(static_cast<Eigen::Index>(c));
      return sa > sc || (sa == sc && a < c);
    });
    for (int j = 0; j < out.k_eff; ++j) {
      out.indices[static_cast<std::size_t>(b) * static_cast<std::size_t>(out.k_eff) + static_cast<std::size_t>(j)] =
          order[static_cast<std::size_t>(j)];
      out.sims(b, j) = row(static_cast<Eigen::Index>(order[static_cast<std::size_t>(j)]));
    }
  }
  return out;
}

std::size_t MemoryQueue::physical_index(std::size_t logical) const {
  return (cursor_ + capacity_ - fill_ + logical) % capacity_;
}

Mat MemoryQueue::ordered() const {
  Mat out(static_cast<Eigen::Index>(fill_), static_cast<Eigen::Index>(dim_));
  for (std::size_t j = 0; j < fill_; ++j) {
    out.row(static_cast<Eigen::Index>(j)) = buffer_.row(static_cast<Eigen::Index>(physical_index(j)));
  }
  return out;
}

std::vector<std::uint8_t> MemoryQueue::checkpoint() const {
  ByteWriter w;
  w.magic(kMagic);
  w.u32(kVersion);
  w.u64(capacity_);
  w.u64(dim_);
  w.u64(cursor_);
  w.u64(fill_);
  for (Eigen::Index i = 0; i < buffer_.size(); ++i) w.f64(buffer_.data()[i]);
  w.u64(checksum(buffer_));
  return w.take();
}

MemoryQueue MemoryQueue::restore(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim) {
  ByteReader r(bytes, "queue checkpoint");
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError("queue checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kVersion) + ")");
  }
  const std::uint64_t capacity = r.u64();
  const std::uint64_t dim = r.u64();
  const std::uint64_t cursor = r.u64();
  const std::uint64_t fill = r.u64();
  if (expected_dim && dim != *expected_dim) {
    throw CheckpointError("queue checkpoint: dimension mismatch, stored D=" + std::to_string(dim) +
                          ", expected D=" + std::to_string(*expected_dim));
  }
  if (capacity == 0 || dim == 0 || cursor >= capacity || fill > capacity) {
    throw CheckpointError("queue checkpoint: inconsistent header (K=" + std::to_string(capacity) + ", D=" +
                          std::to_string(dim) + ", cursor=" + std::to_string(cursor) + ", fill=" +
                          std::to_string(fill) + ")");
  }
  if (fill < capacity && cursor != fill) {
    throw CheckpointError("queue checkpoint: cursor must equal fill for a partially filled queue");
  }
  if (r.remaining() != capacity * dim * 8 + 8) {
    throw CheckpointError("queue checkpoint: payload size does not match K x D");
  }
  MemoryQueue q(capacity, dim);
  for (Eigen::Index i = 0; i < q.buffer_.size(); ++i) q.buffer_.data()[i] = r.f64();
  const std::uint64_t stored = r.u64();
  if (stored != checksum(q.buffer_)) throw CheckpointError("queue checkpoint: checksum mismatch");
  q.cursor_ = cursor;
  q.fill_ = fill;
  return q;
}

bool MemoryQueue::operator==(const MemoryQueue& other) const {
  return capacity_ == other.capacity_ && dim_ == other.dim_ && cursor_ == other.cursor_ && fill_ == other.fill_ &&
         checksum(buffer_) == checksum(other.buffer_) && buffer_ == other.buffer_;
}

}  // namespace specalign
