#include "specalign/train/sampler.hpp"

#include <algorithm>
#include <numeric>

#include "specalign/core/errors.hpp"

namespace specalign {

RoundRobinSampler::RoundRobinSampler(std::array<std::size_t, 3> sizes, std::size_t batch_size)
    : sizes_(sizes), batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (sizes[0] + sizes[1] + sizes[2] == 0) throw ConfigError("round-robin sampler: every modality dataset is empty");
}

std::array<std::size_t, 3> RoundRobinSampler::batches_per_modality() const {
  std::array<std::size_t, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = (sizes_[i] + batch_size_ - 1) / batch_size_;
  return out;
}

std::size_t RoundRobinSampler::batches_per_epoch() const {
  const auto b = batches_per_modality();
  return b[0] + b[1] + b[2];
}

void RoundRobinSampler::start_epoch(Rng& rng) {
  for (std::size_t i = 0; i < 3; ++i) {
    auto& o = order_[i];
    o.resize(sizes_[i]);
    std::iota(o.begin(), o.end(), std::size_t{0});
    for (std::size_t j = o.size(); j > 1; --j) std::swap(o[j - 1], o[rng.index(j)]);
  }
  served_ = {};
  cycle_ = 0;
  step_in_epoch_ = 0;
  epoch_open_ = true;
}

SampledBatch RoundRobinSampler::next(Rng& rng) {
  if (!epoch_open_) start_epoch(rng);
  const auto per = batches_per_modality();
  std::size_t slot = cycle_;
  while (served_[slot] >= per[slot]) slot = (slot + 1) % 3;

  SampledBatch out;
  out.modality = kSpectralModalities[slot];
  const std::size_t begin = served_[slot] * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, sizes_[slot]);
  out.indices.assign(order_[slot].begin() + static_cast<std::ptrdiff_t>(begin),
                     order_[slot].begin() + static_cast<std::ptrdiff_t>(end));
  out.epoch = epoch_;
  out.step_in_epoch = step_in_epoch_;

  ++served_[slot];
  ++step_in_epoch_;
  cycle_ = (slot + 1) % 3;
  if (step_in_epoch_ == batches_per_epoch()) {
    out.last_in_epoch = true;
    epoch_open_ = false;
    ++epoch_;
  }
  return out;
}

void RoundRobinSampler::serialize(ByteWriter& w) const {
  for (std::size_t s : sizes_) w.u64(s);
  w.u64(batch_size_);
  w.u64(epoch_);
  w.u64(step_in_epoch_);
  w.u64(cycle_);
  w.u8(epoch_open_ ? 1 : 0);
  for (std::size_t s : served_) w.u64(s);
  for (const auto& o : order_) {
    w.u64(o.size());
    for (std::size_t v : o) w.u64(v);
  }
}

RoundRobinSampler RoundRobinSampler::deserialize(ByteReader& r) {
  RoundRobinSampler s;
  for (auto& v : s.sizes_) v = r.u64();
  s.batch_size_ = r.u64();
  if (s.batch_size_ == 0) throw CheckpointError(r.context() + ": sampler batch size is zero");
  s.epoch_ = r.u64();
  s.step_in_epoch_ = r.u64();
  s.cycle_ = r.u64();
  s.epoch_open_ = r.u8() != 0;
  for (auto& v : s.served_) v = r.u64();
  for (std::size_t i = 0; i < 3; ++i) {
    const std::uint64_t n = r.u64();
    if (n > r.remaining() / 8) throw CheckpointError(r.context() + ": sampler order length is corrupt");
    s.order_[i].resize(n);
    for (auto& v : s.order_[i]) v = r.u64();
    if (s.epoch_open_ && n != s.sizes_[i]) throw CheckpointError(r.context() + ": sampler order does not match sizes");
  }
  if (s.cycle_ > 2) throw CheckpointError(r.context() + ": sampler cycle position out of range");
  return s;
}

}  // namespace specalign
