#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "specalign/core/bytes.hpp"
#include "specalign/core/tensor.hpp"
#include "specalign/model/layers.hpp"

namespace specalign {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  bool operator==(const AdamWConfig&) const = default;
};

/// Adam with decoupled weight decay. Moments are keyed by parameter name and created
/// lazily the first time a parameter is stepped.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  long long steps() const { return t_; }

  /// Starts a new update: increments the shared step counter used for bias correction.
  void begin_step() { ++t_; }
  /// p <- p - lr * wd * p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
  void update(Param& p, double lr);
  void reset();

  void serialize(ByteWriter& w) const;
  static AdamW deserialize(ByteReader& r);

  bool operator==(const AdamW& other) const;

 private:
  struct Moments {
    Mat m;
    Mat v;
  };
  AdamWConfig cfg_;
  long long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace specalign
