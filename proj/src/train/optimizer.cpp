#include "specalign/train/optimizer.hpp"

#include <cmath>

#include "specalign/core/errors.hpp"

namespace specalign {

void AdamW::update(Param& p, double lr) {
  if (!p.trainable) return;
  if (t_ == 0) throw ConfigError("AdamW::update called before begin_step");
  auto it = state_.find(p.name);
  if (it == state_.end()) {
    it = state_.emplace(p.name, Moments{Mat::Zero(p.value.rows(), p.value.cols()),
                                        Mat::Zero(p.value.rows(), p.value.cols())}).first;
  }
  Moments& s = it->second;
  if (s.m.rows() != p.value.rows() || s.m.cols() != p.value.cols()) {
    throw ShapeError("optimizer moments for '" + p.name + "' do not match the parameter shape");
  }
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;

  double* w = p.value.data();
  const double* g = p.grad.data();
  double* m = s.m.data();
  double* v = s.v.data();
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    w[i] = w[i] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
  }
}

void AdamW::reset() {
  t_ = 0;
  state_.clear();
}

void AdamW::serialize(ByteWriter& w) const {
  w.f64(cfg_.beta1);
  w.f64(cfg_.beta2);
  w.f64(cfg_.eps);
  w.f64(cfg_.weight_decay);
  w.u64(static_cast<std::uint64_t>(t_));
  w.u64(state_.size());
  for (const auto& [name, s] : state_) {
    w.str(name);
    w.matrix(s.m);
    w.matrix(s.v);
  }
}

AdamW AdamW::deserialize(ByteReader& r) {
  AdamW opt;
  opt.cfg_.beta1 = r.f64();
  opt.cfg_.beta2 = r.f64();
  opt.cfg_.eps = r.f64();
  opt.cfg_.weight_decay = r.f64();
  opt.t_ = static_cast<long long>(r.u64());
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    Moments s;
    s.m = r.matrix();
    s.v = r.matrix();
    if (s.m.rows() != s.v.rows() || s.m.cols() != s.v.cols()) {
      throw CheckpointError(r.context() + ": moment shapes differ for '" + name + "'");
    }
    opt.state_.emplace(std::move(name), std::move(s));
  }
  return opt;
}

bool AdamW::operator==(const AdamW& other) const {
  if (!(cfg_ == other.cfg_) || t_ != other.t_ || state_.size() != other.state_.size()) return false;
  for (const auto& [name, s] : state_) {
    auto it = other.state_.find(name);
    if (it == other.state_.end()) return false;
    if (s.m.rows() != it->second.m.rows() || s.m.cols() != it->second.m.cols()) return false;
    if (s.m != it->second.m || s.v != it->second.v) return false;
  }
  return true;
}

}  // namespace specalign
