#include "specalign/train/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace specalign {

long long warmup_steps(long long total_steps, double warmup_fraction) {
  if (total_steps <= 0 || warmup_fraction <= 0.0) return 0;
  const auto w = static_cast<long long>(std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-12));
  return std::clamp(w, 0LL, total_steps);
}

double lr_at(long long step, long long total_steps, double base_lr, double warmup_fraction) {
  const double min_lr = base_lr * kMinLrFraction;
  if (total_steps <= 0) return base_lr;
  step = std::clamp(step, 0LL, total_steps);
  const long long warm = warmup_steps(total_steps, warmup_fraction);
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  const long long span = total_steps - warm;
  const double progress = span == 0 ? 1.0 : static_cast<double>(step - warm) / static_cast<double>(span);
  return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace specalign
