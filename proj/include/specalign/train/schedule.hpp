#pragma once

namespace specalign {

/// Ratio between the base learning rate and the floor reached at the end of the schedule.
inline constexpr double kMinLrFraction = 0.01;

/// Number of linear-warmup steps: ceil(warmup_fraction * total_steps).
long long warmup_steps(long long total_steps, double warmup_fraction);

/// Linear ramp from 0 to base_lr over the warmup steps, then cosine decay to
/// base_lr * kMinLrFraction at total_steps. `step` is clamped into [0, total_steps].
double lr_at(long long step, long long total_steps, double base_lr, double warmup_fraction);

}  // namespace specalign
