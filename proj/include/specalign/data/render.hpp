#pragma once

#include <cstdint>
#include <vector>

#include "specalign/core/modality.hpp"
#include "specalign/core/tensor.hpp"
#include "specalign/data/scene.hpp"

namespace specalign {

struct RenderOptions {
  bool noise = true;  // additive Gaussian, sigma 0.01
  bool blur = true;   // LWIR only, Gaussian sigma 2 px
};

inline constexpr double kRenderNoiseStd = 0.01;
inline constexpr double kLwirBlurSigma = 2.0;
inline constexpr double kLwirBackground = 0.1;
inline constexpr double kNirGamma = 0.7;

/// Renders the scene as seen by one sensor; 3 channels for RGB, 1 otherwise. Values are
/// clamped to [0, 1]. The noise stream is seeded from (scene id, modality).
Image render_scene(const SceneSpec& spec, Modality m, int image_size, const RenderOptions& options = {});

/// 0.299 R + 0.587 G + 0.114 B per pixel.
std::vector<double> luminance(const Image& rgb);
/// Pearson correlation of two equally sized samples; 0 when either is constant.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace specalign
