#include "specalign/data/render.hpp"

#include <algorithm>
#include <cmath>

#include "specalign/core/random.hpp"

namespace specalign {

namespace {

// Clean RGB composite in double precision, channel-major.
std::vector<double> composite_rgb(const SceneSpec& spec, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<double> rgb(3 * plane, spec.background);
  for (const Shape& s : spec.shapes) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!s.contains(x + 0.5, y + 0.5)) continue;
        const std::size_t p = static_cast<std::size_t>(y) * size + x;
        for (int c = 0; c < 3; ++c) rgb[c * plane + p] = s.color[static_cast<std::size_t>(c)];
      }
    }
  }
  return rgb;
}

std::vector<double> emissivity_map(const SceneSpec& spec, int size) {
  std::vector<double> map(static_cast<std::size_t>(size) * size, kLwirBackground);
  for (const Shape& s : spec.shapes) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (s.contains(x + 0.5, y + 0.5)) map[static_cast<std::size_t>(y) * size + x] = s.emissivity;
      }
    }
  }
  return map;
}

// Separable Gaussian blur with a 3-sigma radius and clamp-to-edge borders.
std::vector<double> gaussian_blur(const std::vector<double>& src, int size, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= total;

  std::vector<double> tmp(src.size(), 0.0);
  std::vector<double> out(src.size(), 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sx = std::clamp(x + i, 0, size - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * src[static_cast<std::size_t>(y) * size + sx];
      }
      tmp[static_cast<std::size_t>(y) * size + x] = acc;
    }
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sy = std::clamp(y + i, 0, size - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(sy) * size + x];
      }
      out[static_cast<std::size_t>(y) * size + x] = acc;
    }
  }
  return out;
}

}  // namespace

Image render_scene(const SceneSpec& spec, Modality m, int image_size, const RenderOptions& options) {
  spec.validate(image_size);
  const std::size_t plane = static_cast<std::size_t>(image_size) * image_size;
  const std::vector<double> rgb = composite_rgb(spec, image_size);
  const double* r = rgb.data();
  const double* g = r + plane;
  const double* b = g + plane;

  std::vector<double> values;
  switch (m) {
    case Modality::rgb:
      values = rgb;
      break;
    case Modality::nir:
      values.resize(plane);
      for (std::size_t p = 0; p < plane; ++p) {
        values[p] = std::pow(std::clamp(0.2 * r[p] + 0.3 * g[p] + 0.5 * b[p], 0.0, 1.0), kNirGamma);
      }
      break;
    case Modality::swir:
      values.resize(plane);
      for (std::size_t p = 0; p < plane; ++p) {
        const double lum = 0.299 * r[p] + 0.587 * g[p] + 0.114 * b[p];
        values[p] = (1.0 - lum) * 0.8 + 0.2 * r[p];
      }
      break;
    case Modality::lwir:
      values = emissivity_map(spec, image_size);
      if (options.blur) values = gaussian_blur(values, image_size, kLwirBlurSigma);
      break;
  }

  if (options.noise) {
    Rng rng(mix_seed(spec.id, 0x5eed0000ULL + static_cast<std::uint64_t>(index_of(m))));
    for (double& v : values) v += rng.normal(0.0, kRenderNoiseStd);
  }
  Image out(channels_for(m), image_size, image_size);
  for (std::size_t i = 0; i < values.size(); ++i) out.pixels[i] = static_cast<float>(std::clamp(values[i], 0.0, 1.0));
  return out;
}

std::vector<double> luminance(const Image& rgb) {
  std::vector<double> out(rgb.plane());
  const std::size_t plane = rgb.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    out[p] = 0.299 * rgb.pixels[p] + 0.587 * rgb.pixels[plane + p] + 0.114 * rgb.pixels[2 * plane + p];
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace specalign
