#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace specalign {

// Token matrices are rows = tokens, cols = features.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vec = Eigen::VectorXd;

/// Channel-major float raster. Pixel (c, y, x) lives at (c * height + y) * width + x.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  /// channels x (height * width), promoted to double.
  Mat to_matrix() const {
    Mat m(channels, static_cast<Eigen::Index>(plane()));
    for (std::size_t i = 0; i < pixels.size(); ++i) m.data()[i] = pixels[i];
    return m;
  }

  bool operator==(const Image&) const = default;
};

}  // namespace specalign
