#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace specalign {

inline constexpr int kNumShapeClasses = 4;

enum class ShapeKind : std::uint8_t { disk = 0, rectangle = 1, triangle = 2 };

/// Class labels used by the downstream probe: disk, elongated rectangle, triangle, square.
enum ShapeClass : int { kClassDisk = 0, kClassRectangle = 1, kClassTriangle = 2, kClassSquare = 3 };

struct Shape {
  ShapeKind kind = ShapeKind::disk;
  double center_x = 0.0;  // pixels
  double center_y = 0.0;
  double width = 0.0;  // disk: diameter
  double height = 0.0;
  std::array<double, 3> color{};  // RGB in [0, 1]
  double emissivity = 0.0;        // LWIR intensity in [0, 1]
  int label = 0;

  double area() const;
  /// Pixel-centre coverage test.
  bool contains(double x, double y) const;
};

struct SceneSpec {
  std::uint64_t id = 0;
  double background = 0.5;
  std::vector<Shape> shapes;

  /// Throws DataError naming the violated rule.
  void validate(int image_size, int num_classes = kNumShapeClasses) const;
  /// Label of the shape with the largest area (first one on ties).
  int dominant_label() const;
};

/// Deterministic random scene: 1-5 shapes, all fully inside a square image.
SceneSpec random_scene(std::uint64_t scene_id, std::uint64_t dataset_seed, int image_size);

}  // namespace specalign
