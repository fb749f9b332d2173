#include "specalign/data/scene.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "specalign/core/errors.hpp"
#include "specalign/core/random.hpp"

namespace specalign {

double Shape::area() const {
  switch (kind) {
    case ShapeKind::disk:
      return std::numbers::pi * width * width / 4.0;
    case ShapeKind::rectangle:
      return width * height;
    case ShapeKind::triangle:
      return width * height / 2.0;
  }
  return 0.0;
}

bool Shape::contains(double x, double y) const {
  const double dx = x - center_x;
  const double dy = y - center_y;
  switch (kind) {
    case ShapeKind::disk:
      return dx * dx + dy * dy <= width * width / 4.0;
    case ShapeKind::rectangle:
      return std::abs(dx) <= width / 2.0 && std::abs(dy) <= height / 2.0;
    case ShapeKind::triangle: {
      // Apex at the top centre, base along the bottom edge.
      const double from_apex = y - (center_y - height / 2.0);
      if (from_apex < 0.0 || from_apex > height) return false;
      return std::abs(dx) <= (width / 2.0) * from_apex / height;
    }
  }
  return false;
}

void SceneSpec::validate(int image_size, int num_classes) const {
  auto fail = [this](const std::string& what) {
    throw DataError("scene " + std::to_string(id) + ": " + what);
  };
  if (shapes.empty() || shapes.size() > 5) fail("needs 1 to 5 shapes");
  if (!(background >= 0.0 && background <= 1.0)) fail("background shade outside [0, 1]");
  const double size = image_size;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const Shape& s = shapes[i];
    const std::string tag = "shape " + std::to_string(i) + " ";
    if (!(s.width > 0.0 && s.height > 0.0)) fail(tag + "has a non-positive size");
    if (s.center_x - s.width / 2.0 < 0.0 || s.center_x + s.width / 2.0 > size || s.center_y - s.height / 2.0 < 0.0 ||
        s.center_y + s.height / 2.0 > size) {
      fail(tag + "does not fit inside the image");
    }
    for (double c : s.color) {
      if (!(c >= 0.0 && c <= 1.0)) fail(tag + "color outside [0, 1]");
    }
    if (!(s.emissivity >= 0.0 && s.emissivity <= 1.0)) fail(tag + "emissivity outside [0, 1]");
    if (s.label < 0 || s.label >= num_classes) fail(tag + "class label outside [0, num_classes)");
  }
}

int SceneSpec::dominant_label() const {
  if (shapes.empty()) throw DataError("scene " + std::to_string(id) + " has no shapes");
  std::size_t best = 0;
  for (std::size_t i = 1; i < shapes.size(); ++i) {
    if (shapes[i].area() > shapes[best].area()) best = i;
  }
  return shapes[best].label;
}

SceneSpec random_scene(std::uint64_t scene_id, std::uint64_t dataset_seed, int image_size) {
  Rng rng(mix_seed(dataset_seed, scene_id));
  const double size = image_size;
  SceneSpec spec;
  spec.id = scene_id;
  spec.background = rng.uniform(0.1, 0.9);
  const int count = 1 + static_cast<int>(rng.index(5));
  for (int i = 0; i < count; ++i) {
    Shape s;
    s.label = static_cast<int>(rng.index(kNumShapeClasses));
    const double extent = rng.uniform(0.18, 0.45) * size;
    switch (s.label) {
      case kClassDisk:
        s.kind = ShapeKind::disk;
        s.width = s.height = extent;
        break;
      case kClassRectangle: {
        s.kind = ShapeKind::rectangle;
        const double aspect = rng.uniform(1.6, 2.5);
        const bool wide = rng.index(2) == 0;
        s.width = wide ? extent : extent / aspect;
        s.height = wide ? extent / aspect : extent;
        break;
      }
      case kClassTriangle:
        s.kind = ShapeKind::triangle;
        s.width = extent;
        s.height = extent * rng.uniform(0.8, 1.2);
        break;
      default:
        s.kind = ShapeKind::rectangle;
        s.width = s.height = extent;
        break;
    }
    s.center_x = rng.uniform(s.width / 2.0, size - s.width / 2.0);
    s.center_y = rng.uniform(s.height / 2.0, size - s.height / 2.0);
    const double value = rng.uniform01();
    const double saturation = rng.uniform(0.0, 0.6);
    for (double& c : s.color) c = (1.0 - saturation) * value + saturation * rng.uniform01();
    s.emissivity = rng.uniform01();
    spec.shapes.push_back(s);
  }
  return spec;
}

}  // namespace specalign
