#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tafnet {

// Head annotation in input-pixel coordinates, 0 <= x < W, 0 <= y < H.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

using PointAnnotations = std::vector<Point>;

enum class Illumination { bright, dark };

inline std::string illumination_name(Illumination v) {
  return v == Illumination::bright ? "bright" : "dark";
}

inline Illumination illumination_from_name(const std::string& name) {
  if (name == "bright") return Illumination::bright;
  if (name == "dark") return Illumination::dark;
  throw std::invalid_argument("illumination: expected bright|dark, got '" + name + "'");
}

}  // namespace tafnet
