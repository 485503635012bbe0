#pragma once

#include <cstddef>
#include <string>

#include "kacl/errors.hpp"

namespace kacl {

// Pixel rectangle, x0/y0 inclusive, x1/y1 exclusive.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid_within(int image_w, int image_h) const {
    return 0 <= x0 && x0 < x1 && x1 <= image_w && 0 <= y0 && y0 < y1 && y1 <= image_h;
  }
  bool operator==(const BoundingBox&) const = default;
  std::string str() const;
};

// Pixel-area intersection over union, in [0,1].
double iou(const BoundingBox& a, const BoundingBox& b);

// Centered box covering 25% of the image area (half width, half height).
BoundingBox centered_fallback_box(int image_w, int image_h);

}  // namespace kacl
