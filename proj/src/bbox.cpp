#include "kacl/bbox.hpp"

#include <algorithm>

namespace kacl {

std::string BoundingBox::str() const {
  return "(" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) + "," +
         std::to_string(y1) + ")";
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const long ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const long iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const long inter = ix * iy;
  const long uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoundingBox centered_fallback_box(int image_w, int image_h) {
  const int w = std::max(1, image_w / 2), h = std::max(1, image_h / 2);
  const int x0 = (image_w - w) / 2, y0 = (image_h - h) / 2;
  return {x0, y0, x0 + w, y0 + h};
}

}  // namespace kacl
