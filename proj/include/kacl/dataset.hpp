#pragma once

#include <optional>
#include <string>

#include "kacl/bbox.hpp"
#include "kacl/tensor.hpp"

namespace kacl {

inline constexpr int kNormalLabel = -1;

// One grayscale image with its disease label and optional ground-truth box.
struct LabeledImage {
  std::string id;
  Tensor pixels;  // [H,W] in [0,1]
  int label = kNormalLabel;  // disease index, or kNormalLabel
  int body_part = -1;        // -1 for normal images
  std::optional<BoundingBox> gt_box;
  bool annotated = false;    // annotated implies gt_box

  bool diseased() const { return label != kNormalLabel; }
};

}  // namespace kacl
