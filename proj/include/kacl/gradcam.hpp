#pragma once
// Grad-CAM heatmap generation and heatmap -> bounding box thresholding
// (the box-producing half of the positive-sample bootstrap).

#include <vector>

#include "kacl/bbox.hpp"
#include "kacl/models.hpp"
#include "kacl/tensor.hpp"

namespace kacl {

// Heatmap at input resolution, values normalized to [0,1] (identically-zero
// maps stay zero).
struct Heatmap {
  std::size_t width = 0, height = 0;
  std::vector<double> values;  // row-major
  int source_class = -1;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

// Channel weights = spatially averaged gradients of the class logit w.r.t.
// the stage-4 map; heatmap = relu(sum_c w_c A_c), bilinearly upsampled to the
// input size and max-normalized. Runs on an isolated tape: parameter grads
// are untouched.
Heatmap gradcam(const ImageEncoder& encoder, const ClassifierHead& head, const Tensor& image,
                int target_class);

// Binarize at threshold, keep the largest 4-connected component, return its
// tight box; an empty mask returns the fallback.
BoundingBox threshold_to_bbox(const Heatmap& h, double threshold, const BoundingBox& fallback);

// Bilinear resize of a row-major grid (exposed for testing).
std::vector<double> bilinear_resize(const std::vector<double>& src, std::size_t sw,
                                    std::size_t sh, std::size_t dw, std::size_t dh);

}  // namespace kacl
