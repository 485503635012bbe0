#pragma once
// Fixed 33-feature radiomic extractor over rectangular ROIs: first-order
// statistics, rectangle shape descriptors, and five gray-level texture
// families (GLCM, GLRLM, GLSZM, NGTDM, GLDM) on a G-level quantized grid.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "kacl/bbox.hpp"
#include "kacl/tensor.hpp"

namespace kacl::radiomics {

inline constexpr int kFeatureCount = 33;
inline constexpr int kDefaultLevels = 8;

// Registry order is frozen; its hash is stored in checkpoints so a trained
// encoder can never be fed a reordered vector.
const std::array<std::string, kFeatureCount>& feature_names();
std::string registry_hash();

using FeatureVector = std::array<double, kFeatureCount>;

struct QuantizedROI {
  std::size_t width = 0, height = 0;
  int num_levels = 0;             // G
  std::vector<int> levels;        // 1..G, row-major
  std::vector<double> raw;        // source pixel values, row-major

  std::size_t pixels() const { return width * height; }
  int level_at(std::size_t y, std::size_t x) const { return levels[y * width + x]; }
};

// Equal-width binning over the ROI's own [min, max]; a constant ROI maps
// entirely to level 1. image: [H,W] or [1,H,W].
QuantizedROI quantize(const Tensor& image, const BoundingBox& box, int G = kDefaultLevels);

// mean, median, min, max, range, variance, skewness, kurtosis, energy,
// entropy (entropy over the G-level histogram; zero-variance ROIs report
// skewness = kurtosis = 0).
std::array<double, 10> first_order(const QuantizedROI& roi);

// pixel_surface, perimeter, aspect_ratio, relative_area for a rectangle.
std::array<double, 4> shape_features(const BoundingBox& box, std::size_t image_w,
                                     std::size_t image_h);

struct TextureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

// Distance-1 offsets (dy,dx) for the four GLCM/GLRLM directions.
const std::vector<std::pair<int, int>>& four_directions();

// Symmetric co-occurrence, normalized per offset then averaged over offsets.
TextureMatrix glcm(const QuantizedROI& roi, const std::vector<std::pair<int, int>>& offsets);
// contrast, correlation, joint_energy, homogeneity, entropy, dissimilarity
std::array<double, 6> glcm_features(const TextureMatrix& p);

// Run counts per (level, run length), summed over the four directions.
TextureMatrix glrlm(const QuantizedROI& roi);
// SRE, LRE, gray_level_nonuniformity, run_percentage (runs / pixels)
std::array<double, 4> glrlm_features(const TextureMatrix& r, std::size_t num_pixels);

// Zone counts per (level, 8-connected zone size).
TextureMatrix glszm(const QuantizedROI& roi);
// small_area_emphasis, large_area_emphasis, zone_percentage
std::array<double, 3> glszm_features(const TextureMatrix& s, std::size_t num_pixels);

struct NgtdmTable {
  std::vector<double> s;       // per level: sum of |level - neighborhood mean|
  std::vector<std::size_t> n;  // per level: interior-pixel counts
  std::size_t valid = 0;       // total interior pixels
};
// 8-neighborhood over interior-valid pixels only.
NgtdmTable ngtdm(const QuantizedROI& roi);
// coarseness, contrast, busyness
std::array<double, 3> ngtdm_features(const NgtdmTable& t);

// Dependence counts: 1 + number of 8-neighbors with identical level.
TextureMatrix gldm(const QuantizedROI& roi);
// small_dep_emphasis, large_dep_emphasis, dep_nonuniformity
std::array<double, 3> gldm_features(const TextureMatrix& d);

// All 33 raw features in registry order.
FeatureVector raw_features(const Tensor& image, const BoundingBox& box, int G = kDefaultLevels);

struct NormalizationStats {
  FeatureVector mean{};
  FeatureVector stddev{};  // zero entries are treated as 1

  static NormalizationStats identity();
  static NormalizationStats fit(const std::vector<FeatureVector>& samples);
};

// z-scored (clamped to [-6,6]) feature vector; throws DataError naming the
// feature if a raw value is non-finite.
FeatureVector extract(const Tensor& image, const BoundingBox& box,
                      const NormalizationStats& stats, int G = kDefaultLevels);

}  // namespace kacl::radiomics
