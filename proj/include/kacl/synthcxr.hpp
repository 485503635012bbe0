#pragma once
// Synthetic phantom dataset: imbalanced multi-class grayscale images with
// textured lesions, body-part bands, ground-truth boxes, and an on-disk
// manifest + 16-bit PGM layout with per-file checksums.

#include <string>
#include <vector>

#include "kacl/dataset.hpp"
#include "kacl/sampling.hpp"

namespace kacl::synthcxr {

struct DatasetSpec {
  std::size_t n_images = 2000;
  double imbalance_ratio = 3.4;  // normal : diseased
  std::vector<double> disease_frequencies;  // empty = uniform over 8 diseases
  double annotated_fraction = 0.008;        // of all images; annotated are diseased
  double train_frac = 0.7, val_frac = 0.1, test_frac = 0.2;  // unannotated family
  double annotated_train_frac = 0.2;        // rest of annotated is test
  std::size_t image_size = 64;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static DatasetSpec from_json(const std::string& text);
};

struct Dataset {
  DatasetSpec spec;
  DiseaseHierarchy hierarchy;
  std::vector<LabeledImage> images;
  // index lists into `images`; id ranges are disjoint across all five
  std::vector<std::size_t> train, val, test;                  // unannotated
  std::vector<std::size_t> annotated_train, annotated_test;
};

// Deterministic in-memory generation (also used directly by tests).
Dataset generate_in_memory(const DatasetSpec& spec);

// Generate and write manifest.json + images/*.pgm + hierarchy.json.
void generate(const DatasetSpec& spec, const std::string& out_dir);

// Load a generated dataset; refuses to load on checksum mismatch or missing
// files.
Dataset load(const std::string& dir);

// 16-bit big-endian binary PGM round-trip for [H,W] tensors in [0,1].
void write_pgm16(const std::string& path, const Tensor& image);
Tensor read_pgm16(const std::string& path);

std::string sha256_file(const std::string& path);
std::string sha256_bytes(const void* data, std::size_t n);

}  // namespace kacl::synthcxr
