#pragma once
// Contrastive pair construction: the anchor's own radiomic vector is the
// positive view; negatives are "hard similar" images — same body part with a
// different disease, or normal.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kacl/dataset.hpp"
#include "kacl/radiomics.hpp"

namespace kacl {

struct DiseaseHierarchy {
  std::vector<std::string> body_parts;
  struct Disease {
    std::string name;
    int part;  // index into body_parts
  };
  std::vector<Disease> diseases;
  std::string normal_name = "Normal";

  // root + body parts + diseases + normal
  std::size_t node_count() const { return 1 + body_parts.size() + diseases.size() + 1; }
  int part_of(int disease) const;
  void validate() const;

  std::string to_json() const;
  static DiseaseHierarchy from_json(const std::string& json_text);
  static DiseaseHierarchy load(const std::string& path);
  void save(const std::string& path) const;

  // Synthetic default: 3 body parts, 8 diseases, matches the generator.
  static DiseaseHierarchy synthetic_default();
  // 21-node chest X-ray hierarchy (5 body parts, 14 diseases).
  static DiseaseHierarchy chest_xray21();
};

struct ContrastivePair {
  std::size_t anchor;                 // index into the batch
  radiomics::FeatureVector positive;  // v' extracted from the anchor's box
  BoundingBox box;                    // box the positive came from
  std::vector<std::size_t> negatives; // indices into the batch
};

struct SamplingConfig {
  std::size_t normal_cap = 8;  // max normal negatives per anchor
};

// Batch members eligible as negatives for the anchor: same body part with a
// different disease, or normal. The anchor itself is excluded; normals are
// capped in batch order.
std::vector<std::size_t> negative_candidates(int anchor_label, int anchor_part,
                                             const std::vector<LabeledImage>& batch,
                                             std::size_t anchor_index,
                                             const DiseaseHierarchy& h,
                                             const SamplingConfig& cfg = {});

// One pair per disease-positive image that has a box. Extraction failures
// skip the pair (reported through on_skip) and the batch proceeds.
std::vector<ContrastivePair> build_pairs(
    const std::vector<LabeledImage>& batch,
    const std::vector<std::optional<BoundingBox>>& boxes,
    const radiomics::NormalizationStats& stats, const DiseaseHierarchy& h,
    const SamplingConfig& cfg = {},
    const std::function<void(std::size_t, const std::string&)>& on_skip = nullptr);

}  // namespace kacl
