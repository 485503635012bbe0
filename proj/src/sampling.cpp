#include "kacl/sampling.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace kacl {

int DiseaseHierarchy::part_of(int disease) const {
  if (disease < 0 || static_cast<std::size_t>(disease) >= diseases.size())
    throw ConfigError("hierarchy: unknown disease index " + std::to_string(disease));
  return diseases[disease].part;
}

void DiseaseHierarchy::validate() const {
  for (const auto& d : diseases)
    if (d.part < 0 || static_cast<std::size_t>(d.part) >= body_parts.size())
      throw ConfigError("hierarchy: disease '" + d.name + "' maps to unknown body part");
}

std::string DiseaseHierarchy::to_json() const {
  nlohmann::json j;
  j["body_parts"] = body_parts;
  j["normal"] = normal_name;
  j["diseases"] = nlohmann::json::array();
  for (const auto& d : diseases)
    j["diseases"].push_back({{"name", d.name}, {"part", body_parts.at(d.part)}});
  return j.dump(2);
}

DiseaseHierarchy DiseaseHierarchy::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("hierarchy: invalid JSON: ") + e.what());
  }
  DiseaseHierarchy h;
  h.body_parts = j.at("body_parts").get<std::vector<std::string>>();
  h.normal_name = j.value("normal", "Normal");
  for (const auto& d : j.at("diseases")) {
    const std::string part = d.at("part").get<std::string>();
    const auto it = std::find(h.body_parts.begin(), h.body_parts.end(), part);
    if (it == h.body_parts.end())
      throw DataError("hierarchy: disease references unknown body part '" + part + "'");
    h.diseases.push_back({d.at("name").get<std::string>(),
                          static_cast<int>(it - h.body_parts.begin())});
  }
  h.validate();
  return h;
}

DiseaseHierarchy DiseaseHierarchy::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open hierarchy file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json(buf.str());
}

void DiseaseHierarchy::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write hierarchy file: " + path);
  os << to_json() << '\n';
}

DiseaseHierarchy DiseaseHierarchy::synthetic_default() {
  DiseaseHierarchy h;
  h.body_parts = {"Upper", "Middle", "Lower"};
  h.diseases = {{"Dome", 0},   {"Ring", 0},    {"Speckle", 0},
                {"Grid", 1},   {"StripesH", 1}, {"StripesV", 1},
                {"Plateau", 2}, {"Wedge", 2}};
  h.validate();
  return h;
}

DiseaseHierarchy DiseaseHierarchy::chest_xray21() {
  DiseaseHierarchy h;
  h.body_parts = {"Lung", "Heart", "Pleura", "Mediastinum", "Diaphragm"};
  h.diseases = {{"Atelectasis", 0},  {"Consolidation", 0}, {"Edema", 0},
                {"Emphysema", 0},    {"Fibrosis", 0},      {"Infiltration", 0},
                {"Mass", 0},         {"Nodule", 0},        {"Pneumonia", 0},
                {"Cardiomegaly", 1}, {"Effusion", 2},      {"Pleural_Thickening", 2},
                {"Pneumothorax", 2}, {"Hernia", 4}};
  h.validate();
  return h;
}

std::vector<std::size_t> negative_candidates(int anchor_label, int anchor_part,
                                             const std::vector<LabeledImage>& batch,
                                             std::size_t anchor_index,
                                             const DiseaseHierarchy& h,
                                             const SamplingConfig& cfg) {
  if (anchor_label == kNormalLabel)
    throw UsageError("negative_candidates: anchor must be disease-positive");
  if (h.part_of(anchor_label) != anchor_part)
    throw ConfigError("negative_candidates: anchor body part disagrees with hierarchy");
  std::vector<std::size_t> out;
  std::size_t normals = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (i == anchor_index) continue;
    const auto& img = batch[i];
    if (img.diseased()) {
      if (h.part_of(img.label) == anchor_part && img.label != anchor_label) out.push_back(i);
    } else if (normals < cfg.normal_cap) {
      out.push_back(i);
      ++normals;
    }
  }
  return out;
}

std::vector<ContrastivePair> build_pairs(
    const std::vector<LabeledImage>& batch,
    const std::vector<std::optional<BoundingBox>>& boxes,
    const radiomics::NormalizationStats& stats, const DiseaseHierarchy& h,
    const SamplingConfig& cfg,
    const std::function<void(std::size_t, const std::string&)>& on_skip) {
  if (boxes.size() != batch.size())
    throw UsageError("build_pairs: boxes length must match batch length");
  std::vector<ContrastivePair> pairs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& img = batch[i];
    if (!img.diseased()) continue;  // normals appear only as negatives
    // annotated images use the ground-truth box verbatim
    const bool use_gt = img.annotated && img.gt_box;
    if (!use_gt && !boxes[i]) {
      if (on_skip) on_skip(i, "no bounding box");
      continue;
    }
    const BoundingBox box = use_gt ? *img.gt_box : *boxes[i];
    ContrastivePair pair;
    pair.anchor = i;
    pair.box = box;
    try {
      pair.positive = radiomics::extract(img.pixels, box, stats);
    } catch (const DataError& e) {
      if (on_skip) on_skip(i, e.what());
      continue;
    }
    pair.negatives = negative_candidates(img.label, img.body_part, batch, i, h, cfg);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace kacl
