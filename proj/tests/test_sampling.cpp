#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kacl/bbox.hpp"
#include "kacl/rng.hpp"
#include "kacl/sampling.hpp"

using namespace kacl;

namespace {

// pixel-enumeration IoU reference
double iou_by_pixels(const BoundingBox& a, const BoundingBox& b) {
  const int lo_x = std::min(a.x0, b.x0), hi_x = std::max(a.x1, b.x1);
  const int lo_y = std::min(a.y0, b.y0), hi_y = std::max(a.y1, b.y1);
  long inter = 0, uni = 0;
  for (int y = lo_y; y < hi_y; ++y)
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
      const bool in_b = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LabeledImage make_image(int label, int part, bool annotated = false) {
  LabeledImage img;
  img.pixels = Tensor::zeros({16, 16});
  img.label = label;
  img.body_part = part;
  img.annotated = annotated;
  if (annotated) img.gt_box = BoundingBox{2, 2, 10, 10};
  return img;
}

}  // namespace

TEST_CASE("iou worked cases") {
  CHECK(iou({3, 4, 9, 12}, {3, 4, 9, 12}) == 1.0);
  CHECK(iou({0, 0, 5, 5}, {10, 10, 20, 20}) == 0.0);
  CHECK(iou({0, 0, 10, 10}, {5, 5, 15, 15}) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
  // touching edges do not intersect
  CHECK(iou({0, 0, 5, 5}, {5, 0, 10, 5}) == 0.0);
}

TEST_CASE("iou matches pixel enumeration on random boxes") {
  Rng rng(202);
  for (int trial = 0; trial < 100; ++trial) {
    auto rand_box = [&]() {
      const int x0 = static_cast<int>(rng.uniform_int(0, 30));
      const int y0 = static_cast<int>(rng.uniform_int(0, 30));
      return BoundingBox{x0, y0, x0 + static_cast<int>(rng.uniform_int(1, 20)),
                         y0 + static_cast<int>(rng.uniform_int(1, 20))};
    };
    const BoundingBox a = rand_box(), b = rand_box();
    CHECK(std::abs(iou(a, b) - iou_by_pixels(a, b)) <= 1e-12);
  }
}

TEST_CASE("hierarchy counts and lookup") {
  const auto h = DiseaseHierarchy::synthetic_default();
  CHECK(h.node_count() == 13);  // root + 3 parts + 8 diseases + normal
  CHECK(h.part_of(0) == 0);
  CHECK_THROWS_AS(h.part_of(99), ConfigError);

  const auto cx = DiseaseHierarchy::chest_xray21();
  CHECK(cx.node_count() == 21);  // root + 5 parts + 14 diseases + normal
}

TEST_CASE("hierarchy json round trip") {
  const auto h = DiseaseHierarchy::synthetic_default();
  const auto back = DiseaseHierarchy::from_json(h.to_json());
  CHECK(back.body_parts == h.body_parts);
  CHECK(back.diseases.size() == h.diseases.size());
  for (std::size_t i = 0; i < h.diseases.size(); ++i) {
    CHECK(back.diseases[i].name == h.diseases[i].name);
    CHECK(back.diseases[i].part == h.diseases[i].part);
  }
  CHECK_THROWS_AS(DiseaseHierarchy::from_json("{nope"), DataError);
  CHECK_THROWS_AS(
      DiseaseHierarchy::from_json(R"({"body_parts":["A"],"diseases":[{"name":"X","part":"B"}]})"),
      DataError);
}

TEST_CASE("worked example: Pneumonia anchor in a mixed batch") {
  const auto h = DiseaseHierarchy::chest_xray21();
  auto idx = [&](const std::string& name) {
    for (std::size_t i = 0; i < h.diseases.size(); ++i)
      if (h.diseases[i].name == name) return static_cast<int>(i);
    return -1;
  };
  const int pneumonia = idx("Pneumonia");
  const int atelectasis = idx("Atelectasis");
  const int edema = idx("Edema");
  const int cardiomegaly = idx("Cardiomegaly");  // Heart, stands in for a non-Lung disease
  REQUIRE(pneumonia >= 0);

  std::vector<LabeledImage> batch = {
      make_image(pneumonia, h.part_of(pneumonia)),        // anchor
      make_image(atelectasis, h.part_of(atelectasis)),    // Lung, different disease
      make_image(edema, h.part_of(edema)),                // Lung, different disease
      make_image(kNormalLabel, -1),                       // Normal
      make_image(cardiomegaly, h.part_of(cardiomegaly)),  // different body part
  };
  const auto negs = negative_candidates(pneumonia, h.part_of(pneumonia), batch, 0, h, {});
  CHECK(negs == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("same-disease-only batch yields no negatives; all-normal selects all") {
  const auto h = DiseaseHierarchy::synthetic_default();
  std::vector<LabeledImage> same = {make_image(0, 0), make_image(0, 0), make_image(0, 0)};
  CHECK(negative_candidates(0, 0, same, 0, h, {}).empty());

  std::vector<LabeledImage> normals = {make_image(0, 0), make_image(kNormalLabel, -1),
                                       make_image(kNormalLabel, -1)};
  CHECK(negative_candidates(0, 0, normals, 0, h, {}) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("normal cap applies in batch order") {
  const auto h = DiseaseHierarchy::synthetic_default();
  std::vector<LabeledImage> batch = {make_image(0, 0)};
  for (int i = 0; i < 12; ++i) batch.push_back(make_image(kNormalLabel, -1));
  SamplingConfig cfg;
  cfg.normal_cap = 8;
  const auto negs = negative_candidates(0, 0, batch, 0, h, cfg);
  CHECK(negs.size() == 8);
  CHECK(negs.front() == 1);
  CHECK(negs.back() == 8);
}

TEST_CASE("negative rule property over 1000 random batches") {
  const auto h = DiseaseHierarchy::synthetic_default();
  Rng rng(303);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 24));
    std::vector<LabeledImage> batch;
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < 0.3) {
        batch.push_back(make_image(kNormalLabel, -1));
      } else {
        const int d = static_cast<int>(rng.uniform_int(0, 7));
        batch.push_back(make_image(d, h.part_of(d)));
        anchors.push_back(i);
      }
    }
    if (anchors.empty()) continue;
    const std::size_t a = anchors[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(anchors.size()) - 1))];
    const auto negs = negative_candidates(batch[a].label, batch[a].body_part, batch, a, h, {});
    std::size_t normal_count = 0;
    for (std::size_t i : negs) {
      REQUIRE(i != a);
      const auto& img = batch[i];
      const bool is_normal = !img.diseased();
      const bool hard_similar =
          img.diseased() && h.part_of(img.label) == batch[a].body_part &&
          img.label != batch[a].label;
      CHECK((is_normal || hard_similar));
      normal_count += is_normal;
    }
    CHECK(normal_count <= SamplingConfig{}.normal_cap);
    // completeness: every eligible image was selected (up to the normal cap)
    for (std::size_t i = 0; i < n; ++i) {
      if (i == a) continue;
      const auto& img = batch[i];
      const bool eligible = !img.diseased() ||
                            (h.part_of(img.label) == batch[a].body_part &&
                             img.label != batch[a].label);
      const bool selected = std::find(negs.begin(), negs.end(), i) != negs.end();
      if (eligible && img.diseased()) CHECK(selected);
    }
  }
}

TEST_CASE("build_pairs counts and ground-truth box priority") {
  const auto h = DiseaseHierarchy::synthetic_default();
  const auto stats = radiomics::NormalizationStats::identity();
  Rng rng(404);
  std::vector<LabeledImage> batch;
  for (int i = 0; i < 3; ++i) {
    LabeledImage img = make_image(i, h.part_of(i), i == 0);
    for (std::size_t p = 0; p < img.pixels.size(); ++p) img.pixels[p] = rng.uniform();
    batch.push_back(img);
  }
  for (int i = 0; i < 5; ++i) batch.push_back(make_image(kNormalLabel, -1));

  std::vector<std::optional<BoundingBox>> boxes(batch.size());
  for (std::size_t i = 0; i < 3; ++i) boxes[i] = BoundingBox{4, 4, 12, 12};

  const auto pairs = build_pairs(batch, boxes, stats, h, {});
  REQUIRE(pairs.size() == 3);  // one per disease-positive image
  CHECK(pairs[0].box == *batch[0].gt_box);  // annotated uses gt verbatim
  CHECK(pairs[1].box == BoundingBox{4, 4, 12, 12});

  // all-normal batch: zero pairs
  std::vector<LabeledImage> normals(4, make_image(kNormalLabel, -1));
  std::vector<std::optional<BoundingBox>> none(4);
  CHECK(build_pairs(normals, none, stats, h, {}).empty());

  // a diseased image without a box is skipped and reported
  std::vector<std::optional<BoundingBox>> missing(batch.size());
  for (std::size_t i = 1; i < 3; ++i) missing[i] = BoundingBox{4, 4, 12, 12};
  std::size_t skipped = 0;
  const auto partial = build_pairs(batch, missing, stats, h, {},
                                   [&](std::size_t, const std::string&) { ++skipped; });
  CHECK(partial.size() == 3);  // image 0 is annotated: gt box still applies
  std::vector<std::optional<BoundingBox>> missing2(batch.size());
  missing2[0] = BoundingBox{4, 4, 12, 12};
  const auto partial2 = build_pairs(batch, missing2, stats, h, {},
                                    [&](std::size_t, const std::string&) { ++skipped; });
  CHECK(partial2.size() == 1);
  CHECK(skipped == 2);
}
