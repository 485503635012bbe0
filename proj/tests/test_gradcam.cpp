#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kacl/gradcam.hpp"
#include "kacl/rng.hpp"

using namespace kacl;

namespace {
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.widths = {2, 3, 4, 5};
  cfg.proj_dim = 3;
  cfg.num_classes = 4;
  return cfg;
}

Tensor random_image(Rng& rng, std::size_t h, std::size_t w) {
  Tensor t = Tensor::zeros({h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

// Head whose class-0 logit is exactly y[0]; all CAM weight lands on stage-4
// channel 0 with the analytic value 1/(h*w) in total.
ClassifierHead channel0_head(const ModelConfig& cfg) {
  ClassifierHead head(cfg.repr_dim(), cfg.num_classes, 0);
  auto params = head.params();
  for (Tensor p : params)
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.0;
  params[0][0] = 1.0;  // W[0][0]
  return head;
}
}  // namespace

TEST_CASE("gradcam analytic mean-channel case") {
  const ModelConfig cfg = tiny_config();
  ImageEncoder enc(cfg, 21);
  ClassifierHead head = channel0_head(cfg);
  Rng rng(31);
  Tensor img = random_image(rng, 32, 32);

  EncodeResult res = enc.encode(img);
  const std::size_t h = res.stage4.shape()[2], w = res.stage4.shape()[3];
  std::vector<double> chan0(res.stage4.data(), res.stage4.data() + h * w);

  Heatmap hm = gradcam(enc, head, img, 0);
  CHECK(hm.width == 32);
  CHECK(hm.height == 32);
  std::vector<double> expected = bilinear_resize(chan0, w, h, 32, 32);
  const double mx = *std::max_element(expected.begin(), expected.end());
  REQUIRE(mx > 0.0);
  double max_dev = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i)
    max_dev = std::max(max_dev, std::abs(hm.values[i] - expected[i] / mx));
  CHECK(max_dev < 1e-6);
}

TEST_CASE("negative channel weights give a zero heatmap") {
  const ModelConfig cfg = tiny_config();
  ImageEncoder enc(cfg, 22);
  ClassifierHead head = channel0_head(cfg);
  head.params()[0][0] = -1.0;  // stage-4 activations are nonnegative post-relu
  Rng rng(32);
  Heatmap hm = gradcam(enc, head, random_image(rng, 32, 32), 0);
  for (double v : hm.values) CHECK(v == 0.0);
}

TEST_CASE("heatmap max is 1 for non-degenerate input") {
  const ModelConfig cfg = tiny_config();
  ImageEncoder enc(cfg, 23);
  ClassifierHead head(cfg.repr_dim(), cfg.num_classes, 24);
  Rng rng(33);
  Heatmap hm = gradcam(enc, head, random_image(rng, 32, 32), 1);
  const double mx = *std::max_element(hm.values.begin(), hm.values.end());
  CHECK((mx == doctest::Approx(1.0).epsilon(1e-12) || mx == 0.0));
}

TEST_CASE("gradcam leaves parameter gradients untouched") {
  const ModelConfig cfg = tiny_config();
  ImageEncoder enc(cfg, 25);
  ClassifierHead head(cfg.repr_dim(), cfg.num_classes, 26);
  Rng rng(34);
  gradcam(enc, head, random_image(rng, 32, 32), 2);
  for (const Tensor& p : enc.params()) CHECK(!p.has_grad());
  for (const Tensor& p : head.params()) CHECK(!p.has_grad());
}

TEST_CASE("gradcam is deterministic") {
  const ModelConfig cfg = tiny_config();
  ImageEncoder enc(cfg, 27);
  ClassifierHead head(cfg.repr_dim(), cfg.num_classes, 28);
  Rng rng(35);
  Tensor img = random_image(rng, 32, 32);
  Heatmap a = gradcam(enc, head, img, 0);
  Heatmap b = gradcam(enc, head, img, 0);
  CHECK(a.values == b.values);
}

TEST_CASE("bilinear resize identity at equal size") {
  std::vector<double> src = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(bilinear_resize(src, 3, 3, 3, 3) == src);
}

TEST_CASE("threshold_to_bbox block case") {
  Heatmap hm;
  hm.width = 64;
  hm.height = 64;
  hm.values.assign(64 * 64, 0.0);
  for (std::size_t y = 20; y < 30; ++y)
    for (std::size_t x = 20; x < 30; ++x) hm.values[y * 64 + x] = 1.0;
  const BoundingBox fb = centered_fallback_box(64, 64);
  CHECK(threshold_to_bbox(hm, 0.5, fb) == BoundingBox{20, 20, 30, 30});
}

TEST_CASE("uniform sub-threshold map falls back") {
  Heatmap hm;
  hm.width = 64;
  hm.height = 64;
  hm.values.assign(64 * 64, 0.3);
  const BoundingBox fb = centered_fallback_box(64, 64);
  CHECK(threshold_to_bbox(hm, 0.5, fb) == fb);
  // fallback is the centered box of a quarter of the area
  CHECK(fb == BoundingBox{16, 16, 48, 48});
}

TEST_CASE("largest component wins with two blobs") {
  Heatmap hm;
  hm.width = 64;
  hm.height = 64;
  hm.values.assign(64 * 64, 0.0);
  for (std::size_t y = 5; y < 8; ++y)  // 3x3 = 9
    for (std::size_t x = 5; x < 8; ++x) hm.values[y * 64 + x] = 1.0;
  for (std::size_t y = 40; y < 45; ++y)  // 5x5 = 25
    for (std::size_t x = 30; x < 35; ++x) hm.values[y * 64 + x] = 1.0;
  const BoundingBox fb = centered_fallback_box(64, 64);
  CHECK(threshold_to_bbox(hm, 0.5, fb) == BoundingBox{30, 40, 35, 45});
}

TEST_CASE("threshold is strictly greater-than") {
  Heatmap hm;
  hm.width = 4;
  hm.height = 4;
  hm.values.assign(16, 0.5);  // exactly at threshold: excluded
  hm.values[5] = 0.6;
  const BoundingBox fb{0, 0, 4, 4};
  CHECK(threshold_to_bbox(hm, 0.5, fb) == BoundingBox{1, 1, 2, 2});
}
