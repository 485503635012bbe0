#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "kacl/radiomics.hpp"
#include "kacl/rng.hpp"
#include "kacl/synthcxr.hpp"

using namespace kacl;
namespace sx = kacl::synthcxr;
namespace fs = std::filesystem;

namespace {
sx::DatasetSpec small_spec() {
  sx::DatasetSpec spec;
  spec.n_images = 120;
  spec.annotated_fraction = 0.1;
  spec.seed = 7;
  return spec;
}
}  // namespace

TEST_CASE("spec validation and json round trip") {
  sx::DatasetSpec spec = small_spec();
  spec.validate();
  const auto back = sx::DatasetSpec::from_json(spec.to_json());
  CHECK(back.n_images == spec.n_images);
  CHECK(back.imbalance_ratio == spec.imbalance_ratio);
  CHECK(back.seed == spec.seed);

  sx::DatasetSpec bad = spec;
  bad.train_frac = 0.9;  // fractions no longer sum to 1
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec;
  bad.noise_sigma = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  const sx::DatasetSpec spec = small_spec();
  const auto a = sx::generate_in_memory(spec);
  const auto b = sx::generate_in_memory(spec);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].pixels.buffer() == b.images[i].pixels.buffer());
    CHECK(a.images[i].label == b.images[i].label);
    CHECK(a.images[i].gt_box == b.images[i].gt_box);
  }
  sx::DatasetSpec other = spec;
  other.seed = 8;
  const auto c = sx::generate_in_memory(other);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.images.size() && !any_diff; ++i)
    any_diff = a.images[i].pixels.buffer() != c.images[i].pixels.buffer();
  CHECK(any_diff);
}

TEST_CASE("imbalance ratio controls the normal count") {
  sx::DatasetSpec spec;
  spec.n_images = 1000;
  spec.imbalance_ratio = 3.4;
  spec.annotated_fraction = 0.02;
  const auto ds = sx::generate_in_memory(spec);
  std::size_t normal = 0;
  for (const auto& img : ds.images) normal += !img.diseased();
  // 1000 * 3.4/4.4 = 772.7...
  CHECK(normal >= 770);
  CHECK(normal <= 775);
}

TEST_CASE("splits partition the ids and annotated images have boxes") {
  const auto ds = sx::generate_in_memory(small_spec());
  std::vector<std::size_t> all;
  for (const auto* split :
       {&ds.train, &ds.val, &ds.test, &ds.annotated_train, &ds.annotated_test})
    all.insert(all.end(), split->begin(), split->end());
  std::sort(all.begin(), all.end());
  CHECK(all.size() == ds.images.size());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());  // no duplicates

  for (std::size_t i : ds.annotated_train) {
    CHECK(ds.images[i].annotated);
    CHECK(ds.images[i].gt_box.has_value());
    CHECK(ds.images[i].diseased());
  }
  for (std::size_t i : ds.train) CHECK(!ds.images[i].annotated);
}

TEST_CASE("gt box contains the lesion's brightest deviation") {
  const auto ds = sx::generate_in_memory(small_spec());
  // compare each diseased image against a normal-background twin is not
  // possible post-noise; instead check boxes are tight and in-bounds
  const int S = static_cast<int>(small_spec().image_size);
  for (const auto& img : ds.images) {
    if (!img.diseased()) {
      CHECK(!img.gt_box.has_value());
      continue;
    }
    REQUIRE(img.gt_box.has_value());
    const auto& b = *img.gt_box;
    CHECK(b.x0 >= 0);
    CHECK(b.y0 >= 0);
    CHECK(b.x1 <= S);
    CHECK(b.y1 <= S);
    CHECK(b.area() >= 9);
  }
}

TEST_CASE("pgm16 round trip is exact for grid-aligned pixels") {
  Rng rng(55);
  Tensor img = Tensor::zeros({16, 16});
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = std::round(rng.uniform() * 65535.0) / 65535.0;
  const std::string path = (fs::temp_directory_path() / "kacl_rt.pgm").string();
  sx::write_pgm16(path, img);
  Tensor back = sx::read_pgm16(path);
  CHECK(back.shape() == img.shape());
  CHECK(back.buffer() == img.buffer());
  fs::remove(path);
}

TEST_CASE("generate to disk, load back, verify identity and checksums") {
  const auto tmp = fs::temp_directory_path() / "kacl_ds_test";
  fs::remove_all(tmp);
  sx::DatasetSpec spec = small_spec();
  spec.n_images = 40;
  sx::generate(spec, tmp.string());
  CHECK(fs::exists(tmp / "manifest.json"));
  CHECK(fs::exists(tmp / "hierarchy.json"));

  const auto mem = sx::generate_in_memory(spec);
  const auto disk = sx::load(tmp.string());
  REQUIRE(disk.images.size() == mem.images.size());
  for (std::size_t i = 0; i < mem.images.size(); ++i) {
    CHECK(disk.images[i].pixels.buffer() == mem.images[i].pixels.buffer());
    CHECK(disk.images[i].label == mem.images[i].label);
    CHECK(disk.images[i].gt_box == mem.images[i].gt_box);
    CHECK(disk.images[i].annotated == mem.images[i].annotated);
  }
  CHECK(disk.train == mem.train);
  CHECK(disk.annotated_test == mem.annotated_test);

  // corrupt one image; load must refuse
  {
    std::fstream f(tmp / "images" / "img_00003.pgm",
                   std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-2, std::ios::end);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(sx::load(tmp.string()), DataError);
  fs::remove_all(tmp);
}

TEST_CASE("double generate produces byte-identical files") {
  const auto t1 = fs::temp_directory_path() / "kacl_ds_a";
  const auto t2 = fs::temp_directory_path() / "kacl_ds_b";
  fs::remove_all(t1);
  fs::remove_all(t2);
  sx::DatasetSpec spec = small_spec();
  spec.n_images = 20;
  sx::generate(spec, t1.string());
  sx::generate(spec, t2.string());
  for (const auto& entry : fs::recursive_directory_iterator(t1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), t1);
    CHECK(sx::sha256_file(entry.path().string()) ==
          sx::sha256_file((t2 / rel).string()));
  }
  fs::remove_all(t1);
  fs::remove_all(t2);
}

TEST_CASE("lesion classes are separable by radiomics of the gt box") {
  sx::DatasetSpec spec;
  spec.n_images = 400;
  spec.imbalance_ratio = 1.0;  // mostly diseased for this test
  spec.annotated_fraction = 0.05;
  spec.seed = 11;
  const auto ds = sx::generate_in_memory(spec);

  std::vector<radiomics::FeatureVector> feats;
  std::vector<int> labels;
  for (const auto& img : ds.images) {
    if (!img.diseased()) continue;
    feats.push_back(radiomics::raw_features(img.pixels, *img.gt_box));
    labels.push_back(img.label);
  }
  REQUIRE(feats.size() > 100);
  const auto stats = radiomics::NormalizationStats::fit(feats);
  auto z = [&](const radiomics::FeatureVector& f) {
    radiomics::FeatureVector out{};
    for (int i = 0; i < radiomics::kFeatureCount; ++i) {
      const double sd = stats.stddev[i] > 0 ? stats.stddev[i] : 1.0;
      out[i] = (f[i] - stats.mean[i]) / sd;
    }
    return out;
  };
  // leave-one-out nearest class centroid in z-space
  const int K = 8;
  std::vector<radiomics::FeatureVector> centroid(K);
  std::vector<double> count(K, 0.0);
  for (auto& c : centroid) c.fill(0.0);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto v = z(feats[i]);
    for (int k = 0; k < radiomics::kFeatureCount; ++k) centroid[labels[i]][k] += v[k];
    count[labels[i]] += 1.0;
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto v = z(feats[i]);
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < K; ++c) {
      if (count[c] == 0.0) continue;
      const double leave = c == labels[i] ? 1.0 : 0.0;
      double d = 0.0;
      for (int k = 0; k < radiomics::kFeatureCount; ++k) {
        const double mean_k = (centroid[c][k] - leave * v[k]) / (count[c] - leave);
        d += (v[k] - mean_k) * (v[k] - mean_k);
      }
      if (best < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    hits += best == labels[i];
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(feats.size());
  INFO("nearest-centroid accuracy ", acc);
  CHECK(acc > 0.8);
}
