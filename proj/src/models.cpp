#include "kacl/models.hpp"

#include <cmath>
#include <random>

#include "kacl/ops.hpp"
#include "kacl/rng.hpp"

namespace kacl {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::mt19937_64 rng(seed);
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (std::size_t i = 0; i < t.size(); ++i) {
    // 53-bit uniform in [0,1); avoids distribution-object portability quirks
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    t[i] = (2.0 * u - 1.0) * bound;
  }
  return t;
}

ImageEncoder::ImageEncoder(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.widths.size() != 4) throw ConfigError("ImageEncoder: exactly 4 stage widths required");
  std::size_t in_ch = 1;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out_ch = cfg.widths[s];
    const std::size_t fan_in = in_ch * 9, fan_out = out_ch * 9;
    w_.push_back(glorot_uniform({out_ch, in_ch, 3, 3}, fan_in, fan_out, mix_seed(seed, 10 + s)));
    b_.push_back(Tensor::zeros({out_ch}, /*requires_grad=*/true));
    in_ch = out_ch;
  }
}

EncodeResult ImageEncoder::encode(const Tensor& image) const {
  Tensor x;
  if (image.rank() == 2)
    x = ops::reshape(image, {1, 1, image.shape()[0], image.shape()[1]});
  else if (image.rank() == 3 && image.shape()[0] == 1)
    x = ops::reshape(image, {1, 1, image.shape()[1], image.shape()[2]});
  else
    throw ConfigError("encode_image: expected [H,W] or [1,H,W], got " + shape_str(image.shape()));
  const std::size_t H = x.shape()[2], W = x.shape()[3];
  if (H < 16 || W < 16)
    throw ConfigError("encode_image: image must be at least 16x16, got " + shape_str(x.shape()));

  Tensor stage4;
  for (std::size_t s = 0; s < 4; ++s) {
    x = ops::conv2d(x, w_[s], b_[s], /*stride=*/1, /*padding=*/1);
    x = ops::relu(x);
    if (s == 3) stage4 = x;  // pre-pool map, the Grad-CAM target
    x = ops::max_pool2d(x, 2, 2);
  }
  Tensor pooled = ops::global_avg_pool(x);  // [1, D]
  Tensor y = ops::reshape(pooled, {pooled.shape()[1]});
  return {y, stage4};
}

std::vector<Tensor> ImageEncoder::params() const {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < 4; ++s) {
    out.push_back(w_[s]);
    out.push_back(b_[s]);
  }
  return out;
}

namespace {
std::string stage_name(std::size_t s, const char* kind) {
  return "fi.stage" + std::to_string(s + 1) + "." + kind;
}
}  // namespace

void ImageEncoder::save(Checkpoint& ckpt) const {
  for (std::size_t s = 0; s < 4; ++s) {
    ckpt.tensors[stage_name(s, "w")] = w_[s];
    ckpt.tensors[stage_name(s, "b")] = b_[s];
  }
}

void ImageEncoder::load(const Checkpoint& ckpt) {
  w_.clear();
  b_.clear();
  for (std::size_t s = 0; s < 4; ++s) {
    Tensor w = ckpt.get(stage_name(s, "w")).clone();
    Tensor b = ckpt.get(stage_name(s, "b")).clone();
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    w_.push_back(w);
    b_.push_back(b);
  }
}

RadiomicEncoder::RadiomicEncoder(const ModelConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> dims{cfg.radiomic_dim};
  dims.insert(dims.end(), cfg.radiomic_hidden.begin(), cfg.radiomic_hidden.end());
  dims.push_back(cfg.repr_dim());
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    w_.push_back(glorot_uniform({dims[l + 1], dims[l]}, dims[l], dims[l + 1],
                                mix_seed(seed, 20 + l)));
    b_.push_back(Tensor::zeros({dims[l + 1]}, /*requires_grad=*/true));
  }
}

Tensor RadiomicEncoder::encode(const Tensor& r) const {
  if (r.rank() != 1 || r.shape()[0] != w_[0].shape()[1])
    throw ConfigError("encode_radiomics: expected [" + std::to_string(w_[0].shape()[1]) +
                      "], got " + shape_str(r.shape()));
  for (std::size_t i = 0; i < r.size(); ++i)
    if (!std::isfinite(r[i]))
      throw DataError("encode_radiomics: non-finite feature at index " + std::to_string(i));
  Tensor x = r;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    x = ops::linear(x, w_[l], b_[l]);
    if (l + 1 < w_.size()) x = ops::relu(x);
  }
  return x;
}

std::vector<Tensor> RadiomicEncoder::params() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    out.push_back(w_[l]);
    out.push_back(b_[l]);
  }
  return out;
}

void RadiomicEncoder::save(Checkpoint& ckpt) const {
  for (std::size_t l = 0; l < w_.size(); ++l) {
    ckpt.tensors["fr.l" + std::to_string(l + 1) + ".w"] = w_[l];
    ckpt.tensors["fr.l" + std::to_string(l + 1) + ".b"] = b_[l];
  }
}

void RadiomicEncoder::load(const Checkpoint& ckpt) {
  for (std::size_t l = 0; l < w_.size(); ++l) {
    Tensor w = ckpt.get("fr.l" + std::to_string(l + 1) + ".w").clone();
    Tensor b = ckpt.get("fr.l" + std::to_string(l + 1) + ".b").clone();
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    w_[l] = w;
    b_[l] = b;
  }
}

Projector::Projector(std::size_t in, std::size_t out, std::uint64_t seed) {
  w_.push_back(glorot_uniform({in, in}, in, in, mix_seed(seed, 30)));
  b_.push_back(Tensor::zeros({in}, true));
  w_.push_back(glorot_uniform({out, in}, in, out, mix_seed(seed, 31)));
  b_.push_back(Tensor::zeros({out}, true));
}

Tensor Projector::project(const Tensor& y) const {
  Tensor h = ops::relu(ops::linear(y, w_[0], b_[0]));
  return ops::linear(h, w_[1], b_[1]);
}

std::vector<Tensor> Projector::params() const { return {w_[0], b_[0], w_[1], b_[1]}; }

void Projector::save(Checkpoint& ckpt, const std::string& prefix) const {
  for (std::size_t l = 0; l < 2; ++l) {
    ckpt.tensors[prefix + ".l" + std::to_string(l + 1) + ".w"] = w_[l];
    ckpt.tensors[prefix + ".l" + std::to_string(l + 1) + ".b"] = b_[l];
  }
}

void Projector::load(const Checkpoint& ckpt, const std::string& prefix) {
  w_.resize(2);
  b_.resize(2);
  for (std::size_t l = 0; l < 2; ++l) {
    Tensor w = ckpt.get(prefix + ".l" + std::to_string(l + 1) + ".w").clone();
    Tensor b = ckpt.get(prefix + ".l" + std::to_string(l + 1) + ".b").clone();
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    w_[l] = w;
    b_[l] = b;
  }
}

ClassifierHead::ClassifierHead(std::size_t in, std::size_t k, std::uint64_t seed) {
  w_ = glorot_uniform({k, in}, in, k, mix_seed(seed, 40));
  b_ = Tensor::zeros({k}, true);
}

Tensor ClassifierHead::logits(const Tensor& y) const { return ops::linear(y, w_, b_); }
Tensor ClassifierHead::classify(const Tensor& y) const { return ops::sigmoid(logits(y)); }

std::vector<Tensor> ClassifierHead::params() const { return {w_, b_}; }

void ClassifierHead::save(Checkpoint& ckpt) const {
  ckpt.tensors["head.w"] = w_;
  ckpt.tensors["head.b"] = b_;
}

void ClassifierHead::load(const Checkpoint& ckpt) {
  w_ = ckpt.get("head.w").clone();
  b_ = ckpt.get("head.b").clone();
  w_.set_requires_grad(true);
  b_.set_requires_grad(true);
}

KaclModel KaclModel::init(const ModelConfig& cfg) {
  KaclModel m;
  m.config = cfg;
  m.image_encoder = ImageEncoder(cfg, mix_seed(cfg.seed, 1));
  m.radiomic_encoder = RadiomicEncoder(cfg, mix_seed(cfg.seed, 2));
  m.proj_image = Projector(cfg.repr_dim(), cfg.proj_dim, mix_seed(cfg.seed, 3));
  m.proj_radiomic = Projector(cfg.repr_dim(), cfg.proj_dim, mix_seed(cfg.seed, 4));
  m.head = ClassifierHead(cfg.repr_dim(), cfg.num_classes, mix_seed(cfg.seed, 5));
  return m;
}

std::vector<Tensor> KaclModel::all_params() const {
  std::vector<Tensor> out;
  auto append = [&out](std::vector<Tensor> v) {
    out.insert(out.end(), v.begin(), v.end());
  };
  append(image_encoder.params());
  append(radiomic_encoder.params());
  append(proj_image.params());
  append(proj_radiomic.params());
  append(head.params());
  return out;
}

void KaclModel::save(Checkpoint& ckpt) const {
  image_encoder.save(ckpt);
  radiomic_encoder.save(ckpt);
  proj_image.save(ckpt, "gi");
  proj_radiomic.save(ckpt, "gr");
  head.save(ckpt);
}

KaclModel KaclModel::load(const Checkpoint& ckpt, const ModelConfig& cfg, bool eval_only) {
  KaclModel m;
  m.config = cfg;
  m.image_encoder.load(ckpt);
  m.head.load(ckpt);
  if (!eval_only) {
    m.radiomic_encoder = RadiomicEncoder(cfg, 0);
    m.radiomic_encoder.load(ckpt);
    m.proj_image = Projector(cfg.repr_dim(), cfg.proj_dim, 0);
    m.proj_image.load(ckpt, "gi");
    m.proj_radiomic = Projector(cfg.repr_dim(), cfg.proj_dim, 0);
    m.proj_radiomic.load(ckpt, "gr");
  }
  return m;
}

}  // namespace kacl
