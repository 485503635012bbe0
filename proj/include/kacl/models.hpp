#pragma once
// The four networks: image encoder f_i (4-stage toy CNN), radiomic encoder
// f_r (3-layer MLP), projectors g_i/g_r (2-layer MLPs, independent weights),
// and the linear sigmoid classifier head.

#include <cstdint>
#include <vector>

#include "kacl/serialize.hpp"
#include "kacl/tensor.hpp"

namespace kacl {

struct ModelConfig {
  std::vector<std::size_t> widths{8, 16, 32, 64};  // stage channel counts; D = widths.back()
  std::size_t proj_dim = 32;                       // P
  std::size_t radiomic_dim = 33;
  std::vector<std::size_t> radiomic_hidden{64, 64};
  std::size_t num_classes = 8;  // K
  std::uint64_t seed = 0;

  std::size_t repr_dim() const { return widths.back(); }
};

struct EncodeResult {
  Tensor y;       // representation y_i, [D]
  Tensor stage4;  // stage-4 activation map [1,C4,h,w], the Grad-CAM target
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ModelConfig& cfg, std::uint64_t seed);

  // image: [1,H,W] or [H,W], values in [0,1]; H,W >= 16
  EncodeResult encode(const Tensor& image) const;

  std::vector<Tensor> params() const;
  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  std::vector<Tensor> w_, b_;  // per stage: conv kernel [F,C,3,3] and bias [F]
};

class RadiomicEncoder {
 public:
  RadiomicEncoder() = default;
  RadiomicEncoder(const ModelConfig& cfg, std::uint64_t seed);

  Tensor encode(const Tensor& r) const;  // [33] -> [D], rejects non-finite input

  std::vector<Tensor> params() const;
  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  std::vector<Tensor> w_, b_;
};

class Projector {
 public:
  Projector() = default;
  Projector(std::size_t in, std::size_t out, std::uint64_t seed);

  Tensor project(const Tensor& y) const;  // [D] -> [P]

  std::vector<Tensor> params() const;
  void save(Checkpoint& ckpt, const std::string& prefix) const;
  void load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  std::vector<Tensor> w_, b_;
};

class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t in, std::size_t k, std::uint64_t seed);

  Tensor logits(const Tensor& y) const;    // [D] -> [K]
  Tensor classify(const Tensor& y) const;  // [D] -> [K] sigmoid probs

  std::vector<Tensor> params() const;
  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  Tensor w_, b_;
};

// Full model bundle. Evaluation only needs image_encoder + head; load()
// tolerates checkpoints stripped to those two.
struct KaclModel {
  ModelConfig config;
  ImageEncoder image_encoder;
  RadiomicEncoder radiomic_encoder;
  Projector proj_image, proj_radiomic;
  ClassifierHead head;

  static KaclModel init(const ModelConfig& cfg);

  std::vector<Tensor> all_params() const;
  void save(Checkpoint& ckpt) const;
  // eval_only skips f_r/g_i/g_r; full load requires all networks present.
  static KaclModel load(const Checkpoint& ckpt, const ModelConfig& cfg, bool eval_only);
};

// Deterministic uniform +-sqrt(6/(fan_in+fan_out)) initialization.
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

}  // namespace kacl
