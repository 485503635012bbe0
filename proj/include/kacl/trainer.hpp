#pragma once
// Training loop (classification forward -> CAM boxes -> radiomics ->
// contrastive loss -> joint update), evaluation (per-class AUC, localization
// accuracy under IoU threshold sweeps), and the four-variant ablation
// harness.

#include <optional>
#include <string>
#include <vector>

#include "kacl/gradcam.hpp"
#include "kacl/losses.hpp"
#include "kacl/models.hpp"
#include "kacl/sampling.hpp"
#include "kacl/synthcxr.hpp"

namespace kacl {

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double lr0 = 0.001;
  double lr_decay = 0.1;
  std::size_t decay_period = 3;
  std::size_t warmup_epochs = 4;
  // Warmup is classification-only; both readings of "linear warmup only for
  // the disease classification task" are available separately.
  bool warmup_gate_contrastive = true;  // lambda forced to 0 during warmup
  bool warmup_lr_ramp = false;          // linear lr ramp 0 -> lr0 over warmup
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelConfig model;
  SamplingConfig sampling;

  void validate() const;
  double lr_at(std::size_t epoch) const;      // lr0 * decay^floor(e/period), ramped if enabled
  double lambda_at(std::size_t epoch) const;  // 0 during gated warmup

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  std::string config_hash() const;  // sha256 of the canonical JSON
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1, double beta2, double eps);

  void zero_grad();
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct StepMetrics {
  double focal = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
};

// One optimizer update on a batch. lambda_now == 0 skips the whole
// contrastive branch (no CAM boxes, no radiomics).
StepMetrics train_step(KaclModel& model, Adam& opt, const std::vector<LabeledImage>& batch,
                       double lambda_now, double lr, const LossConfig& loss_cfg,
                       const SamplingConfig& sampling_cfg,
                       const radiomics::NormalizationStats& stats, const DiseaseHierarchy& h);

// CAM box for one image and class (ground-truth class during training and
// per-class localization evaluation).
BoundingBox predict_box(const KaclModel& model, const Tensor& image, int target_class,
                        double cam_threshold);

struct EpochLog {
  std::size_t epoch;
  double focal, contrastive, lr, val_auc, train_loc_iou;
};

struct FitResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_val_auc = 0.0;
  std::vector<EpochLog> log;
};

// Full schedule; writes per-epoch checkpoints, best-by-validation-AUC
// checkpoint, and an append-only CSV log under out_dir.
FitResult fit(const synthcxr::Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
              const std::string& tag = "", bool quiet = false);

// Midrank Mann-Whitney AUC; nullopt when only one class is present.
std::optional<double> auc_mann_whitney(const std::vector<double>& scores,
                                       const std::vector<int>& labels);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> auc;  // per class; absent = undefined
  double mean_auc = 0.0;                   // over defined classes
  std::vector<double> thresholds;          // T(IoU) sweep
  std::vector<std::vector<std::optional<double>>> loc_acc;  // [threshold][class]
  std::vector<double> loc_mean;                             // per threshold
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string checkpoint_id;

  std::string to_json() const;
  std::string to_text() const;
};

// AUC on the unannotated test split; localization on the annotated test
// split, correct only when iou > T (strict).
EvalReport evaluate(const KaclModel& model, const synthcxr::Dataset& ds,
                    const LossConfig& loss_cfg, const std::vector<double>& thresholds);

// Per-class scores for an arbitrary index list (used by fit for validation).
std::vector<std::vector<double>> class_scores(const KaclModel& model,
                                              const synthcxr::Dataset& ds,
                                              const std::vector<std::size_t>& indices);

struct AblationResult {
  // Base, w. FL, w. BYOP, Full model, in that order.
  std::vector<std::pair<std::string, EvalReport>> variants;

  std::string to_json() const;
  std::string to_text() const;
};

AblationResult ablate(const synthcxr::Dataset& ds, const TrainConfig& cfg,
                      const std::string& out_dir, bool quiet = false);

// Frozen z-score statistics from the annotated training subset's
// ground-truth boxes.
radiomics::NormalizationStats fit_radiomic_stats(const synthcxr::Dataset& ds);

std::string sha256_hex(const std::string& text);

}  // namespace kacl
