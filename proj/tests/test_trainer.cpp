#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kacl/rng.hpp"
#include "kacl/synthcxr.hpp"
#include "kacl/trainer.hpp"

using namespace kacl;
namespace fs = std::filesystem;

namespace {
TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.warmup_epochs = 1;
  cfg.model.widths = {2, 3, 4, 5};
  cfg.model.proj_dim = 4;
  cfg.model.radiomic_hidden = {8, 8};
  return cfg;
}

synthcxr::Dataset tiny_dataset(std::uint64_t seed = 7) {
  synthcxr::DatasetSpec spec;
  spec.n_images = 48;
  spec.annotated_fraction = 0.1;
  spec.image_size = 32;
  spec.seed = seed;
  return synthcxr::generate_in_memory(spec);
}
}  // namespace

TEST_CASE("TrainConfig validation, json round trip, stable hash") {
  TrainConfig cfg = tiny_train_config();
  cfg.validate();
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.config_hash() == cfg.config_hash());
  TrainConfig other = cfg;
  other.lr0 = 0.002;
  CHECK(other.config_hash() != cfg.config_hash());

  TrainConfig bad = cfg;
  bad.warmup_epochs = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("lr schedule matches the closed form") {
  TrainConfig cfg;
  cfg.lr0 = 0.001;
  cfg.lr_decay = 0.1;
  cfg.decay_period = 5;
  cfg.warmup_lr_ramp = false;
  CHECK(cfg.lr_at(0) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.lr_at(4) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.lr_at(5) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(cfg.lr_at(10) == doctest::Approx(0.00001).epsilon(1e-12));

  cfg.warmup_lr_ramp = true;
  cfg.warmup_epochs = 4;
  CHECK(cfg.lr_at(0) == doctest::Approx(0.001 * 0.25).epsilon(1e-12));
  CHECK(cfg.lr_at(3) == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("contrastive weight is gated during warmup") {
  TrainConfig cfg;
  cfg.warmup_epochs = 4;
  cfg.loss.lambda = 0.5;
  CHECK(cfg.lambda_at(0) == 0.0);
  CHECK(cfg.lambda_at(3) == 0.0);
  CHECK(cfg.lambda_at(4) == 0.5);
  cfg.warmup_gate_contrastive = false;
  CHECK(cfg.lambda_at(0) == 0.5);
}

TEST_CASE("adam single step has the textbook magnitude") {
  Tensor p = Tensor::from({1}, {1.0}, true);
  Adam opt({p}, 0.9, 0.999, 1e-8);
  p.grad()[0] = 0.5;
  opt.step(0.1);
  // first step: mhat = g, vhat = g^2 -> update ~= lr * sign(g)
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("auc worked cases") {
  CHECK(*auc_mann_whitney({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(*auc_mann_whitney({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  // ties handled by midranks: all equal scores -> 0.5
  CHECK(*auc_mann_whitney({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK(!auc_mann_whitney({0.1, 0.2}, {1, 1}).has_value());
  CHECK(!auc_mann_whitney({0.1, 0.2}, {0, 0}).has_value());

  Rng rng(66);
  std::vector<double> scores(10000);
  std::vector<int> labels(10000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform();
    labels[i] = rng.uniform_int(0, 1);
  }
  CHECK(*auc_mann_whitney(scores, labels) == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("lambda 0 leaves the radiomic branch untouched") {
  const auto ds = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  KaclModel model = KaclModel::init(cfg.model);
  Adam opt(model.all_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  const auto stats = radiomics::NormalizationStats::identity();

  std::vector<std::vector<double>> before;
  for (const Tensor& p : model.radiomic_encoder.params()) before.push_back(p.buffer());
  for (const Tensor& p : model.proj_image.params()) before.push_back(p.buffer());
  for (const Tensor& p : model.proj_radiomic.params()) before.push_back(p.buffer());

  std::vector<LabeledImage> batch(ds.images.begin(), ds.images.begin() + 16);
  StepMetrics m = train_step(model, opt, batch, 0.0, 0.001, cfg.loss, cfg.sampling, stats,
                             ds.hierarchy);
  CHECK(m.pairs == 0);
  CHECK(m.contrastive == 0.0);
  CHECK(m.focal > 0.0);

  std::size_t k = 0;
  for (const Tensor& p : model.radiomic_encoder.params()) CHECK(p.buffer() == before[k++]);
  for (const Tensor& p : model.proj_image.params()) CHECK(p.buffer() == before[k++]);
  for (const Tensor& p : model.proj_radiomic.params()) CHECK(p.buffer() == before[k++]);
}

TEST_CASE("all-normal batch still updates the classifier") {
  const auto ds = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  KaclModel model = KaclModel::init(cfg.model);
  Adam opt(model.all_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  const auto stats = radiomics::NormalizationStats::identity();

  std::vector<LabeledImage> batch;
  for (const auto& img : ds.images)
    if (!img.diseased()) batch.push_back(img);
  REQUIRE(batch.size() >= 4);
  batch.resize(4);

  const auto head_before = model.head.params()[0].buffer();
  StepMetrics m = train_step(model, opt, batch, 0.5, 0.001, cfg.loss, cfg.sampling, stats,
                             ds.hierarchy);
  CHECK(m.pairs == 0);
  CHECK(m.contrastive == 0.0);
  CHECK(model.head.params()[0].buffer() != head_before);
}

TEST_CASE("contrastive step moves the radiomic branch") {
  const auto ds = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  KaclModel model = KaclModel::init(cfg.model);
  Adam opt(model.all_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  const auto stats = fit_radiomic_stats(ds);

  std::vector<LabeledImage> batch(ds.images.begin(), ds.images.begin() + 16);
  bool has_diseased = false;
  for (const auto& b : batch) has_diseased = has_diseased || b.diseased();
  REQUIRE(has_diseased);

  const auto fr_before = model.radiomic_encoder.params()[0].buffer();
  StepMetrics m = train_step(model, opt, batch, 0.5, 0.001, cfg.loss, cfg.sampling, stats,
                             ds.hierarchy);
  CHECK(m.pairs > 0);
  CHECK(model.radiomic_encoder.params()[0].buffer() != fr_before);
}

TEST_CASE("fit is deterministic: byte-identical checkpoints and logs") {
  const auto ds = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  const auto tmp = fs::temp_directory_path();
  const std::string d1 = (tmp / "kacl_fit_a").string();
  const std::string d2 = (tmp / "kacl_fit_b").string();
  fs::remove_all(d1);
  fs::remove_all(d2);
  const FitResult r1 = fit(ds, cfg, d1, "", true);
  const FitResult r2 = fit(ds, cfg, d2, "", true);
  CHECK(synthcxr::sha256_file(r1.best_checkpoint) ==
        synthcxr::sha256_file(r2.best_checkpoint));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    CHECK(r1.log[e].focal == r2.log[e].focal);
    CHECK(r1.log[e].contrastive == r2.log[e].contrastive);
    CHECK(r1.log[e].val_auc == r2.log[e].val_auc);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("evaluate produces a monotone localization table") {
  const auto ds = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  const auto tmp = (fs::temp_directory_path() / "kacl_eval_run").string();
  fs::remove_all(tmp);
  const FitResult fr = fit(ds, cfg, tmp, "", true);
  Checkpoint ckpt = Checkpoint::load(fr.best_checkpoint);
  KaclModel model = KaclModel::load(ckpt, cfg.model, true);
  const EvalReport rep = evaluate(model, ds, cfg.loss, {0.1, 0.3, 0.5, 0.7});
  CHECK(rep.auc.size() == cfg.model.num_classes);
  REQUIRE(rep.loc_acc.size() == 4);
  for (std::size_t c = 0; c < cfg.model.num_classes; ++c)
    for (std::size_t t = 1; t < rep.loc_acc.size(); ++t)
      if (rep.loc_acc[t][c] && rep.loc_acc[t - 1][c])
        CHECK(*rep.loc_acc[t][c] <= *rep.loc_acc[t - 1][c]);
  // reports parse back
  CHECK(!rep.to_json().empty());
  CHECK(!rep.to_text().empty());
  fs::remove_all(tmp);
}

TEST_CASE("untrained model scores near-chance AUC on balanced data") {
  ModelConfig mc = tiny_train_config().model;
  KaclModel model = KaclModel::init(mc);
  Rng rng(91);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 400; ++i) {
    Tensor img = Tensor::zeros({32, 32});
    for (std::size_t p = 0; p < img.size(); ++p) img[p] = rng.uniform();
    EncodeResult enc = model.image_encoder.encode(img);
    scores.push_back(model.head.classify(enc.y)[0]);
    labels.push_back(rng.uniform_int(0, 1));  // labels independent of scores
  }
  CHECK(*auc_mann_whitney(scores, labels) == doctest::Approx(0.5).epsilon(0.2));
}
