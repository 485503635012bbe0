#include "kacl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "kacl/ops.hpp"
#include "kacl/rng.hpp"

namespace kacl {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("TrainConfig: epochs must be positive");
  if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (warmup_epochs >= epochs)
    throw ConfigError("TrainConfig: warmup_epochs must be < epochs");
  if (!(lr0 > 0.0)) throw ConfigError("TrainConfig: lr0 must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0))
    throw ConfigError("TrainConfig: lr_decay must be in (0,1]");
  if (decay_period == 0) throw ConfigError("TrainConfig: decay_period must be positive");
  loss.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr = lr0 * std::pow(lr_decay, static_cast<double>(epoch / decay_period));
  if (warmup_lr_ramp && epoch < warmup_epochs)
    lr *= static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  return lr;
}

double TrainConfig::lambda_at(std::size_t epoch) const {
  if (warmup_gate_contrastive && epoch < warmup_epochs) return 0.0;
  return loss.lambda;
}

std::string TrainConfig::to_json() const {
  json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr0"] = lr0;
  j["lr_decay"] = lr_decay;
  j["decay_period"] = decay_period;
  j["warmup_epochs"] = warmup_epochs;
  j["warmup_gate_contrastive"] = warmup_gate_contrastive;
  j["warmup_lr_ramp"] = warmup_lr_ramp;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["seed"] = seed;
  j["loss"] = {{"tau", loss.tau},
               {"alpha", loss.alpha},
               {"gamma", loss.gamma},
               {"lambda", loss.lambda},
               {"literal_denominator", loss.literal_denominator},
               {"cam_threshold", loss.cam_threshold}};
  j["model"] = {{"widths", model.widths},
                {"proj_dim", model.proj_dim},
                {"radiomic_dim", model.radiomic_dim},
                {"radiomic_hidden", model.radiomic_hidden},
                {"num_classes", model.num_classes}};
  j["sampling"] = {{"normal_cap", sampling.normal_cap}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("TrainConfig: invalid JSON: ") + e.what());
  }
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr0 = j.value("lr0", c.lr0);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.decay_period = j.value("decay_period", c.decay_period);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.warmup_gate_contrastive = j.value("warmup_gate_contrastive", c.warmup_gate_contrastive);
  c.warmup_lr_ramp = j.value("warmup_lr_ramp", c.warmup_lr_ramp);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.tau = l.value("tau", c.loss.tau);
    c.loss.alpha = l.value("alpha", c.loss.alpha);
    c.loss.gamma = l.value("gamma", c.loss.gamma);
    c.loss.lambda = l.value("lambda", c.loss.lambda);
    c.loss.literal_denominator = l.value("literal_denominator", c.loss.literal_denominator);
    c.loss.cam_threshold = l.value("cam_threshold", c.loss.cam_threshold);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.model.widths = m.value("widths", c.model.widths);
    c.model.proj_dim = m.value("proj_dim", c.model.proj_dim);
    c.model.radiomic_dim = m.value("radiomic_dim", c.model.radiomic_dim);
    c.model.radiomic_hidden = m.value("radiomic_hidden", c.model.radiomic_hidden);
    c.model.num_classes = m.value("num_classes", c.model.num_classes);
  }
  if (j.contains("sampling"))
    c.sampling.normal_cap = j["sampling"].value("normal_cap", c.sampling.normal_cap);
  c.validate();
  return c;
}

std::string sha256_hex(const std::string& text) {
  return synthcxr::sha256_bytes(text.data(), text.size());
}

std::string TrainConfig::config_hash() const { return sha256_hex(to_json()); }

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const auto& g = p.grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

BoundingBox predict_box(const KaclModel& model, const Tensor& image, int target_class,
                        double cam_threshold) {
  const Heatmap hm = gradcam(model.image_encoder, model.head, image, target_class);
  const BoundingBox fallback =
      centered_fallback_box(static_cast<int>(hm.width), static_cast<int>(hm.height));
  return threshold_to_bbox(hm, cam_threshold, fallback);
}

StepMetrics train_step(KaclModel& model, Adam& opt, const std::vector<LabeledImage>& batch,
                       double lambda_now, double lr, const LossConfig& loss_cfg,
                       const SamplingConfig& sampling_cfg,
                       const radiomics::NormalizationStats& stats, const DiseaseHierarchy& h) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const std::size_t K = model.config.num_classes;

  // CAM boxes from the current weights, outside the training tape; the
  // contrastive branch treats boxes and radiomic vectors as constants.
  std::vector<std::optional<BoundingBox>> boxes(batch.size());
  std::vector<ContrastivePair> pairs;
  if (lambda_now > 0.0) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch[i].diseased()) continue;
      boxes[i] = batch[i].annotated && batch[i].gt_box
                     ? *batch[i].gt_box
                     : predict_box(model, batch[i].pixels, batch[i].label,
                                   loss_cfg.cam_threshold);
    }
    pairs = build_pairs(batch, boxes, stats, h, sampling_cfg);
  }

  Graph g;
  StepMetrics metrics;
  {
    Recording rec(g);
    std::vector<Tensor> reprs(batch.size());
    std::vector<Tensor> focal_terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EncodeResult enc = model.image_encoder.encode(batch[i].pixels);
      reprs[i] = enc.y;
      Tensor probs = model.head.classify(enc.y);
      std::vector<int> labels(K, 0);
      if (batch[i].diseased()) labels[batch[i].label] = 1;
      focal_terms.push_back(focal_loss(probs, labels, loss_cfg));
    }
    Tensor l_fl = ops::mean_of(focal_terms);

    Tensor l_cl = Tensor::scalar(0.0);
    if (!pairs.empty()) {
      std::unordered_map<std::size_t, Tensor> proj_cache;
      auto image_projection = [&](std::size_t i) {
        auto it = proj_cache.find(i);
        if (it != proj_cache.end()) return it->second;
        Tensor z = model.proj_image.project(reprs[i]);
        proj_cache.emplace(i, z);
        return z;
      };
      std::vector<Tensor> pair_losses;
      for (const auto& pair : pairs) {
        Tensor r = Tensor::from({radiomics::kFeatureCount},
                                {pair.positive.begin(), pair.positive.end()});
        Tensor z_r = model.proj_radiomic.project(model.radiomic_encoder.encode(r));
        Tensor z_i = image_projection(pair.anchor);
        std::vector<Tensor> negs;
        negs.reserve(pair.negatives.size());
        for (std::size_t n : pair.negatives) negs.push_back(image_projection(n));
        pair_losses.push_back(kacl_loss(z_i, z_r, negs, loss_cfg));
      }
      l_cl = ops::mean_of(pair_losses);
    }

    LossConfig mixed = loss_cfg;
    mixed.lambda = lambda_now;
    Tensor total = total_loss(l_cl, l_fl, mixed);

    metrics.focal = l_fl.value();
    metrics.contrastive = l_cl.value();
    metrics.total = total.value();
    metrics.pairs = pairs.size();

    opt.zero_grad();
    g.backward(total);
  }
  opt.step(lr);
  return metrics;
}

radiomics::NormalizationStats fit_radiomic_stats(const synthcxr::Dataset& ds) {
  std::vector<radiomics::FeatureVector> samples;
  for (std::size_t i : ds.annotated_train) {
    const auto& img = ds.images[i];
    if (!img.gt_box) continue;
    samples.push_back(radiomics::raw_features(img.pixels, *img.gt_box));
  }
  if (samples.empty()) return radiomics::NormalizationStats::identity();
  return radiomics::NormalizationStats::fit(samples);
}

std::optional<double> auc_mann_whitney(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw UsageError("auc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y != 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = midrank;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k] != 0) rank_sum += rank[k];
  const double u = rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<std::vector<double>> class_scores(const KaclModel& model,
                                              const synthcxr::Dataset& ds,
                                              const std::vector<std::size_t>& indices) {
  std::vector<std::vector<double>> scores;
  scores.reserve(indices.size());
  for (std::size_t i : indices) {
    EncodeResult enc = model.image_encoder.encode(ds.images[i].pixels);
    Tensor probs = model.head.classify(enc.y);
    scores.emplace_back(probs.buffer());
  }
  return scores;
}

namespace {

double mean_auc_over(const std::vector<std::optional<double>>& aucs) {
  double sum = 0.0;
  std::size_t cnt = 0;
  for (const auto& a : aucs)
    if (a) {
      sum += *a;
      ++cnt;
    }
  return cnt == 0 ? 0.0 : sum / static_cast<double>(cnt);
}

std::vector<std::optional<double>> per_class_auc(const std::vector<std::vector<double>>& scores,
                                                const std::vector<int>& labels,
                                                std::size_t num_classes) {
  std::vector<std::optional<double>> out(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][k];
      y[i] = labels[i] == static_cast<int>(k) ? 1 : 0;
    }
    out[k] = auc_mann_whitney(s, y);
  }
  return out;
}

std::string checkpoint_metadata(const TrainConfig& cfg) {
  json j;
  j["artifact_version"] = "1";
  j["config_hash"] = cfg.config_hash();
  j["seed"] = cfg.seed;
  j["registry_hash"] = radiomics::registry_hash();
  j["model"] = {{"widths", cfg.model.widths},
                {"proj_dim", cfg.model.proj_dim},
                {"radiomic_dim", cfg.model.radiomic_dim},
                {"radiomic_hidden", cfg.model.radiomic_hidden},
                {"num_classes", cfg.model.num_classes}};
  return j.dump();
}

}  // namespace

FitResult fit(const synthcxr::Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
              const std::string& tag, bool quiet) {
  cfg.validate();
  fs::create_directories(out_dir);
  const std::string prefix = tag.empty() ? "" : tag + "_";

  KaclModel model = KaclModel::init(cfg.model);
  Adam opt(model.all_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  const radiomics::NormalizationStats stats = fit_radiomic_stats(ds);
  const std::string meta = checkpoint_metadata(cfg);

  std::vector<std::size_t> train_idx = ds.train;
  train_idx.insert(train_idx.end(), ds.annotated_train.begin(), ds.annotated_train.end());
  if (train_idx.empty()) throw DataError("fit: empty training split");

  std::vector<int> val_labels;
  for (std::size_t i : ds.val) val_labels.push_back(ds.images[i].label);

  FitResult result;
  std::ofstream log_csv(fs::path(out_dir) / (prefix + "log.csv"), std::ios::app);
  log_csv << "epoch,focal,contrastive,lr,val_auc,train_loc_iou\n";

  std::string last_good;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    const double lambda_now = cfg.lambda_at(epoch);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5000 + epoch));
    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order);

    double focal_sum = 0.0, cl_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<LabeledImage> batch;
      batch.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) batch.push_back(ds.images[order[k]]);
      StepMetrics m;
      try {
        m = train_step(model, opt, batch, lambda_now, lr, cfg.loss, cfg.sampling, stats,
                       ds.hierarchy);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (last good checkpoint: " +
                           (last_good.empty() ? "none" : last_good) + ")");
      }
      focal_sum += m.focal;
      cl_sum += m.contrastive;
      ++steps;
    }

    // validation AUC on the 10% split
    double val_auc = 0.0;
    if (!ds.val.empty()) {
      const auto scores = class_scores(model, ds, ds.val);
      val_auc = mean_auc_over(per_class_auc(scores, val_labels, cfg.model.num_classes));
    }
    // localization proxy on annotated-train
    double loc_iou = 0.0;
    if (!ds.annotated_train.empty()) {
      for (std::size_t i : ds.annotated_train) {
        const auto& img = ds.images[i];
        loc_iou += iou(predict_box(model, img.pixels, img.label, cfg.loss.cam_threshold),
                       *img.gt_box);
      }
      loc_iou /= static_cast<double>(ds.annotated_train.size());
    }

    char name[64];
    std::snprintf(name, sizeof(name), "%sckpt_epoch_%03zu.bin", prefix.c_str(), epoch);
    const std::string ckpt_path = (fs::path(out_dir) / name).string();
    Checkpoint ckpt;
    ckpt.metadata_json = meta;
    model.save(ckpt);
    ckpt.save(ckpt_path);
    last_good = ckpt_path;
    result.last_checkpoint = ckpt_path;
    if (ds.val.empty() || val_auc >= result.best_val_auc || result.best_checkpoint.empty()) {
      result.best_val_auc = val_auc;
      const std::string best_path = (fs::path(out_dir) / (prefix + "ckpt_best.bin")).string();
      ckpt.save(best_path);
      result.best_checkpoint = best_path;
    }

    EpochLog row{epoch, steps ? focal_sum / steps : 0.0, steps ? cl_sum / steps : 0.0, lr,
                 val_auc, loc_iou};
    result.log.push_back(row);
    log_csv << row.epoch << ',' << row.focal << ',' << row.contrastive << ',' << row.lr << ','
            << row.val_auc << ',' << row.train_loc_iou << '\n';
    log_csv.flush();
    if (!quiet)
      std::cerr << "epoch " << epoch << " focal=" << row.focal << " cl=" << row.contrastive
                << " lr=" << lr << " val_auc=" << val_auc << " loc_iou=" << loc_iou << "\n";
  }
  return result;
}

EvalReport evaluate(const KaclModel& model, const synthcxr::Dataset& ds,
                    const LossConfig& loss_cfg, const std::vector<double>& thresholds) {
  EvalReport rep;
  for (const auto& d : ds.hierarchy.diseases) rep.class_names.push_back(d.name);
  const std::size_t K = model.config.num_classes;

  std::vector<int> labels;
  for (std::size_t i : ds.test) labels.push_back(ds.images[i].label);
  const auto scores = class_scores(model, ds, ds.test);
  rep.auc = per_class_auc(scores, labels, K);
  rep.mean_auc = mean_auc_over(rep.auc);

  rep.thresholds = thresholds;
  // per-class hit lists on the annotated test split
  std::vector<std::vector<double>> ious_per_class(K);
  for (std::size_t i : ds.annotated_test) {
    const auto& img = ds.images[i];
    if (!img.gt_box || !img.diseased()) continue;
    const BoundingBox pred =
        predict_box(model, img.pixels, img.label, loss_cfg.cam_threshold);
    ious_per_class[img.label].push_back(iou(pred, *img.gt_box));
  }
  for (double t : thresholds) {
    std::vector<std::optional<double>> row(K);
    for (std::size_t k = 0; k < K; ++k) {
      if (ious_per_class[k].empty()) continue;
      std::size_t hits = 0;
      for (double v : ious_per_class[k]) hits += v > t;  // strict inequality
      row[k] = static_cast<double>(hits) / static_cast<double>(ious_per_class[k].size());
    }
    rep.loc_mean.push_back(mean_auc_over(row));
    rep.loc_acc.push_back(std::move(row));
  }
  return rep;
}

std::string EvalReport::to_json() const {
  json j;
  j["class_names"] = class_names;
  j["auc"] = json::array();
  for (const auto& a : auc) j["auc"].push_back(a ? json(*a) : json(nullptr));
  j["mean_auc"] = mean_auc;
  j["thresholds"] = thresholds;
  j["loc_acc"] = json::array();
  for (const auto& row : loc_acc) {
    json r = json::array();
    for (const auto& a : row) r.push_back(a ? json(*a) : json(nullptr));
    j["loc_acc"].push_back(r);
  }
  j["loc_mean"] = loc_mean;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["checkpoint_id"] = checkpoint_id;
  j["artifact_version"] = "1";
  return j.dump(2);
}

namespace {
std::string fmt3(const std::optional<double>& v) {
  if (!v) return "   -  ";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%6.3f", *v);
  return buf;
}
}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "Per-class AUC\n";
  for (std::size_t k = 0; k < class_names.size(); ++k)
    os << "  " << class_names[k] << ": " << fmt3(auc[k]) << "\n";
  os << "  Mean: " << fmt3(mean_auc) << "\n";
  if (!thresholds.empty()) {
    os << "Localization accuracy by T(IoU)\n  T     ";
    for (const auto& name : class_names) os << name.substr(0, 6) << " ";
    os << " Mean\n";
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "  %.2f ", thresholds[t]);
      os << buf;
      for (std::size_t k = 0; k < class_names.size(); ++k) os << fmt3(loc_acc[t][k]) << " ";
      os << fmt3(loc_mean[t]) << "\n";
    }
  }
  return os.str();
}

std::string AblationResult::to_json() const {
  json j = json::array();
  for (const auto& [name, rep] : variants)
    j.push_back({{"variant", name}, {"report", json::parse(rep.to_json())}});
  return j.dump(2);
}

std::string AblationResult::to_text() const {
  std::ostringstream os;
  os << "Ablation (mean AUC / mean loc@0.5)\n";
  for (const auto& [name, rep] : variants) {
    double loc05 = 0.0;
    for (std::size_t t = 0; t < rep.thresholds.size(); ++t)
      if (std::abs(rep.thresholds[t] - 0.5) < 1e-9) loc05 = rep.loc_mean[t];
    char buf[96];
    std::snprintf(buf, sizeof(buf), "  %-12s %6.3f  %6.3f\n", name.c_str(), rep.mean_auc,
                  loc05);
    os << buf;
  }
  return os.str();
}

AblationResult ablate(const synthcxr::Dataset& ds, const TrainConfig& cfg,
                      const std::string& out_dir, bool quiet) {
  cfg.validate();
  struct Variant {
    const char* name;
    bool focal;
    bool byop;
  };
  // Base = plain cross-entropy (alpha 0.5, gamma 0 halves BCE), no contrastive
  const Variant variants[] = {{"Base", false, false},
                              {"w. FL", true, false},
                              {"w. BYOP", false, true},
                              {"Full model", true, true}};
  const std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};

  AblationResult result;
  for (const auto& v : variants) {
    TrainConfig vc = cfg;
    if (!v.focal) {
      vc.loss.alpha = 0.5;
      vc.loss.gamma = 0.0;
    }
    if (!v.byop) vc.loss.lambda = 0.0;
    std::string tag(v.name);
    std::replace(tag.begin(), tag.end(), ' ', '_');
    std::replace(tag.begin(), tag.end(), '.', '_');
    FitResult fr = fit(ds, vc, out_dir, tag, quiet);

    Checkpoint ckpt = Checkpoint::load(fr.best_checkpoint);
    KaclModel model = KaclModel::load(ckpt, vc.model, /*eval_only=*/true);
    EvalReport rep = evaluate(model, ds, vc.loss, thresholds);
    rep.config_hash = vc.config_hash();
    rep.seed = vc.seed;
    rep.checkpoint_id = fr.best_checkpoint;
    result.variants.emplace_back(v.name, std::move(rep));
  }
  return result;
}

}  // namespace kacl
