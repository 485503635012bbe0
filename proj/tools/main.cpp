// kacl command-line entry point: generate / train / ablate / eval /
// extract-radiomics / inspect cam.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kacl/errors.hpp"
#include "kacl/gradcam.hpp"
#include "kacl/radiomics.hpp"
#include "kacl/synthcxr.hpp"
#include "kacl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kacl;

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  bool json_mode = false;
  int threads = 1;  // single-threaded build; accepted as an upper bound
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write file: " + path);
  os << text;
}

struct RunConfig {
  std::string dataset_dir;                        // on-disk dataset, or
  std::optional<synthcxr::DatasetSpec> dataset_spec;  // in-memory spec
  std::string out_dir = "runs";
  TrainConfig train;
  std::string hash;  // sha256 of the file as given

  static RunConfig load(const std::string& path) {
    const std::string text = slurp(path);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw DataError(std::string("run config: invalid JSON: ") + e.what());
    }
    RunConfig rc;
    rc.dataset_dir = j.value("dataset_dir", "");
    if (j.contains("dataset_spec"))
      rc.dataset_spec = synthcxr::DatasetSpec::from_json(j["dataset_spec"].dump());
    if (rc.dataset_dir.empty() && !rc.dataset_spec)
      throw DataError("run config: need dataset_dir or dataset_spec");
    rc.out_dir = j.value("out_dir", rc.out_dir);
    if (j.contains("train")) rc.train = TrainConfig::from_json(j["train"].dump());
    rc.hash = sha256_hex(text);
    return rc;
  }

  synthcxr::Dataset dataset() const {
    if (!dataset_dir.empty()) return synthcxr::load(dataset_dir);
    return synthcxr::generate_in_memory(*dataset_spec);
  }
};

ModelConfig model_config_from_metadata(const std::string& metadata_json) {
  ModelConfig mc;
  json j;
  try {
    j = json::parse(metadata_json);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: invalid JSON: ") + e.what());
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    mc.widths = m.value("widths", mc.widths);
    mc.proj_dim = m.value("proj_dim", mc.proj_dim);
    mc.radiomic_dim = m.value("radiomic_dim", mc.radiomic_dim);
    mc.radiomic_hidden = m.value("radiomic_hidden", mc.radiomic_hidden);
    mc.num_classes = m.value("num_classes", mc.num_classes);
  }
  return mc;
}

std::vector<double> parse_thresholds(const std::string& spec) {
  // "lo:hi:step" sweep or a comma-separated list
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    double lo, hi, step;
    char c1, c2;
    std::istringstream is(spec);
    if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0.0)
      throw UsageError("bad threshold sweep '" + spec + "', expected lo:hi:step");
    for (double t = lo; t <= hi + 1e-9; t += step) out.push_back(t);
  } else {
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stod(tok));
  }
  if (out.empty()) throw UsageError("empty threshold list");
  return out;
}

int cmd_generate(const GlobalOpts& g, const std::string& spec_path, const std::string& out) {
  synthcxr::DatasetSpec spec;
  if (!spec_path.empty()) spec = synthcxr::DatasetSpec::from_json(slurp(spec_path));
  if (g.seed) spec.seed = *g.seed;
  synthcxr::generate(spec, out);
  if (g.json_mode)
    std::cout << json{{"status", "ok"}, {"out", out}, {"seed", spec.seed}}.dump() << "\n";
  else if (!g.quiet)
    std::cout << "wrote dataset to " << out << "\n";
  return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& config_path) {
  RunConfig rc = RunConfig::load(config_path);
  if (g.seed) rc.train.seed = *g.seed;
  const synthcxr::Dataset ds = rc.dataset();
  fs::create_directories(rc.out_dir);
  FitResult fr = fit(ds, rc.train, rc.out_dir, "", g.quiet);

  Checkpoint ckpt = Checkpoint::load(fr.best_checkpoint);
  KaclModel model = KaclModel::load(ckpt, rc.train.model, /*eval_only=*/true);
  EvalReport rep =
      evaluate(model, ds, rc.train.loss, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7});
  rep.config_hash = rc.train.config_hash();
  rep.seed = rc.train.seed;
  rep.checkpoint_id = fr.best_checkpoint;
  spit((fs::path(rc.out_dir) / "report.json").string(), rep.to_json() + "\n");
  if (g.json_mode)
    std::cout << rep.to_json() << "\n";
  else if (!g.quiet)
    std::cout << rep.to_text();
  return 0;
}

int cmd_ablate(const GlobalOpts& g, const std::string& config_path, std::size_t seeds) {
  RunConfig rc = RunConfig::load(config_path);
  const std::uint64_t base_seed = g.seed ? *g.seed : rc.train.seed;
  fs::create_directories(rc.out_dir);
  json all = json::array();
  for (std::size_t s = 0; s < seeds; ++s) {
    TrainConfig cfg = rc.train;
    cfg.seed = base_seed + s;
    synthcxr::DatasetSpec ds_spec;
    synthcxr::Dataset ds;
    if (!rc.dataset_dir.empty()) {
      ds = synthcxr::load(rc.dataset_dir);
    } else {
      ds_spec = *rc.dataset_spec;
      ds_spec.seed = cfg.seed;  // fresh data per seed, like an independent trial
      ds = synthcxr::generate_in_memory(ds_spec);
    }
    const std::string seed_dir = (fs::path(rc.out_dir) / ("seed_" + std::to_string(s))).string();
    AblationResult res = ablate(ds, cfg, seed_dir, g.quiet);
    spit((fs::path(seed_dir) / "ablation.json").string(), res.to_json() + "\n");
    if (!g.quiet && !g.json_mode)
      std::cout << "seed " << cfg.seed << "\n" << res.to_text();
    json entry;
    entry["seed"] = cfg.seed;
    entry["variants"] = json::parse(res.to_json());
    all.push_back(std::move(entry));
  }
  json summary{{"artifact_version", "1"},
               {"config_hash", rc.hash},
               {"base_seed", base_seed},
               {"runs", all}};
  spit((fs::path(rc.out_dir) / "ablation_summary.json").string(), summary.dump(2) + "\n");
  if (g.json_mode) std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt_path, const std::string& dataset_dir,
             const std::string& thresholds, const std::string& out_path) {
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const ModelConfig mc = model_config_from_metadata(ckpt.metadata_json);
  const KaclModel model = KaclModel::load(ckpt, mc, /*eval_only=*/true);
  const synthcxr::Dataset ds = synthcxr::load(dataset_dir);
  LossConfig loss_cfg;  // cam_threshold default
  EvalReport rep = evaluate(model, ds, loss_cfg, parse_thresholds(thresholds));
  const json meta = json::parse(ckpt.metadata_json);
  rep.config_hash = meta.value("config_hash", "");
  rep.seed = meta.value("seed", std::uint64_t{0});
  rep.checkpoint_id = ckpt_path;
  if (!out_path.empty()) spit(out_path, rep.to_json() + "\n");
  if (g.json_mode)
    std::cout << rep.to_json() << "\n";
  else if (!g.quiet)
    std::cout << rep.to_text();
  return 0;
}

int cmd_extract(const GlobalOpts& g, const std::string& dataset_dir,
                const std::string& out_path) {
  const synthcxr::Dataset ds = synthcxr::load(dataset_dir);
  const auto& names = radiomics::feature_names();
  json rows = json::array();
  for (const auto& img : ds.images) {
    if (!img.annotated || !img.gt_box) continue;
    const auto v = radiomics::raw_features(img.pixels, *img.gt_box);
    json features;
    for (int k = 0; k < radiomics::kFeatureCount; ++k) features[names[k]] = v[k];
    rows.push_back({{"id", img.id}, {"box", img.gt_box->str()}, {"features", features}});
  }
  json out{{"artifact_version", "1"},
           {"registry_hash", radiomics::registry_hash()},
           {"rows", rows}};
  if (!out_path.empty()) spit(out_path, out.dump(2) + "\n");
  if (g.json_mode || out_path.empty()) std::cout << out.dump(2) << "\n";
  else if (!g.quiet) std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
  return 0;
}

int cmd_inspect_cam(const GlobalOpts& g, const std::string& ckpt_path,
                    const std::string& dataset_dir, const std::string& image_id,
                    int target_class) {
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const ModelConfig mc = model_config_from_metadata(ckpt.metadata_json);
  const KaclModel model = KaclModel::load(ckpt, mc, /*eval_only=*/true);
  const synthcxr::Dataset ds = synthcxr::load(dataset_dir);
  const LabeledImage* img = nullptr;
  for (const auto& im : ds.images)
    if (im.id == image_id) img = &im;
  if (!img) throw DataError("image id not found in dataset: " + image_id);
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= mc.num_classes)
    throw UsageError("class index out of range");

  const Heatmap hm = gradcam(model.image_encoder, model.head, img->pixels, target_class);
  LossConfig loss_cfg;
  const BoundingBox fallback =
      centered_fallback_box(static_cast<int>(hm.width), static_cast<int>(hm.height));
  const BoundingBox box = threshold_to_bbox(hm, loss_cfg.cam_threshold, fallback);
  double peak = 0.0, mass = 0.0;
  for (double v : hm.values) {
    peak = std::max(peak, v);
    mass += v;
  }
  json j{{"image", image_id},
         {"class", target_class},
         {"width", hm.width},
         {"height", hm.height},
         {"peak", peak},
         {"mean", hm.values.empty() ? 0.0 : mass / hm.values.size()},
         {"box", {box.x0, box.y0, box.x1, box.y1}}};
  if (img->gt_box)
    j["gt_iou"] = iou(box, *img->gt_box);
  if (g.json_mode)
    std::cout << j.dump(2) << "\n";
  else if (!g.quiet)
    std::cout << "cam " << image_id << " class " << target_class << " box " << box.str()
              << " peak " << peak << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-augmented contrastive learning for chest-image "
               "classification and localization"};
  app.require_subcommand(1);

  GlobalOpts g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the configured seed");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");
  app.add_flag("--json", g.json_mode, "Machine-readable JSON reports on stdout");
  app.add_option("--threads", g.threads, "Upper bound on worker threads")
      ->check(CLI::PositiveNumber);

  std::string spec_path, out_dir = "dataset", config_path;
  std::size_t n_seeds = 3;
  std::string ckpt_path, dataset_dir, thresholds = "0.1:0.7:0.1", out_path, image_id;
  int target_class = 0;

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset to disk");
  generate->add_option("--spec", spec_path, "Dataset spec JSON file");
  generate->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train from a run-config file");
  train->add_option("--config", config_path, "Run config JSON")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Four-variant ablation over seeds");
  ablate_cmd->add_option("--config", config_path, "Run config JSON")->required();
  ablate_cmd->add_option("--seeds", n_seeds, "Number of seeds");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  eval_cmd->add_option("--loc-thresholds", thresholds, "IoU sweep lo:hi:step or list");
  eval_cmd->add_option("--out", out_path, "Write the JSON report here");

  auto* extract = app.add_subcommand("extract-radiomics",
                                     "Raw features from annotated ground-truth boxes");
  extract->add_option("--manifest", dataset_dir, "Dataset directory")->required();
  extract->add_option("--out", out_path, "Output JSON file");

  auto* inspect = app.add_subcommand("inspect", "Inspection helpers");
  inspect->require_subcommand(1);
  auto* cam = inspect->add_subcommand("cam", "Grad-CAM heatmap summary for one image");
  cam->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  cam->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  cam->add_option("--image", image_id, "Image id from the manifest")->required();
  cam->add_option("--class", target_class, "Disease class index")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage + "did you mean" suggestion
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*generate) return cmd_generate(g, spec_path, out_dir);
    if (*train) return cmd_train(g, config_path);
    if (*ablate_cmd) return cmd_ablate(g, config_path, n_seeds);
    if (*eval_cmd) return cmd_eval(g, ckpt_path, dataset_dir, thresholds, out_path);
    if (*extract) return cmd_extract(g, dataset_dir, out_path);
    if (*cam) return cmd_inspect_cam(g, ckpt_path, dataset_dir, image_id, target_class);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
