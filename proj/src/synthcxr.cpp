#include "kacl/synthcxr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <openssl/evp.h>

#include <json.hpp>

#include "kacl/rng.hpp"

namespace kacl::synthcxr {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetSpec::validate() const {
  if (n_images == 0) throw ConfigError("DatasetSpec: n_images must be positive");
  if (!(imbalance_ratio > 0.0)) throw ConfigError("DatasetSpec: imbalance_ratio must be > 0");
  if (!(annotated_fraction >= 0.0 && annotated_fraction < 1.0))
    throw ConfigError("DatasetSpec: annotated_fraction must be in [0,1)");
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("DatasetSpec: unannotated split fractions must sum to 1");
  if (!(annotated_train_frac > 0.0 && annotated_train_frac < 1.0))
    throw ConfigError("DatasetSpec: annotated_train_frac must be in (0,1)");
  if (image_size < 16) throw ConfigError("DatasetSpec: image_size must be >= 16");
  if (noise_sigma < 0.0) throw ConfigError("DatasetSpec: noise_sigma must be >= 0");
  if (!disease_frequencies.empty()) {
    double s = 0.0;
    for (double f : disease_frequencies) {
      if (f < 0.0) throw ConfigError("DatasetSpec: negative disease frequency");
      s += f;
    }
    if (s <= 0.0) throw ConfigError("DatasetSpec: disease frequencies sum to zero");
  }
}

std::string DatasetSpec::to_json() const {
  json j;
  j["n_images"] = n_images;
  j["imbalance_ratio"] = imbalance_ratio;
  j["disease_frequencies"] = disease_frequencies;
  j["annotated_fraction"] = annotated_fraction;
  j["train_frac"] = train_frac;
  j["val_frac"] = val_frac;
  j["test_frac"] = test_frac;
  j["annotated_train_frac"] = annotated_train_frac;
  j["image_size"] = image_size;
  j["noise_sigma"] = noise_sigma;
  j["seed"] = seed;
  return j.dump(2);
}

DatasetSpec DatasetSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("DatasetSpec: invalid JSON: ") + e.what());
  }
  DatasetSpec s;
  s.n_images = j.value("n_images", s.n_images);
  s.imbalance_ratio = j.value("imbalance_ratio", s.imbalance_ratio);
  s.disease_frequencies = j.value("disease_frequencies", s.disease_frequencies);
  s.annotated_fraction = j.value("annotated_fraction", s.annotated_fraction);
  s.train_frac = j.value("train_frac", s.train_frac);
  s.val_frac = j.value("val_frac", s.val_frac);
  s.test_frac = j.value("test_frac", s.test_frac);
  s.annotated_train_frac = j.value("annotated_train_frac", s.annotated_train_frac);
  s.image_size = j.value("image_size", s.image_size);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Lesion {
  int w = 0, h = 0;          // patch dimensions
  std::vector<double> add;   // additive values, row-major, 0 = outside support
  BoundingBox support;       // tight box of nonzero values, patch-local
};

// Disease-specific lesion textures. Stripe classes get non-square patches so
// shape features separate orientations that direction-averaged texture
// statistics cannot.
Lesion make_lesion(int disease, Rng& rng) {
  const int s = static_cast<int>(rng.uniform_int(11, 17));
  Lesion les;
  les.w = s;
  les.h = s;
  if (disease == 4) {
    les.w = s + 6;
    les.h = std::max(8, s - 4);
  } else if (disease == 5) {
    les.w = std::max(8, s - 4);
    les.h = s + 6;
  }
  les.add.assign(static_cast<std::size_t>(les.w) * les.h, 0.0);
  const double cx = (les.w - 1) / 2.0, cy = (les.h - 1) / 2.0;
  const double rmax = std::min(les.w, les.h) / 2.0;
  for (int v = 0; v < les.h; ++v)
    for (int u = 0; u < les.w; ++u) {
      const double du = u - cx, dv = v - cy;
      const double r = std::sqrt(du * du + dv * dv);
      double val = 0.0;
      switch (disease) {
        case 0:  // smooth dome
          val = 0.40 * std::exp(-std::pow(1.5 * r / rmax, 2.0));
          if (val < 0.03) val = 0.0;
          break;
        case 1:  // ring
          val = 0.45 * std::exp(-std::pow((r - 0.65 * rmax) / (0.18 * rmax), 2.0));
          if (val < 0.03) val = 0.0;
          break;
        case 2:  // fine speckle
          if (r < rmax) val = 0.08 + 0.38 * rng.uniform();
          break;
        case 3:  // checker grid, 2 px cells
          if (r < rmax) val = ((u / 2 + v / 2) % 2 == 0) ? 0.38 : 0.06;
          break;
        case 4:  // horizontal stripes, period 4
          val = (v % 4 < 2) ? 0.36 : 0.06;
          break;
        case 5:  // vertical stripes, period 6
          val = (u % 6 < 3) ? 0.36 : 0.06;
          break;
        case 6:  // flat plateau
          val = 0.30;
          break;
        case 7:  // gradient wedge
          val = 0.06 + 0.40 * (u + v) / static_cast<double>(les.w + les.h - 2);
          break;
        default:
          throw ConfigError("unknown disease generator " + std::to_string(disease));
      }
      les.add[static_cast<std::size_t>(v) * les.w + u] = val;
    }
  int minx = les.w, maxx = -1, miny = les.h, maxy = -1;
  for (int v = 0; v < les.h; ++v)
    for (int u = 0; u < les.w; ++u)
      if (les.add[static_cast<std::size_t>(v) * les.w + u] > 0.0) {
        minx = std::min(minx, u);
        maxx = std::max(maxx, u);
        miny = std::min(miny, v);
        maxy = std::max(maxy, v);
      }
  les.support = {minx, miny, maxx + 1, maxy + 1};
  return les;
}

std::string image_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img_%05zu", i);
  return buf;
}

LabeledImage synthesize(const DatasetSpec& spec, const DiseaseHierarchy& h, std::size_t idx,
                        int label, bool annotated) {
  const std::size_t S = spec.image_size;
  Rng rng(mix_seed(spec.seed, 1000 + idx));
  LabeledImage img;
  img.id = image_id(idx);
  img.label = label;
  img.annotated = annotated;
  img.pixels = Tensor::zeros({S, S});

  const double phi1 = rng.uniform(0.0, kTwoPi), phi2 = rng.uniform(0.0, kTwoPi);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      double v = 0.35 + 0.05 * std::cos(kTwoPi * x / S + phi1) +
                 0.05 * std::cos(kTwoPi * y / S + phi2);
      v += 0.04 * static_cast<double>(std::min<std::size_t>(2, 3 * x / S));  // body-part bands
      img.pixels[y * S + x] = v;
    }

  if (label != kNormalLabel) {
    img.body_part = h.part_of(label);
    Lesion les = make_lesion(label, rng);
    // place the patch so its support box stays inside the label's band
    const int band_x0 = static_cast<int>(static_cast<std::size_t>(img.body_part) * S / 3);
    const int band_x1 = static_cast<int>(static_cast<std::size_t>(img.body_part + 1) * S / 3);
    const int sw = les.support.width(), sh = les.support.height();
    const int px_lo = band_x0 + 1, px_hi = std::max(px_lo, band_x1 - sw - 1);
    const int py_lo = 1, py_hi = std::max(py_lo, static_cast<int>(S) - sh - 1);
    const int px = static_cast<int>(rng.uniform_int(px_lo, px_hi));  // support origin
    const int py = static_cast<int>(rng.uniform_int(py_lo, py_hi));
    for (int v = les.support.y0; v < les.support.y1; ++v)
      for (int u = les.support.x0; u < les.support.x1; ++u) {
        const int gx = px + (u - les.support.x0), gy = py + (v - les.support.y0);
        if (gx < 0 || gy < 0 || gx >= static_cast<int>(S) || gy >= static_cast<int>(S)) continue;
        img.pixels[static_cast<std::size_t>(gy) * S + gx] +=
            les.add[static_cast<std::size_t>(v) * les.w + u];
      }
    img.gt_box = BoundingBox{px, py, std::min(px + sw, static_cast<int>(S)),
                             std::min(py + sh, static_cast<int>(S))};
  }

  for (std::size_t i = 0; i < S * S; ++i) {
    double v = img.pixels[i] + spec.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
    // snap to the 16-bit disk grid so generate -> load round-trips exactly
    img.pixels[i] = std::round(v * 65535.0) / 65535.0;
  }
  return img;
}

std::vector<int> assign_labels(const DatasetSpec& spec, std::size_t num_diseases) {
  const std::size_t n = spec.n_images;
  const std::size_t n_dis = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) / (1.0 + spec.imbalance_ratio)));
  std::vector<double> freq = spec.disease_frequencies;
  if (freq.empty()) freq.assign(num_diseases, 1.0);
  if (freq.size() != num_diseases)
    throw ConfigError("DatasetSpec: disease_frequencies length must equal disease count");
  double fsum = 0.0;
  for (double f : freq) fsum += f;

  std::vector<std::size_t> counts(num_diseases);
  std::size_t assigned = 0;
  for (std::size_t d = 0; d < num_diseases; ++d) {
    counts[d] = static_cast<std::size_t>(std::floor(freq[d] / fsum * n_dis));
    assigned += counts[d];
  }
  for (std::size_t d = 0; assigned < n_dis; d = (d + 1) % num_diseases) {
    if (freq[d] > 0.0) {
      ++counts[d];
      ++assigned;
    }
  }

  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t d = 0; d < num_diseases; ++d)
    labels.insert(labels.end(), counts[d], static_cast<int>(d));
  labels.resize(n, kNormalLabel);
  Rng rng(mix_seed(spec.seed, 7));
  rng.shuffle(labels);
  return labels;
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& v, std::size_t lo, std::size_t hi) {
  return {v.begin() + static_cast<long>(lo), v.begin() + static_cast<long>(hi)};
}

}  // namespace

Dataset generate_in_memory(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.hierarchy = DiseaseHierarchy::synthetic_default();
  const std::size_t K = ds.hierarchy.diseases.size();
  const std::vector<int> labels = assign_labels(spec, K);

  // annotated ids are drawn from diseased images only
  const std::size_t n_ann = static_cast<std::size_t>(
      std::llround(spec.annotated_fraction * static_cast<double>(spec.n_images)));
  std::size_t marked = 0;
  std::vector<bool> annotated(spec.n_images, false);
  for (std::size_t i = 0; i < spec.n_images && marked < n_ann; ++i)
    if (labels[i] != kNormalLabel) {
      annotated[i] = true;
      ++marked;
    }

  ds.images.reserve(spec.n_images);
  std::vector<std::size_t> unann, ann;
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    ds.images.push_back(synthesize(spec, ds.hierarchy, i, labels[i], annotated[i]));
    (annotated[i] ? ann : unann).push_back(i);
  }

  const std::size_t nu = unann.size();
  const std::size_t tr = static_cast<std::size_t>(std::llround(spec.train_frac * nu));
  const std::size_t va = static_cast<std::size_t>(std::llround(spec.val_frac * nu));
  ds.train = slice(unann, 0, tr);
  ds.val = slice(unann, tr, std::min(tr + va, nu));
  ds.test = slice(unann, std::min(tr + va, nu), nu);

  const std::size_t na = ann.size();
  const std::size_t atr =
      na == 0 ? 0
              : std::max<std::size_t>(
                    1, static_cast<std::size_t>(std::llround(spec.annotated_train_frac * na)));
  ds.annotated_train = slice(ann, 0, std::min(atr, na));
  ds.annotated_test = slice(ann, std::min(atr, na), na);
  return ds;
}

void write_pgm16(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) throw UsageError("write_pgm16: expected [H,W] tensor");
  const std::size_t H = image.shape()[0], W = image.shape()[1];
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write image file: " + path);
  os << "P5\n" << W << " " << H << "\n65535\n";
  std::vector<unsigned char> buf(W * H * 2);
  for (std::size_t i = 0; i < W * H; ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    const unsigned int q = static_cast<unsigned int>(std::lround(v * 65535.0));
    buf[2 * i] = static_cast<unsigned char>(q >> 8);  // big-endian per PGM
    buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write failure on image file: " + path);
}

Tensor read_pgm16(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing image file: " + path);
  std::string magic;
  std::size_t W = 0, H = 0;
  unsigned int maxval = 0;
  is >> magic >> W >> H >> maxval;
  if (magic != "P5" || maxval != 65535)
    throw DataError("unsupported PGM (want binary 16-bit): " + path);
  is.get();  // single whitespace after header
  std::vector<unsigned char> buf(W * H * 2);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError("truncated image file: " + path);
  Tensor t = Tensor::zeros({H, W});
  for (std::size_t i = 0; i < W * H; ++i) {
    const unsigned int q = (static_cast<unsigned int>(buf[2 * i]) << 8) | buf[2 * i + 1];
    t[i] = static_cast<double>(q) / 65535.0;
  }
  return t;
}

std::string sha256_bytes(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing file for checksum: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  return sha256_bytes(bytes.data(), bytes.size());
}

namespace {

json box_to_json(const BoundingBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

BoundingBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("manifest: malformed box");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

void generate(const DatasetSpec& spec, const std::string& out_dir) {
  Dataset ds = generate_in_memory(spec);
  fs::create_directories(fs::path(out_dir) / "images");
  ds.hierarchy.save((fs::path(out_dir) / "hierarchy.json").string());

  json manifest;
  manifest["spec"] = json::parse(spec.to_json());
  manifest["splits"] = {
      {"train", json::array()},          {"val", json::array()},
      {"test", json::array()},           {"annotated_train", json::array()},
      {"annotated_test", json::array()},
  };
  auto fill = [&](const char* key, const std::vector<std::size_t>& idxs) {
    for (std::size_t i : idxs) manifest["splits"][key].push_back(ds.images[i].id);
  };
  fill("train", ds.train);
  fill("val", ds.val);
  fill("test", ds.test);
  fill("annotated_train", ds.annotated_train);
  fill("annotated_test", ds.annotated_test);

  manifest["entries"] = json::array();
  for (const auto& img : ds.images) {
    const std::string file = "images/" + img.id + ".pgm";
    write_pgm16((fs::path(out_dir) / file).string(), img.pixels);
    json e;
    e["id"] = img.id;
    e["file"] = file;
    e["label_index"] = img.label;
    e["label"] =
        img.diseased() ? ds.hierarchy.diseases[img.label].name : ds.hierarchy.normal_name;
    e["body_part"] = img.body_part;
    if (img.gt_box) e["box"] = box_to_json(*img.gt_box);
    e["annotated"] = img.annotated;
    e["sha256"] = sha256_file((fs::path(out_dir) / file).string());
    manifest["entries"].push_back(e);
  }

  std::ofstream os(fs::path(out_dir) / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write manifest in " + out_dir);
  os << manifest.dump(2) << '\n';
  if (!os) throw DataError("write failure on manifest in " + out_dir);
}

Dataset load(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw DataError("missing manifest.json in " + dir);
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: invalid JSON: ") + e.what());
  }
  Dataset ds;
  ds.spec = DatasetSpec::from_json(manifest.at("spec").dump());
  ds.hierarchy = DiseaseHierarchy::load((fs::path(dir) / "hierarchy.json").string());

  std::unordered_map<std::string, std::size_t> by_id;
  for (const auto& e : manifest.at("entries")) {
    const std::string id = e.at("id").get<std::string>();
    const std::string file = e.at("file").get<std::string>();
    const std::string full = (fs::path(dir) / file).string();
    const std::string want = e.at("sha256").get<std::string>();
    const std::string got = sha256_file(full);
    if (got != want)
      throw DataError("checksum mismatch for " + file + " (manifest " + want + ", file " + got +
                      ")");
    LabeledImage img;
    img.id = id;
    img.pixels = read_pgm16(full);
    img.label = e.at("label_index").get<int>();
    img.body_part = e.at("body_part").get<int>();
    img.annotated = e.at("annotated").get<bool>();
    if (e.contains("box")) img.gt_box = box_from_json(e.at("box"));
    if (img.annotated && !img.gt_box)
      throw DataError("manifest: annotated image without box: " + id);
    by_id[img.id] = ds.images.size();
    ds.images.push_back(std::move(img));
  }

  auto read_split = [&](const char* key) {
    std::vector<std::size_t> out;
    for (const auto& id : manifest.at("splits").at(key)) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw DataError("manifest: split references unknown id");
      out.push_back(it->second);
    }
    return out;
  };
  ds.train = read_split("train");
  ds.val = read_split("val");
  ds.test = read_split("test");
  ds.annotated_train = read_split("annotated_train");
  ds.annotated_test = read_split("annotated_test");
  return ds;
}

}  // namespace kacl::synthcxr
