#include "kacl/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <sstream>

namespace kacl::radiomics {

const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = {
      "fo.mean",          "fo.median",       "fo.min",
      "fo.max",           "fo.range",        "fo.variance",
      "fo.skewness",      "fo.kurtosis",     "fo.energy",
      "fo.entropy",       "shape.pixel_surface", "shape.perimeter",
      "shape.aspect_ratio", "shape.relative_area", "glcm.contrast",
      "glcm.correlation", "glcm.joint_energy", "glcm.homogeneity",
      "glcm.entropy",     "glcm.dissimilarity", "glrlm.sre",
      "glrlm.lre",        "glrlm.gray_level_nonuniformity", "glrlm.run_percentage",
      "glszm.small_area_emphasis", "glszm.large_area_emphasis", "glszm.zone_percentage",
      "ngtdm.coarseness", "ngtdm.contrast",  "ngtdm.busyness",
      "gldm.small_dep_emphasis", "gldm.large_dep_emphasis", "gldm.dep_nonuniformity"};
  return names;
}

std::string registry_hash() {
  // FNV-1a over the concatenated registry; versions the feature ordering.
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& name : feature_names()) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= '|';
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

namespace {

struct ImageView {
  const double* data;
  std::size_t w, h;
};

ImageView as_image(const Tensor& image) {
  if (image.rank() == 2) return {image.data(), image.shape()[1], image.shape()[0]};
  if (image.rank() == 3 && image.shape()[0] == 1)
    return {image.data(), image.shape()[2], image.shape()[1]};
  throw ConfigError("radiomics: expected [H,W] or [1,H,W] image, got " + shape_str(image.shape()));
}

}  // namespace

QuantizedROI quantize(const Tensor& image, const BoundingBox& box, int G) {
  if (G < 2) throw ConfigError("quantize: G must be >= 2");
  ImageView img = as_image(image);
  if (!box.valid_within(static_cast<int>(img.w), static_cast<int>(img.h)))
    throw DataError("quantize: box " + box.str() + " invalid for " + std::to_string(img.w) + "x" +
                    std::to_string(img.h) + " image");
  QuantizedROI roi;
  roi.width = static_cast<std::size_t>(box.width());
  roi.height = static_cast<std::size_t>(box.height());
  roi.num_levels = G;
  roi.raw.reserve(roi.pixels());
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) roi.raw.push_back(img.data[y * img.w + x]);

  const auto [mn_it, mx_it] = std::minmax_element(roi.raw.begin(), roi.raw.end());
  const double mn = *mn_it, mx = *mx_it, range = mx - mn;
  roi.levels.resize(roi.pixels());
  if (range <= 0.0) {
    std::fill(roi.levels.begin(), roi.levels.end(), 1);
  } else {
    for (std::size_t i = 0; i < roi.raw.size(); ++i) {
      int lvl = 1 + static_cast<int>((roi.raw[i] - mn) / range * G);
      roi.levels[i] = std::min(lvl, G);
    }
  }
  return roi;
}

std::array<double, 10> first_order(const QuantizedROI& roi) {
  const std::size_t n = roi.pixels();
  if (n == 0) throw DataError("first_order: empty ROI");
  const auto& x = roi.raw;
  double sum = 0.0, energy = 0.0;
  for (double v : x) {
    sum += v;
    energy += v * v;
  }
  const double mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double sd = std::sqrt(m2);
  const double skew = sd > 0.0 ? m3 / (sd * sd * sd) : 0.0;
  const double kurt = sd > 0.0 ? m4 / (m2 * m2) : 0.0;  // non-excess

  std::vector<double> sorted(x);
  std::sort(sorted.begin(), sorted.end());
  const double mn = sorted.front(), mx = sorted.back();
  const double median =
      n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  std::vector<std::size_t> hist(roi.num_levels, 0);
  for (int lvl : roi.levels) ++hist[lvl - 1];
  double entropy = 0.0;
  for (std::size_t c : hist)
    if (c > 0) {
      const double p = static_cast<double>(c) / n;
      entropy -= p * std::log2(p);
    }

  return {mean, median, mn, mx, mx - mn, m2, skew, kurt, energy, entropy};
}

std::array<double, 4> shape_features(const BoundingBox& box, std::size_t image_w,
                                     std::size_t image_h) {
  if (box.width() <= 0 || box.height() <= 0) throw DataError("shape_features: empty box");
  const double w = box.width(), h = box.height();
  return {w * h, 2.0 * (w + h), std::max(w, h) / std::min(w, h),
          w * h / (static_cast<double>(image_w) * image_h)};
}

const std::vector<std::pair<int, int>>& four_directions() {
  // (dy,dx): 0, 45, 90, 135 degrees at distance 1
  static const std::vector<std::pair<int, int>> dirs = {{0, 1}, {-1, 1}, {-1, 0}, {-1, -1}};
  return dirs;
}

TextureMatrix glcm(const QuantizedROI& roi, const std::vector<std::pair<int, int>>& offsets) {
  if (roi.width < 2 || roi.height < 2) throw DataError("glcm: ROI must be at least 2x2");
  if (offsets.empty()) throw ConfigError("glcm: at least one offset required");
  const std::size_t G = static_cast<std::size_t>(roi.num_levels);
  TextureMatrix out{G, G, std::vector<double>(G * G, 0.0)};
  std::vector<double> counts(G * G);
  std::size_t used = 0;
  for (const auto& [dy, dx] : offsets) {
    std::fill(counts.begin(), counts.end(), 0.0);
    double total = 0.0;
    for (std::size_t y = 0; y < roi.height; ++y)
      for (std::size_t x = 0; x < roi.width; ++x) {
        const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(roi.height) ||
            nx >= static_cast<long>(roi.width))
          continue;
        const int a = roi.level_at(y, x) - 1, b = roi.level_at(ny, nx) - 1;
        counts[a * G + b] += 1.0;
        counts[b * G + a] += 1.0;  // symmetric
        total += 2.0;
      }
    if (total == 0.0) continue;
    for (std::size_t i = 0; i < G * G; ++i) out.v[i] += counts[i] / total;
    ++used;
  }
  if (used == 0) throw DataError("glcm: no valid pixel pairs for any offset");
  for (auto& v : out.v) v /= static_cast<double>(used);
  return out;
}

std::array<double, 6> glcm_features(const TextureMatrix& p) {
  const std::size_t G = p.rows;
  double contrast = 0.0, joint_energy = 0.0, homogeneity = 0.0, entropy = 0.0,
         dissimilarity = 0.0;
  std::vector<double> px(G, 0.0), py(G, 0.0);
  for (std::size_t i = 0; i < G; ++i)
    for (std::size_t j = 0; j < G; ++j) {
      const double v = p.at(i, j);
      const double d = static_cast<double>(i) - static_cast<double>(j);
      contrast += d * d * v;
      joint_energy += v * v;
      homogeneity += v / (1.0 + d * d);
      dissimilarity += std::abs(d) * v;
      if (v > 0.0) entropy -= v * std::log2(v);
      px[i] += v;
      py[j] += v;
    }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    mx += i * px[i];
    my += i * py[i];
  }
  double sx = 0.0, sy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    sx += (i - mx) * (i - mx) * px[i];
    sy += (i - my) * (i - my) * py[i];
  }
  for (std::size_t i = 0; i < G; ++i)
    for (std::size_t j = 0; j < G; ++j) cov += (i - mx) * (j - my) * p.at(i, j);
  // uniform-texture limit: zero marginal variance defines correlation as 1
  const double correlation = (sx > 1e-15 && sy > 1e-15) ? cov / std::sqrt(sx * sy) : 1.0;
  return {contrast, correlation, joint_energy, homogeneity, entropy, dissimilarity};
}

TextureMatrix glrlm(const QuantizedROI& roi) {
  const std::size_t G = static_cast<std::size_t>(roi.num_levels);
  const std::size_t maxrun = std::max(roi.width, roi.height);
  TextureMatrix out{G, maxrun, std::vector<double>(G * maxrun, 0.0)};
  const long W = static_cast<long>(roi.width), H = static_cast<long>(roi.height);
  for (const auto& [dy, dx] : four_directions()) {
    // walk every maximal line in direction (dy,dx); starts are cells whose
    // predecessor lies outside the grid
    for (long y0 = 0; y0 < H; ++y0)
      for (long x0 = 0; x0 < W; ++x0) {
        const long py = y0 - dy, px = x0 - dx;
        if (py >= 0 && py < H && px >= 0 && px < W) continue;  // not a line start
        long y = y0, x = x0;
        int cur = -1;
        std::size_t run = 0;
        while (y >= 0 && y < H && x >= 0 && x < W) {
          const int lvl = roi.level_at(y, x);
          if (lvl == cur) {
            ++run;
          } else {
            if (run > 0) out.at(cur - 1, run - 1) += 1.0;
            cur = lvl;
            run = 1;
          }
          y += dy;
          x += dx;
        }
        if (run > 0) out.at(cur - 1, run - 1) += 1.0;
      }
  }
  return out;
}

std::array<double, 4> glrlm_features(const TextureMatrix& r, std::size_t num_pixels) {
  double nr = 0.0, sre = 0.0, lre = 0.0, gln = 0.0;
  for (std::size_t i = 0; i < r.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < r.cols; ++j) {
      const double v = r.at(i, j);
      const double len = static_cast<double>(j + 1);
      nr += v;
      sre += v / (len * len);
      lre += v * len * len;
      row += v;
    }
    gln += row * row;
  }
  if (nr == 0.0) throw DataError("glrlm_features: empty run matrix");
  return {sre / nr, lre / nr, gln / nr, nr / static_cast<double>(num_pixels)};
}

namespace {

// 8-connected zones of equal level; returns per-zone (level, size).
std::vector<std::pair<int, std::size_t>> find_zones(const QuantizedROI& roi) {
  const long W = static_cast<long>(roi.width), H = static_cast<long>(roi.height);
  std::vector<char> seen(roi.pixels(), 0);
  std::vector<std::pair<int, std::size_t>> zones;
  std::deque<long> queue;
  for (long start = 0; start < static_cast<long>(roi.pixels()); ++start) {
    if (seen[start]) continue;
    const int lvl = roi.levels[start];
    std::size_t size = 0;
    seen[start] = 1;
    queue.push_back(start);
    while (!queue.empty()) {
      const long p = queue.front();
      queue.pop_front();
      ++size;
      const long y = p / W, x = p % W;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
          const long np = ny * W + nx;
          if (!seen[np] && roi.levels[np] == lvl) {
            seen[np] = 1;
            queue.push_back(np);
          }
        }
    }
    zones.emplace_back(lvl, size);
  }
  return zones;
}

}  // namespace

TextureMatrix glszm(const QuantizedROI& roi) {
  const std::size_t G = static_cast<std::size_t>(roi.num_levels);
  auto zones = find_zones(roi);
  std::size_t maxz = 1;
  for (const auto& [lvl, size] : zones) maxz = std::max(maxz, size);
  TextureMatrix out{G, maxz, std::vector<double>(G * maxz, 0.0)};
  for (const auto& [lvl, size] : zones) out.at(lvl - 1, size - 1) += 1.0;
  return out;
}

std::array<double, 3> glszm_features(const TextureMatrix& s, std::size_t num_pixels) {
  double nz = 0.0, sae = 0.0, lae = 0.0;
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) {
      const double v = s.at(i, j);
      const double z = static_cast<double>(j + 1);
      nz += v;
      sae += v / (z * z);
      lae += v * z * z;
    }
  if (nz == 0.0) throw DataError("glszm_features: empty zone matrix");
  return {sae / nz, lae / nz, nz / static_cast<double>(num_pixels)};
}

NgtdmTable ngtdm(const QuantizedROI& roi) {
  if (roi.width < 2 || roi.height < 2) throw DataError("ngtdm: ROI must be at least 2x2");
  const std::size_t G = static_cast<std::size_t>(roi.num_levels);
  NgtdmTable t;
  t.s.assign(G, 0.0);
  t.n.assign(G, 0);
  if (roi.width < 3 || roi.height < 3) return t;  // no interior pixels
  for (std::size_t y = 1; y + 1 < roi.height; ++y)
    for (std::size_t x = 1; x + 1 < roi.width; ++x) {
      double nsum = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          nsum += roi.level_at(y + dy, x + dx);
        }
      const int lvl = roi.level_at(y, x);
      t.s[lvl - 1] += std::abs(lvl - nsum / 8.0);
      ++t.n[lvl - 1];
      ++t.valid;
    }
  return t;
}

std::array<double, 3> ngtdm_features(const NgtdmTable& t) {
  const std::size_t G = t.s.size();
  if (t.valid == 0) return {1e6, 0.0, 0.0};
  std::vector<double> p(G, 0.0);
  std::size_t ngp = 0;
  for (std::size_t i = 0; i < G; ++i) {
    p[i] = static_cast<double>(t.n[i]) / t.valid;
    if (t.n[i] > 0) ++ngp;
  }
  double ps_sum = 0.0, s_sum = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    ps_sum += p[i] * t.s[i];
    s_sum += t.s[i];
  }
  const double coarseness = ps_sum > 0.0 ? 1.0 / ps_sum : 1e6;

  double contrast = 0.0;
  if (ngp > 1) {
    double pair_sum = 0.0;
    for (std::size_t i = 0; i < G; ++i)
      for (std::size_t j = 0; j < G; ++j) {
        const double d = static_cast<double>(i) - static_cast<double>(j);
        pair_sum += p[i] * p[j] * d * d;
      }
    contrast = pair_sum / (static_cast<double>(ngp) * (ngp - 1)) * (s_sum / t.valid);
  }

  double busy_den = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    if (t.n[i] == 0) continue;
    for (std::size_t j = 0; j < G; ++j) {
      if (t.n[j] == 0 || i == j) continue;
      busy_den += std::abs(static_cast<double>(i + 1) * p[i] - static_cast<double>(j + 1) * p[j]);
    }
  }
  const double busyness = busy_den > 0.0 ? ps_sum / busy_den : 0.0;
  return {coarseness, contrast, busyness};
}

TextureMatrix gldm(const QuantizedROI& roi) {
  if (roi.width < 2 || roi.height < 2) throw DataError("gldm: ROI must be at least 2x2");
  const std::size_t G = static_cast<std::size_t>(roi.num_levels);
  TextureMatrix out{G, 9, std::vector<double>(G * 9, 0.0)};  // dependence 1..9
  const long W = static_cast<long>(roi.width), H = static_cast<long>(roi.height);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      const int lvl = roi.level_at(y, x);
      int dep = 1;  // the center always depends on itself
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
          if (roi.level_at(ny, nx) == lvl) ++dep;
        }
      out.at(lvl - 1, dep - 1) += 1.0;
    }
  return out;
}

std::array<double, 3> gldm_features(const TextureMatrix& d) {
  double nd = 0.0, sde = 0.0, lde = 0.0, dn = 0.0;
  for (std::size_t j = 0; j < d.cols; ++j) {
    double col = 0.0;
    const double k = static_cast<double>(j + 1);
    for (std::size_t i = 0; i < d.rows; ++i) {
      const double v = d.at(i, j);
      nd += v;
      sde += v / (k * k);
      lde += v * k * k;
      col += v;
    }
    dn += col * col;
  }
  if (nd == 0.0) throw DataError("gldm_features: empty dependence matrix");
  return {sde / nd, lde / nd, dn / nd};
}

FeatureVector raw_features(const Tensor& image, const BoundingBox& box, int G) {
  ImageView img = as_image(image);
  QuantizedROI roi = quantize(image, box, G);
  FeatureVector f{};
  std::size_t k = 0;
  for (double v : first_order(roi)) f[k++] = v;
  for (double v : shape_features(box, img.w, img.h)) f[k++] = v;
  for (double v : glcm_features(glcm(roi, four_directions()))) f[k++] = v;
  for (double v : glrlm_features(glrlm(roi), roi.pixels())) f[k++] = v;
  for (double v : glszm_features(glszm(roi), roi.pixels())) f[k++] = v;
  for (double v : ngtdm_features(ngtdm(roi))) f[k++] = v;
  for (double v : gldm_features(gldm(roi))) f[k++] = v;
  return f;
}

NormalizationStats NormalizationStats::identity() {
  NormalizationStats s;
  s.mean.fill(0.0);
  s.stddev.fill(1.0);
  return s;
}

NormalizationStats NormalizationStats::fit(const std::vector<FeatureVector>& samples) {
  if (samples.empty()) throw DataError("NormalizationStats: no samples");
  NormalizationStats s;
  s.mean.fill(0.0);
  s.stddev.fill(0.0);
  for (const auto& f : samples)
    for (int i = 0; i < kFeatureCount; ++i) s.mean[i] += f[i];
  for (int i = 0; i < kFeatureCount; ++i) s.mean[i] /= samples.size();
  for (const auto& f : samples)
    for (int i = 0; i < kFeatureCount; ++i) {
      const double d = f[i] - s.mean[i];
      s.stddev[i] += d * d;
    }
  for (int i = 0; i < kFeatureCount; ++i)
    s.stddev[i] = std::sqrt(s.stddev[i] / samples.size());
  return s;
}

FeatureVector extract(const Tensor& image, const BoundingBox& box,
                      const NormalizationStats& stats, int G) {
  FeatureVector raw = raw_features(image, box, G);
  FeatureVector out{};
  for (int i = 0; i < kFeatureCount; ++i) {
    if (!std::isfinite(raw[i]))
      throw DataError("extract: non-finite feature '" + feature_names()[i] + "' for box " +
                      box.str());
    const double sd = stats.stddev[i] > 0.0 ? stats.stddev[i] : 1.0;
    out[i] = std::clamp((raw[i] - stats.mean[i]) / sd, -6.0, 6.0);
  }
  return out;
}

}  // namespace kacl::radiomics
