#include "kacl/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "kacl/ops.hpp"

namespace kacl {

std::vector<double> bilinear_resize(const std::vector<double>& src, std::size_t sw,
                                    std::size_t sh, std::size_t dw, std::size_t dh) {
  std::vector<double> dst(dw * dh);
  const double sx_ratio = static_cast<double>(sw) / dw;
  const double sy_ratio = static_cast<double>(sh) / dh;
  for (std::size_t y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy_ratio - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx_ratio - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
      const double bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
      dst[y * dw + x] = top * (1.0 - wy) + bot * wy;
    }
  }
  return dst;
}

Heatmap gradcam(const ImageEncoder& encoder, const ClassifierHead& head, const Tensor& image,
                int target_class) {
  std::size_t H, W;
  if (image.rank() == 2) {
    H = image.shape()[0];
    W = image.shape()[1];
  } else if (image.rank() == 3 && image.shape()[0] == 1) {
    H = image.shape()[1];
    W = image.shape()[2];
  } else {
    throw ConfigError("gradcam: expected [H,W] or [1,H,W] image");
  }

  Graph g;
  Tensor stage4;
  {
    Recording rec(g);
    EncodeResult enc = encoder.encode(image);
    stage4 = enc.stage4;
    Tensor logit_vec = head.logits(enc.y);
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= logit_vec.size())
      throw ConfigError("gradcam: target class out of range");
    Tensor score = ops::pick(logit_vec, static_cast<std::size_t>(target_class));
    // Isolated tape: gradients stay inside this graph, never in Tensor::grad.
    g.backward(score, /*write_grads=*/false);
  }

  const std::size_t C = stage4.shape()[1], h = stage4.shape()[2], w = stage4.shape()[3];
  const std::size_t plane = h * w;
  const std::vector<double>* sg = g.grad_of(stage4);

  std::vector<double> raw(plane, 0.0);
  if (sg) {
    for (std::size_t c = 0; c < C; ++c) {
      double wc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) wc += (*sg)[c * plane + i];
      wc /= static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) raw[i] += wc * stage4[c * plane + i];
    }
  }
  for (auto& v : raw) v = std::max(v, 0.0);

  Heatmap hm;
  hm.width = W;
  hm.height = H;
  hm.source_class = target_class;
  hm.values = bilinear_resize(raw, w, h, W, H);
  const double mx = *std::max_element(hm.values.begin(), hm.values.end());
  if (mx > 0.0)
    for (auto& v : hm.values) v /= mx;
  return hm;
}

BoundingBox threshold_to_bbox(const Heatmap& hm, double threshold, const BoundingBox& fallback) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("threshold_to_bbox: threshold must be in (0,1)");
  const std::size_t W = hm.width, H = hm.height;
  std::vector<char> mask(W * H), seen(W * H, 0);
  bool any = false;
  for (std::size_t i = 0; i < W * H; ++i) {
    mask[i] = hm.values[i] > threshold;
    any = any || mask[i];
  }
  if (!any) return fallback;

  BoundingBox best;
  long best_area = 0;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < W * H; ++start) {
    if (!mask[start] || seen[start]) continue;
    // flood fill one 4-connected component
    long area = 0;
    std::size_t minx = W, maxx = 0, miny = H, maxy = 0;
    queue.push_back(start);
    seen[start] = 1;
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const std::size_t x = p % W, y = p / W;
      ++area;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
      const std::size_t neigh[4] = {p - 1, p + 1, p - W, p + W};
      const bool ok[4] = {x > 0, x + 1 < W, y > 0, y + 1 < H};
      for (int k = 0; k < 4; ++k)
        if (ok[k] && mask[neigh[k]] && !seen[neigh[k]]) {
          seen[neigh[k]] = 1;
          queue.push_back(neigh[k]);
        }
    }
    if (area > best_area) {
      best_area = area;
      best = {static_cast<int>(minx), static_cast<int>(miny), static_cast<int>(maxx) + 1,
              static_cast<int>(maxy) + 1};
    }
  }
  return best;
}

}  // namespace kacl
