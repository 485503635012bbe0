#include "kacl/ops.hpp"

#include <cmath>

#include "kacl/kernels.hpp"

namespace kacl::ops {

namespace k = kacl::kernels;

void record_op(std::string name, std::vector<Tensor> inputs, Tensor output,
               std::function<void(Graph&)> backward, std::function<void()> replay) {
  Graph* g = active_graph();
  if (!g) return;
  g->record(GraphNode{std::move(name), std::move(inputs), std::move(output),
                      std::move(backward), std::move(replay)});
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  k::add(a.data(), b.data(), out.data(), out.size());
  record_op(
      "add", {a, b}, out,
      [a, b, out](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        k::add(g.grad_accum(a).data(), go.data(), g.grad_accum(a).data(), go.size());
        k::add(g.grad_accum(b).data(), go.data(), g.grad_accum(b).data(), go.size());
      },
      [a, b, out]() mutable { k::add(a.data(), b.data(), out.data(), out.size()); });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  k::scale(c, a.data(), out.data(), out.size());
  record_op(
      "scale", {a}, out,
      [a, c, out](Graph& g) mutable {
        k::axpy(c, g.grad_of(out)->data(), g.grad_accum(a).data(), a.size());
      },
      [a, c, out]() mutable { k::scale(c, a.data(), out.data(), out.size()); });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  k::mul(a.data(), b.data(), out.data(), out.size());
  record_op(
      "mul", {a, b}, out,
      [a, b, out](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        auto& ga = g.grad_accum(a);
        auto& gb = g.grad_accum(b);
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i] * b[i];
          gb[i] += go[i] * a[i];
        }
      },
      [a, b, out]() mutable { k::mul(a.data(), b.data(), out.data(), out.size()); });
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  Tensor out = Tensor::scalar(s);
  record_op(
      "sum", {a}, out,
      [a, out](Graph& g) mutable {
        double go = (*g.grad_of(out))[0];
        auto& ga = g.grad_accum(a);
        for (auto& v : ga) v += go;
      },
      [a, out]() mutable {
        double s2 = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s2 += a[i];
        out[0] = s2;
      });
  return out;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw ConfigError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                      shape_str(new_shape));
  Tensor out = Tensor::from(std::move(new_shape), a.buffer());
  record_op(
      "reshape", {a}, out,
      [a, out](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        k::add(g.grad_accum(a).data(), go.data(), g.grad_accum(a).data(), go.size());
      },
      [a, out]() mutable { out.buffer() = a.buffer(); });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  k::relu(x.data(), out.data(), out.size());
  record_op(
      "relu", {x}, out,
      [x, out](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        std::vector<double> gx(x.size());
        k::relu_backward(x.data(), go.data(), gx.data(), x.size());
        k::add(g.grad_accum(x).data(), gx.data(), g.grad_accum(x).data(), x.size());
      },
      [x, out]() mutable { k::relu(x.data(), out.data(), out.size()); });
  return out;
}

namespace {
double sigmoid1(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid1(x[i]);
  record_op(
      "sigmoid", {x}, out,
      [x, out](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        auto& gx = g.grad_accum(x);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += go[i] * out[i] * (1.0 - out[i]);
      },
      [x, out]() mutable {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid1(x[i]);
      });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1)
    throw ConfigError("linear: expected x[in], W[out,in], b[out]");
  const std::size_t in = x.shape()[0], outw = W.shape()[0];
  if (W.shape()[1] != in || b.shape()[0] != outw)
    throw ConfigError("linear: shape mismatch x" + shape_str(x.shape()) + " W" +
                      shape_str(W.shape()) + " b" + shape_str(b.shape()));
  Tensor out = Tensor::zeros({outw});
  for (std::size_t o = 0; o < outw; ++o) out[o] = k::dot(W.data() + o * in, x.data(), in) + b[o];
  record_op(
      "linear", {x, W, b}, out,
      [x, W, b, out, in, outw](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        auto& gx = g.grad_accum(x);
        auto& gW = g.grad_accum(W);
        auto& gb = g.grad_accum(b);
        for (std::size_t o = 0; o < outw; ++o) {
          k::axpy(go[o], W.data() + o * in, gx.data(), in);
          k::axpy(go[o], x.data(), gW.data() + o * in, in);
          gb[o] += go[o];
        }
      },
      [x, W, b, out, in, outw]() mutable {
        for (std::size_t o = 0; o < outw; ++o)
          out[o] = k::dot(W.data() + o * in, x.data(), in) + b[o];
      });
  return out;
}

namespace {

struct ConvDims {
  std::size_t N, C, H, W, F, kH, kW, Ho, Wo, patch;
  int stride, pad;
};

// Column matrix: one row of length C*kH*kW per output pixel.
void im2col(const double* in, const ConvDims& d, std::size_t n, std::vector<double>& col) {
  const std::size_t plane = d.H * d.W;
  const double* img = in + n * d.C * plane;
  std::size_t r = 0;
  for (std::size_t oh = 0; oh < d.Ho; ++oh)
    for (std::size_t ow = 0; ow < d.Wo; ++ow, ++r) {
      double* row = col.data() + r * d.patch;
      std::size_t idx = 0;
      for (std::size_t c = 0; c < d.C; ++c)
        for (std::size_t kh = 0; kh < d.kH; ++kh) {
          const long ih = static_cast<long>(oh) * d.stride + static_cast<long>(kh) - d.pad;
          for (std::size_t kw = 0; kw < d.kW; ++kw, ++idx) {
            const long iw = static_cast<long>(ow) * d.stride + static_cast<long>(kw) - d.pad;
            row[idx] = (ih >= 0 && ih < static_cast<long>(d.H) && iw >= 0 &&
                        iw < static_cast<long>(d.W))
                           ? img[c * plane + ih * d.W + iw]
                           : 0.0;
          }
        }
    }
}

void col2im_accum(const std::vector<double>& col, const ConvDims& d, std::size_t n, double* gin) {
  const std::size_t plane = d.H * d.W;
  double* img = gin + n * d.C * plane;
  std::size_t r = 0;
  for (std::size_t oh = 0; oh < d.Ho; ++oh)
    for (std::size_t ow = 0; ow < d.Wo; ++ow, ++r) {
      const double* row = col.data() + r * d.patch;
      std::size_t idx = 0;
      for (std::size_t c = 0; c < d.C; ++c)
        for (std::size_t kh = 0; kh < d.kH; ++kh) {
          const long ih = static_cast<long>(oh) * d.stride + static_cast<long>(kh) - d.pad;
          for (std::size_t kw = 0; kw < d.kW; ++kw, ++idx) {
            const long iw = static_cast<long>(ow) * d.stride + static_cast<long>(kw) - d.pad;
            if (ih >= 0 && ih < static_cast<long>(d.H) && iw >= 0 && iw < static_cast<long>(d.W))
              img[c * plane + ih * d.W + iw] += row[idx];
          }
        }
    }
}

void conv_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, Tensor& out,
                  const ConvDims& d) {
  std::vector<double> col(d.Ho * d.Wo * d.patch);
  for (std::size_t n = 0; n < d.N; ++n) {
    im2col(input.data(), d, n, col);
    double* onf = out.data() + n * d.F * d.Ho * d.Wo;
    for (std::size_t f = 0; f < d.F; ++f) {
      const double* kf = kernel.data() + f * d.patch;
      for (std::size_t r = 0; r < d.Ho * d.Wo; ++r)
        onf[f * d.Ho * d.Wo + r] = k::dot(kf, col.data() + r * d.patch, d.patch) + bias[f];
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1)
    throw ConfigError("conv2d: expected input[N,C,H,W], kernel[F,C,kH,kW], bias[F]");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  ConvDims d;
  d.N = input.shape()[0];
  d.C = input.shape()[1];
  d.H = input.shape()[2];
  d.W = input.shape()[3];
  d.F = kernel.shape()[0];
  d.kH = kernel.shape()[2];
  d.kW = kernel.shape()[3];
  d.stride = stride;
  d.pad = padding;
  if (kernel.shape()[1] != d.C)
    throw ConfigError("conv2d: kernel channels " + std::to_string(kernel.shape()[1]) +
                      " != input channels " + std::to_string(d.C));
  if (bias.shape()[0] != d.F) throw ConfigError("conv2d: bias length != filter count");
  if (d.kH > d.H + 2 * d.pad || d.kW > d.W + 2 * d.pad)
    throw ConfigError("conv2d: kernel larger than padded input");
  d.Ho = (d.H + 2 * padding - d.kH) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kW) / stride + 1;
  d.patch = d.C * d.kH * d.kW;

  Tensor out = Tensor::zeros({d.N, d.F, d.Ho, d.Wo});
  conv_forward(input, kernel, bias, out, d);

  record_op(
      "conv2d", {input, kernel, bias}, out,
      [input, kernel, bias, out, d](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        auto& gin = g.grad_accum(input);
        auto& gk = g.grad_accum(kernel);
        auto& gb = g.grad_accum(bias);
        const std::size_t opix = d.Ho * d.Wo;
        std::vector<double> col(opix * d.patch), gcol(opix * d.patch);
        for (std::size_t n = 0; n < d.N; ++n) {
          im2col(input.data(), d, n, col);
          std::fill(gcol.begin(), gcol.end(), 0.0);
          const double* gon = go.data() + n * d.F * opix;
          for (std::size_t f = 0; f < d.F; ++f) {
            const double* kf = kernel.data() + f * d.patch;
            double* gkf = gk.data() + f * d.patch;
            for (std::size_t r = 0; r < opix; ++r) {
              const double gy = gon[f * opix + r];
              if (gy == 0.0) continue;
              k::axpy(gy, col.data() + r * d.patch, gkf, d.patch);
              k::axpy(gy, kf, gcol.data() + r * d.patch, d.patch);
              gb[f] += gy;
            }
          }
          col2im_accum(gcol, d, n, gin.data());
        }
      },
      [input, kernel, bias, out, d]() mutable { conv_forward(input, kernel, bias, out, d); });
  return out;
}

namespace {
void maxpool_forward(const Tensor& x, Tensor& out, std::vector<std::size_t>& argmax,
                     std::size_t N, std::size_t C, std::size_t H, std::size_t W, int k_,
                     int stride, std::size_t Ho, std::size_t Wo) {
  const std::size_t plane = H * W;
  std::size_t o = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* img = x.data() + (n * C + c) * plane;
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
          double best = -1.0;
          std::size_t besti = 0;
          bool first = true;
          for (int kh = 0; kh < k_; ++kh)
            for (int kw = 0; kw < k_; ++kw) {
              const std::size_t ih = oh * stride + kh, iw = ow * stride + kw;
              const double v = img[ih * W + iw];
              if (first || v > best) {  // ties keep the first in scan order
                best = v;
                besti = ih * W + iw;
                first = false;
              }
            }
          out[o] = best;
          argmax[o] = (n * C + c) * plane + besti;
        }
    }
}
}  // namespace

Tensor max_pool2d(const Tensor& x, int k_, int stride) {
  if (x.rank() != 4) throw ConfigError("max_pool2d: expected [N,C,H,W]");
  if (k_ <= 0 || stride <= 0) throw ConfigError("max_pool2d: window and stride must be positive");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (static_cast<std::size_t>(k_) > H || static_cast<std::size_t>(k_) > W)
    throw ConfigError("max_pool2d: window exceeds input");
  const std::size_t Ho = (H - k_) / stride + 1, Wo = (W - k_) / stride + 1;
  Tensor out = Tensor::zeros({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  maxpool_forward(x, out, *argmax, N, C, H, W, k_, stride, Ho, Wo);
  record_op(
      "max_pool2d", {x}, out,
      [x, out, argmax](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        auto& gx = g.grad_accum(x);
        for (std::size_t o = 0; o < go.size(); ++o) gx[(*argmax)[o]] += go[o];
      },
      [x, out, argmax, N, C, H, W, k_, stride, Ho, Wo]() mutable {
        maxpool_forward(x, out, *argmax, N, C, H, W, k_, stride, Ho, Wo);
      });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ConfigError("global_avg_pool: expected [N,C,H,W]");
  const std::size_t N = x.shape()[0], C = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  Tensor out = Tensor::zeros({N, C});
  auto fwd = [x, out, N, C, plane]() mutable {
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double s = 0.0;
      const double* p = x.data() + nc * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out[nc] = s / static_cast<double>(plane);
    }
  };
  fwd();
  record_op(
      "global_avg_pool", {x}, out,
      [x, out, N, C, plane](Graph& g) mutable {
        const auto& go = *g.grad_of(out);
        auto& gx = g.grad_accum(x);
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t nc = 0; nc < N * C; ++nc)
          for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += go[nc] * inv;
      },
      fwd);
  return out;
}

Tensor batch_mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s * inv);
  record_op(
      "batch_mean", {x}, out,
      [x, out, inv](Graph& g) mutable {
        const double go = (*g.grad_of(out))[0] * inv;
        auto& gx = g.grad_accum(x);
        for (auto& v : gx) v += go;
      },
      [x, out, inv]() mutable {
        double s2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s2 += x[i];
        out[0] = s2 * inv;
      });
  return out;
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw UsageError("mean_of: empty list");
  for (const auto& t : scalars)
    if (t.size() != 1) throw UsageError("mean_of: all tensors must be scalar");
  const double inv = 1.0 / static_cast<double>(scalars.size());
  double s = 0.0;
  for (const auto& t : scalars) s += t[0];
  Tensor out = Tensor::scalar(s * inv);
  record_op(
      "mean_of", scalars, out,
      [scalars, out, inv](Graph& g) mutable {
        const double go = (*g.grad_of(out))[0] * inv;
        for (const auto& t : scalars) g.grad_accum(t)[0] += go;
      },
      [scalars, out, inv]() mutable {
        double s2 = 0.0;
        for (const auto& t : scalars) s2 += t[0];
        out[0] = s2 * inv;
      });
  return out;
}

Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.size()) throw UsageError("pick: index out of range");
  Tensor out = Tensor::scalar(x[index]);
  record_op(
      "pick", {x}, out,
      [x, out, index](Graph& g) mutable {
        g.grad_accum(x)[index] += (*g.grad_of(out))[0];
      },
      [x, out, index]() mutable { out[0] = x[index]; });
  return out;
}

}  // namespace kacl::ops
