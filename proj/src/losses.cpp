#include "kacl/losses.hpp"

#include <cmath>

#include "kacl/kernels.hpp"
#include "kacl/ops.hpp"

namespace kacl {

namespace k = kacl::kernels;

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("LossConfig: tau must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("LossConfig: alpha must be in (0,1)");
  if (!(gamma >= 0.0)) throw ConfigError("LossConfig: gamma must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("LossConfig: lambda must be in [0,1]");
  if (!(cam_threshold > 0.0 && cam_threshold < 1.0))
    throw ConfigError("LossConfig: cam_threshold must be in (0,1)");
}

double cosine_sim(const std::vector<double>& u, const std::vector<double>& v, double epsilon) {
  if (u.size() != v.size()) throw ConfigError("cosine_sim: length mismatch");
  const double nu = std::sqrt(k::dot(u.data(), u.data(), u.size()));
  const double nv = std::sqrt(k::dot(v.data(), v.data(), v.size()));
  if (nu < epsilon || nv < epsilon) return 0.0;
  return k::dot(u.data(), v.data(), u.size()) / (nu * nv);
}

namespace {

// s = u.v / (|u||v|); accumulates go * ds/du into gu (and symmetrically gv).
void cosine_backward(double go, const double* u, const double* v, double nu, double nv, double s,
                     double* gu, double* gv, std::size_t n) {
  const double inv = 1.0 / (nu * nv);
  const double inv_u2 = 1.0 / (nu * nu);
  const double inv_v2 = 1.0 / (nv * nv);
  for (std::size_t i = 0; i < n; ++i) {
    gu[i] += go * (v[i] * inv - s * u[i] * inv_u2);
    gv[i] += go * (u[i] * inv - s * v[i] * inv_v2);
  }
}

struct SimParts {
  double nu, nv, s;
  bool degenerate;
};

SimParts sim_parts(const Tensor& u, const Tensor& v, double epsilon) {
  SimParts p;
  p.nu = std::sqrt(k::dot(u.data(), u.data(), u.size()));
  p.nv = std::sqrt(k::dot(v.data(), v.data(), v.size()));
  p.degenerate = p.nu < epsilon || p.nv < epsilon;
  p.s = p.degenerate ? 0.0 : k::dot(u.data(), v.data(), u.size()) / (p.nu * p.nv);
  return p;
}

}  // namespace

Tensor cosine_sim_op(const Tensor& u, const Tensor& v, double epsilon) {
  if (u.size() != v.size()) throw ConfigError("cosine_sim: length mismatch");
  SimParts p = sim_parts(u, v, epsilon);
  Tensor out = Tensor::scalar(p.s);
  ops::record_op(
      "cosine_sim", {u, v}, out,
      [u, v, out, epsilon](Graph& g) mutable {
        SimParts p2 = sim_parts(u, v, epsilon);
        if (p2.degenerate) return;  // zero-norm convention: no gradient
        cosine_backward((*g.grad_of(out))[0], u.data(), v.data(), p2.nu, p2.nv, p2.s,
                        g.grad_accum(u).data(), g.grad_accum(v).data(), u.size());
      },
      [u, v, out, epsilon]() mutable { out[0] = sim_parts(u, v, epsilon).s; });
  return out;
}

Tensor kacl_loss(const Tensor& z_i, const Tensor& z_r, const std::vector<Tensor>& negatives,
                 const LossConfig& cfg) {
  cfg.validate();
  if (cfg.literal_denominator && negatives.empty())
    throw UsageError("kacl_loss: literal denominator undefined with zero negatives");
  for (const auto& neg : negatives)
    if (neg.size() != z_i.size()) throw ConfigError("kacl_loss: negative width mismatch");

  const double inv_tau = 1.0 / cfg.tau;
  auto compute = [z_i, z_r, negatives, cfg, inv_tau](std::vector<double>* sims) {
    const double sp = cosine_sim(z_i.buffer(), z_r.buffer(), cfg.epsilon);
    const double ep = std::exp(sp * inv_tau);
    double denom = cfg.literal_denominator ? 0.0 : ep;
    std::vector<double> sn(negatives.size());
    for (std::size_t j = 0; j < negatives.size(); ++j) {
      sn[j] = cosine_sim(z_i.buffer(), negatives[j].buffer(), cfg.epsilon);
      denom += std::exp(sn[j] * inv_tau);
    }
    if (sims) {
      *sims = std::move(sn);
      sims->push_back(sp);  // positive last
    }
    return std::log(denom) - sp * inv_tau;
  };

  Tensor out = Tensor::scalar(compute(nullptr));
  std::vector<Tensor> inputs = {z_i, z_r};
  inputs.insert(inputs.end(), negatives.begin(), negatives.end());

  ops::record_op(
      "kacl_loss", std::move(inputs), out,
      [z_i, z_r, negatives, cfg, inv_tau, out](Graph& g) mutable {
        const double go = (*g.grad_of(out))[0];
        const double sp = cosine_sim(z_i.buffer(), z_r.buffer(), cfg.epsilon);
        const double ep = std::exp(sp * inv_tau);
        double denom = cfg.literal_denominator ? 0.0 : ep;
        std::vector<double> sn(negatives.size()), en(negatives.size());
        for (std::size_t j = 0; j < negatives.size(); ++j) {
          sn[j] = cosine_sim(z_i.buffer(), negatives[j].buffer(), cfg.epsilon);
          en[j] = std::exp(sn[j] * inv_tau);
          denom += en[j];
        }
        // d loss / d s_p
        const double dlp =
            cfg.literal_denominator ? -inv_tau : (ep / denom - 1.0) * inv_tau;
        {
          SimParts p = sim_parts(z_i, z_r, cfg.epsilon);
          if (!p.degenerate)
            cosine_backward(go * dlp, z_i.data(), z_r.data(), p.nu, p.nv, p.s,
                            g.grad_accum(z_i).data(), g.grad_accum(z_r).data(), z_i.size());
        }
        for (std::size_t j = 0; j < negatives.size(); ++j) {
          const double dln = (en[j] / denom) * inv_tau;
          SimParts p = sim_parts(z_i, negatives[j], cfg.epsilon);
          if (!p.degenerate)
            cosine_backward(go * dln, z_i.data(), negatives[j].data(), p.nu, p.nv, p.s,
                            g.grad_accum(z_i).data(), g.grad_accum(negatives[j]).data(),
                            z_i.size());
        }
      },
      [compute, out]() mutable { out[0] = compute(nullptr); });
  return out;
}

double focal_loss_value(double p, int y, const LossConfig& cfg) {
  const double lo = cfg.epsilon, hi = 1.0 - cfg.epsilon;
  p = std::min(hi, std::max(lo, p));
  if (y == 1) return -cfg.alpha * std::pow(1.0 - p, cfg.gamma) * std::log(p);
  return -(1.0 - cfg.alpha) * std::pow(p, cfg.gamma) * std::log(1.0 - p);
}

Tensor focal_loss(const Tensor& probs, const std::vector<int>& labels, const LossConfig& cfg) {
  cfg.validate();
  if (labels.size() != probs.size())
    throw ConfigError("focal_loss: labels length != probs length");
  const double inv_n = 1.0 / static_cast<double>(probs.size());

  auto forward = [probs, labels, cfg, inv_n]() {
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
      s += focal_loss_value(probs[i], labels[i], cfg);
    return s * inv_n;
  };

  Tensor out = Tensor::scalar(forward());
  ops::record_op(
      "focal_loss", {probs}, out,
      [probs, labels, cfg, inv_n, out](Graph& g) mutable {
        const double go = (*g.grad_of(out))[0] * inv_n;
        auto& gp = g.grad_accum(probs);
        const double lo = cfg.epsilon, hi = 1.0 - cfg.epsilon;
        for (std::size_t i = 0; i < probs.size(); ++i) {
          const double p = probs[i];
          if (p <= lo || p >= hi) continue;  // clamp active: no gradient
          double d;
          if (labels[i] == 1) {
            d = -cfg.alpha * std::pow(1.0 - p, cfg.gamma) / p;
            if (cfg.gamma > 0.0)
              d += cfg.alpha * cfg.gamma * std::pow(1.0 - p, cfg.gamma - 1.0) * std::log(p);
          } else {
            d = (1.0 - cfg.alpha) * std::pow(p, cfg.gamma) / (1.0 - p);
            if (cfg.gamma > 0.0)
              d -= (1.0 - cfg.alpha) * cfg.gamma * std::pow(p, cfg.gamma - 1.0) *
                   std::log(1.0 - p);
          }
          gp[i] += go * d;
        }
      },
      [forward, out]() mutable { out[0] = forward(); });
  return out;
}

double total_loss_value(double l_cl, double l_fl, const LossConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(l_cl) || !std::isfinite(l_fl))
    throw NumericError("total_loss: non-finite component (L_cl=" + std::to_string(l_cl) +
                       ", L_fl=" + std::to_string(l_fl) + ")");
  return cfg.lambda * l_cl + (1.0 - cfg.lambda) * l_fl;
}

Tensor total_loss(const Tensor& l_cl, const Tensor& l_fl, const LossConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(l_cl.value()) || !std::isfinite(l_fl.value()))
    throw NumericError("total_loss: non-finite component (L_cl=" +
                       std::to_string(l_cl.value()) + ", L_fl=" + std::to_string(l_fl.value()) +
                       ")");
  if (cfg.lambda == 0.0) return ops::scale(l_fl, 1.0);
  if (cfg.lambda == 1.0) return ops::scale(l_cl, 1.0);
  return ops::add(ops::scale(l_cl, cfg.lambda), ops::scale(l_fl, 1.0 - cfg.lambda));
}

}  // namespace kacl
