#pragma once

#include <vector>

#include "kacl/tensor.hpp"

namespace kacl {

struct LossConfig {
  double tau = 0.5;      // contrastive temperature, > 0
  double alpha = 0.25;   // focal positive/negative weight, in (0,1)
  double gamma = 2.0;    // focal easy/hard exponent, >= 0
  double lambda = 0.5;   // total-loss mix, in [0,1]
  // When true the contrastive denominator sums negatives only, as written in
  // the displayed equation; default adds the positive term (standard NT-Xent),
  // which keeps the loss nonnegative and defined with zero negatives.
  bool literal_denominator = false;
  double epsilon = 1e-12;
  double cam_threshold = 0.5;  // heatmap binarization threshold, in (0,1)

  void validate() const;
};

// Plain cosine similarity; zero-norm vectors map to 0.
double cosine_sim(const std::vector<double>& u, const std::vector<double>& v,
                  double epsilon = 1e-12);

// Differentiable cosine similarity between two 1-D tensors -> scalar.
Tensor cosine_sim_op(const Tensor& u, const Tensor& v, double epsilon = 1e-12);

// Contrastive loss for one anchor: -log( exp(sim(z_i,z_r)/tau) / D ) where D
// sums exp(sim(z_i, z_neg)/tau) over negatives, plus the positive term unless
// literal_denominator is set. Differentiable through all projections.
Tensor kacl_loss(const Tensor& z_i, const Tensor& z_r, const std::vector<Tensor>& negatives,
                 const LossConfig& cfg);

// Multi-label focal loss, mean over (sample, class) cells. probs in (0,1)
// (epsilon-clamped), labels flat 0/1 of the same length.
Tensor focal_loss(const Tensor& probs, const std::vector<int>& labels, const LossConfig& cfg);

// Scalar convenience form.
double focal_loss_value(double p, int y, const LossConfig& cfg);

// lambda * L_cl + (1 - lambda) * L_fl; aborts on non-finite components.
Tensor total_loss(const Tensor& l_cl, const Tensor& l_fl, const LossConfig& cfg);
double total_loss_value(double l_cl, double l_fl, const LossConfig& cfg);

}  // namespace kacl
