#pragma once
// Differentiable layer operations. Every op validates shapes, computes its
// forward result, and (when a Recording scope is open) records a tape node
// with analytic backward plus a replay closure.

#include <functional>
#include <string>
#include <vector>

#include "kacl/tensor.hpp"

namespace kacl::ops {

// Records a node on the active graph, if any. Used by ops and by the
// dedicated loss nodes.
void record_op(std::string name, std::vector<Tensor> inputs, Tensor output,
               std::function<void(Graph&)> backward, std::function<void()> replay);

Tensor add(const Tensor& a, const Tensor& b);         // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise, same shape
Tensor sum(const Tensor& a);                          // -> scalar
Tensor reshape(const Tensor& a, Shape new_shape);     // copy with same numel

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// y = W x + b; x: [in], W: [out,in], b: [out]
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

// input [N,C,H,W], kernel [F,C,kH,kW], bias [F]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

// window k, stride s, no padding; gradient routes to the argmax element,
// ties broken by first element in row-major scan order
Tensor max_pool2d(const Tensor& x, int k, int stride);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// mean over all elements -> scalar
Tensor batch_mean(const Tensor& x);

// mean of a list of scalar tensors -> scalar
Tensor mean_of(const std::vector<Tensor>& scalars);

// single element by flat index -> scalar
Tensor pick(const Tensor& x, std::size_t index);

}  // namespace kacl::ops
