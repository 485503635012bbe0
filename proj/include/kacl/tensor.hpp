#pragma once
// Minimal reverse-mode autodiff: value-semantic tensor handles plus an
// explicit tape (Graph). Ops record onto the thread-local active graph when a
// Recording scope is open; with no scope open they are plain forward math.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kacl/errors.hpp"

namespace kacl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward populates it
  std::uint64_t id = 0;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool valid() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::uint64_t id() const { return impl_->id; }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& buffer() { return impl_->data; }
  const std::vector<double>& buffer() const { return impl_->data; }

  double operator[](std::size_t i) const { return impl_->data[i]; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  // Scalar tensor value.
  double value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<double>& grad();             // allocates zeros on first use
  const std::vector<double>& grad() const; // throws if absent
  void zero_grad();

  Tensor clone() const;  // deep copy, fresh id, no grad

  bool same_buffer(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  std::shared_ptr<TensorData> impl_;
};

class Graph;

// One recorded operation. `backward` reads the output's gradient from the
// sink and accumulates into the inputs' entries; `replay` recomputes the
// output buffer from the inputs' current buffers.
struct GraphNode {
  std::string op;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void(Graph&)> backward;
  std::function<void()> replay;
};

class Graph {
 public:
  void record(GraphNode node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const GraphNode& node(std::size_t i) const { return nodes_[i]; }
  void clear();

  // Reverse sweep from a scalar loss. When write_grads is true, accumulated
  // gradients of requires_grad tensors are added into Tensor::grad; when
  // false they stay local to this call (isolated tape, used by Grad-CAM).
  void backward(const Tensor& loss, bool write_grads = true);

  // Re-run every recorded forward in order (validates tape correctness).
  void replay_forward();

  // Gradient access during/after backward. Valid until the next backward.
  const std::vector<double>* grad_of(const Tensor& t) const;
  std::vector<double>& grad_accum(const Tensor& t);

 private:
  std::vector<GraphNode> nodes_;
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
};

Graph* active_graph();

// RAII scope that makes `g` the active recording target.
class Recording {
 public:
  explicit Recording(Graph& g);
  ~Recording();
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Graph* prev_;
};

}  // namespace kacl
