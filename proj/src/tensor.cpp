#include "kacl/tensor.hpp"

#include <atomic>
#include <sstream>

#include "kacl/kernels.hpp"

namespace kacl {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
thread_local Graph* g_active = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<TensorData>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_numel(t.impl_->shape), 0.0);
  t.impl_->requires_grad = requires_grad;
  t.impl_->id = g_next_id.fetch_add(1);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ConfigError("tensor shape " + shape_str(shape) + " does not match data length " +
                      std::to_string(data.size()));
  Tensor t;
  t.impl_ = std::make_shared<TensorData>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  t.impl_->id = g_next_id.fetch_add(1);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from(Shape{}, {v}, requires_grad);
}

double Tensor::value() const {
  if (size() != 1) throw UsageError("value() requires a scalar tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw UsageError("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::clone() const {
  return Tensor::from(impl_->shape, impl_->data, impl_->requires_grad);
}

void Graph::clear() {
  nodes_.clear();
  grads_.clear();
}

const std::vector<double>* Graph::grad_of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double>& Graph::grad_accum(const Tensor& t) {
  auto& g = grads_[t.id()];
  if (g.empty()) g.assign(t.size(), 0.0);
  return g;
}

void Graph::backward(const Tensor& loss, bool write_grads) {
  if (loss.size() != 1) throw UsageError("backward requires a scalar loss");
  grads_.clear();
  grad_accum(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (grads_.find(it->output.id()) == grads_.end()) continue;  // not on the loss path
    it->backward(*this);
  }
  if (!write_grads) return;
  for (const auto& node : nodes_) {
    for (const auto& in : node.inputs) {
      if (!in.requires_grad()) continue;
      auto it = grads_.find(in.id());
      if (it == grads_.end()) continue;
      Tensor t = in;
      kernels::add(t.grad().data(), it->second.data(), t.grad().data(), t.size());
      grads_.erase(it);  // a tensor may feed several nodes; write once
    }
  }
}

void Graph::replay_forward() {
  for (auto& node : nodes_)
    if (node.replay) node.replay();
}

Graph* active_graph() { return g_active; }

Recording::Recording(Graph& g) : prev_(g_active) { g_active = &g; }
Recording::~Recording() { g_active = prev_; }

}  // namespace kacl
