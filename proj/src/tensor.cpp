#include "csfnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace csfnet {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::vector<float>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
  return grad;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] <= 0)
      throw ShapeError("tensor dim " + std::to_string(i) + " must be positive, got " +
                       std::to_string(shape[i]));
}

thread_local bool g_grad_enabled = true;
thread_local FlopCounter* g_flops = nullptr;

}  // namespace

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0f); }

Tensor Tensor::full(const Shape& shape, float value) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> values) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::meta(const Shape& shape) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->meta = true;
  return Tensor(std::move(impl));
}

std::int64_t Tensor::dim(int i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank())
    throw ShapeError("dim index " + std::to_string(i) + " out of range for rank " +
                     std::to_string(rank()));
  return impl_->shape[static_cast<std::size_t>(i)];
}

std::span<float> Tensor::data() {
  if (impl_->meta) throw ShapeError("meta tensor has no data");
  return impl_->data;
}

std::span<const float> Tensor::data() const {
  if (impl_->meta) throw ShapeError("meta tensor has no data");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_str(shape()));
  return data()[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->meta = impl_->meta;
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->meta = impl_->meta;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

bool any_meta(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->is_meta()) return true;
  return false;
}

void attach_grad(Tensor& out, std::string op, std::vector<Tensor> inputs,
                 std::function<void(const TensorImpl& out)> backward_fn) {
  auto node = std::make_shared<GradNode>();
  node->op = std::move(op);
  for (auto& t : inputs)
    if (t.defined() && t.requires_grad()) node->inputs.push_back(t.impl());
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
}

void backward(const Tensor& loss, GraphMode mode) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward needs a one-element loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  auto& seed = loss.impl()->grad_buffer();
  seed[0] += 1.0f;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn || node->grad.empty()) continue;
    node->grad_fn->backward(*node);
  }

  // Intermediate gradients are scratch space for this pass only, so a
  // retained graph can be walked again without double counting.
  for (TensorImpl* node : order) {
    if (!node->grad_fn) continue;
    node->grad.clear();
    node->grad.shrink_to_fit();
    if (mode == GraphMode::kFree) node->grad_fn.reset();
  }
}

void FlopCounter::add(const std::string& op, std::int64_t flops) {
  total += flops;
  for (auto& [name, n] : by_op) {
    if (name == op) {
      n += flops;
      return;
    }
  }
  by_op.emplace_back(op, flops);
}

FlopScope::FlopScope(FlopCounter& counter) : previous_(g_flops) { g_flops = &counter; }
FlopScope::~FlopScope() { g_flops = previous_; }

void count_flops(const char* op, std::int64_t flops) {
  if (g_flops) g_flops->add(op, flops);
}

}  // namespace csfnet
