#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csfnet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any contract violation inside the tensor engine (bad shapes,
/// bad arguments). The message names the offending dimension or argument.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

/// Backward closure of a recorded op. It reads the output's value and
/// gradient and accumulates into the gradients of its inputs.
struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  // Shape-only tensor: carries no data, used for analytic accounting.
  bool meta = false;
  bool requires_grad = false;
  std::vector<float> grad;
  std::shared_ptr<GradNode> grad_fn;

  /// Zero-initialised on first use.
  std::vector<float>& grad_buffer();
};

/// Dense float32 tensor handle, row-major, rank 1..4 (NCHW for rank 4).
///
/// Copies share storage, the same way a framework tensor handle does; use
/// clone() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, float value);
  static Tensor from_data(const Shape& shape, std::vector<float> values);
  static Tensor meta(const Shape& shape);

  bool defined() const { return impl_ != nullptr; }
  bool is_meta() const { return impl_->meta; }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const;
  std::int64_t numel() const { return shape_numel(impl_->shape); }

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;
  float at(std::int64_t flat) const { return data()[flat]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  std::span<float> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  /// Deep copy of the values; the copy is a leaf with no gradient history.
  Tensor clone() const;
  /// Same storage, cut from the autograd graph.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---- autograd plumbing ----

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// True when at least one input will need a gradient and recording is on.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool any_meta(std::initializer_list<const Tensor*> inputs);

/// Attaches a backward closure to `out`; the inputs are kept alive by the node.
void attach_grad(Tensor& out, std::string op, std::vector<Tensor> inputs,
                 std::function<void(const TensorImpl& out)> backward);

enum class GraphMode {
  kFree,    // release closures and intermediate grads after the pass
  kRetain,  // keep the graph so backward can be called again
};

/// Reverse-mode pass from a one-element loss. Gradients are added into the
/// existing grad buffers of every reachable tensor that requires grad; the
/// caller zeroes them between steps.
void backward(const Tensor& loss, GraphMode mode = GraphMode::kFree);

// ---- analytic operation counting ----

struct FlopCounter {
  std::int64_t total = 0;
  std::vector<std::pair<std::string, std::int64_t>> by_op;
  void add(const std::string& op, std::int64_t flops);
};

/// Routes op FLOP counts into `counter` for its lifetime (thread-local).
class FlopScope {
 public:
  explicit FlopScope(FlopCounter& counter);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* previous_;
};

void count_flops(const char* op, std::int64_t flops);

}  // namespace csfnet
