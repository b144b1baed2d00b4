#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "csfnet/ops.hpp"
#include "csfnet/parameter_store.hpp"

namespace csfnet {

/// Where a module registers its tensors and how it initialises them.
///
/// In meta mode every tensor is shape-only; the resulting network can run
/// forward on meta inputs for analytic accounting but holds no weights.
struct ModuleContext {
  ParameterStore& store;
  std::mt19937_64& rng;
  bool meta = false;

  Tensor parameter(const std::string& name, const Shape& shape, float value);
  /// Kaiming normal, fan-out mode: std = sqrt(2 / (out_channels * kh * kw)).
  Tensor kaiming_parameter(const std::string& name, const Shape& shape);
  Tensor buffer(const std::string& name, const Shape& shape, float value);
};

struct ConvSpec {
  std::int64_t in_channels = 1, out_channels = 1;
  std::int64_t kernel_h = 1, kernel_w = 1;
  ops::Stride2d stride{};
  ops::Padding2d padding{};
  bool bias = false;

  /// Square kernel k, stride s, "same" padding k/2.
  static ConvSpec square(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t s = 1,
                         bool bias = false);
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ModuleContext& ctx, const std::string& name, const ConvSpec& spec);
  Tensor forward(const Tensor& x) const;
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Tensor weight_, bias_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ModuleContext& ctx, const std::string& name, std::int64_t channels);
  Tensor forward(const Tensor& x, Mode mode) const;

 private:
  Tensor gamma_, beta_;
  // Handles share storage with the store, so the running statistics can be
  // updated from a const forward.
  mutable Tensor running_mean_, running_var_;
};

/// conv -> BN -> ReLU, the network's basic unit. The conv has no bias.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ModuleContext& ctx, const std::string& name, const ConvSpec& spec);
  Tensor forward(const Tensor& x, Mode mode) const;
  const ConvSpec& spec() const { return conv_.spec(); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace csfnet
