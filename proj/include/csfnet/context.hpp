#pragma once

#include <cstdint>
#include <string>

#include "csfnet/layers.hpp"

namespace csfnet {

struct ContextConfig {
  std::int64_t in_channels = 1024;
  std::int64_t pool_w = 8, pool_h = 4;

  void validate() const;
};

/// Pool -> 1x1 reduce -> parallel 1x4 / 4x1 branches -> resize back -> sum
/// -> 3x3 projection to in_channels/32.
class ContextModule {
 public:
  ContextModule() = default;
  ContextModule(ModuleContext& ctx, const std::string& name, const ContextConfig& cfg);
  Tensor forward(const Tensor& x, Mode mode) const;
  std::int64_t out_channels() const { return cfg_.in_channels / 32; }

 private:
  ContextConfig cfg_;
  ConvBnRelu reduce_, branch_w_, branch_h_;
  Conv2d project_;
};

}  // namespace csfnet
