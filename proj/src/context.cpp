#include "csfnet/context.hpp"

namespace csfnet {

void ContextConfig::validate() const {
  if (in_channels < 32 || in_channels % 32 != 0)
    throw std::invalid_argument("context: in_channels must be a positive multiple of 32, got " +
                                std::to_string(in_channels));
  if (pool_w < 1 || pool_h < 1) throw std::invalid_argument("context: pool size must be positive");
}

ContextModule::ContextModule(ModuleContext& ctx, const std::string& name, const ContextConfig& cfg)
    : cfg_(cfg) {
  cfg.validate();
  const std::int64_t c4 = cfg.in_channels / 4, c16 = cfg.in_channels / 16;
  reduce_ = ConvBnRelu(ctx, name + ".reduce", ConvSpec::square(cfg.in_channels, c4, 1));

  ConvSpec w;
  w.in_channels = c4;
  w.out_channels = c16;
  w.kernel_h = 1;
  w.kernel_w = 4;
  w.padding = {0, 0, 1, 2};
  branch_w_ = ConvBnRelu(ctx, name + ".branch_w", w);

  ConvSpec h = w;
  h.kernel_h = 4;
  h.kernel_w = 1;
  h.padding = {1, 2, 0, 0};
  branch_h_ = ConvBnRelu(ctx, name + ".branch_h", h);

  project_ = Conv2d(ctx, name + ".project", ConvSpec::square(c16, cfg.in_channels / 32, 3, 1, true));
}

Tensor ContextModule::forward(const Tensor& x, Mode mode) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
    throw ShapeError("context: expected " + std::to_string(cfg_.in_channels) +
                     " input channels, got shape " + shape_str(x.shape()));
  const std::int64_t h = x.dim(2), w = x.dim(3);
  Tensor pooled = ops::adaptive_avg_pool2d(x, cfg_.pool_h, cfg_.pool_w);
  Tensor r = reduce_.forward(pooled, mode);
  Tensor a = ops::bilinear_resize(branch_w_.forward(r, mode), h, w);
  Tensor b = ops::bilinear_resize(branch_h_.forward(r, mode), h, w);
  return project_.forward(ops::add(a, b));
}

}  // namespace csfnet
