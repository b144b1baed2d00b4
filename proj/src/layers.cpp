#include "csfnet/layers.hpp"

#include <cmath>

namespace csfnet {

Tensor ModuleContext::parameter(const std::string& name, const Shape& shape, float value) {
  return store.add_parameter(name, meta ? Tensor::meta(shape) : Tensor::full(shape, value));
}

Tensor ModuleContext::kaiming_parameter(const std::string& name, const Shape& shape) {
  if (meta) return store.add_parameter(name, Tensor::meta(shape));
  const std::int64_t fan_out = shape[0] * (shape.size() == 4 ? shape[2] * shape[3] : 1);
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_out)));
  Tensor t = Tensor::zeros(shape);
  for (float& v : t.data()) v = dist(rng);
  return store.add_parameter(name, std::move(t));
}

Tensor ModuleContext::buffer(const std::string& name, const Shape& shape, float value) {
  return store.add_buffer(name, meta ? Tensor::meta(shape) : Tensor::full(shape, value));
}

ConvSpec ConvSpec::square(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t s,
                          bool bias) {
  ConvSpec spec;
  spec.in_channels = cin;
  spec.out_channels = cout;
  spec.kernel_h = spec.kernel_w = k;
  spec.stride = {s, s};
  spec.padding = ops::Padding2d::uniform(k / 2);
  spec.bias = bias;
  return spec;
}

Conv2d::Conv2d(ModuleContext& ctx, const std::string& name, const ConvSpec& spec) : spec_(spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.kernel_h < 1 || spec.kernel_w < 1)
    throw ShapeError(name + ": conv channels and kernel must be positive");
  weight_ = ctx.kaiming_parameter(name + ".weight",
                                  {spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
  if (spec.bias) bias_ = ctx.parameter(name + ".bias", {spec.out_channels}, 0.0f);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return ops::conv2d(x, weight_, bias_, spec_.stride, spec_.padding);
}

BatchNorm2d::BatchNorm2d(ModuleContext& ctx, const std::string& name, std::int64_t channels) {
  gamma_ = ctx.parameter(name + ".weight", {channels}, 1.0f);
  beta_ = ctx.parameter(name + ".bias", {channels}, 0.0f);
  running_mean_ = ctx.buffer(name + ".running_mean", {channels}, 0.0f);
  running_var_ = ctx.buffer(name + ".running_var", {channels}, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) const {
  return ops::batchnorm2d(x, gamma_, beta_, running_mean_, running_var_, mode);
}

ConvBnRelu::ConvBnRelu(ModuleContext& ctx, const std::string& name, const ConvSpec& spec)
    : conv_(ctx, name + ".conv", [&] {
        ConvSpec s = spec;
        s.bias = false;
        return s;
      }()),
      bn_(ctx, name + ".bn", spec.out_channels) {}

Tensor ConvBnRelu::forward(const Tensor& x, Mode mode) const {
  return ops::relu(bn_.forward(conv_.forward(x), mode));
}

}  // namespace csfnet
