#include "csfnet/csafm.hpp"

#include <algorithm>
#include <cmath>

namespace csfnet {

std::int64_t CsafmConfig::default_hidden(std::int64_t channels) {
  return std::max<std::int64_t>(channels / 2, 8);
}

CsafmConfig CsafmConfig::make(std::int64_t channels, std::int64_t pool_w, std::int64_t pool_h) {
  return {channels, pool_w, pool_h, default_hidden(channels)};
}

void CsafmConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("csafm: channels must be positive");
  if (pool_w < 1 || pool_h < 1) throw std::invalid_argument("csafm: pool size must be positive");
  if (hidden_channels < 1) throw std::invalid_argument("csafm: hidden_channels must be positive");
}

namespace {
constexpr double kMinNorm = 1e-8;
}

Tensor pooled_cosine(const Tensor& px, const Tensor& py) {
  if (px.rank() != 4 || px.shape() != py.shape())
    throw ShapeError("channel_cosine_similarity: inputs must share an NCHW shape, got " +
                     shape_str(px.shape()) + " and " + shape_str(py.shape()));
  const auto n = px.dim(0), c = px.dim(1), len = px.dim(2) * px.dim(3);
  count_flops("cosine", 6 * px.numel());
  if (any_meta({&px, &py})) return Tensor::meta({n, c});

  Tensor out = Tensor::zeros({n, c});
  const float* x = px.data().data();
  const float* y = py.data().data();
  float* s = out.data().data();
  // Per row: norms and the unclamped cosine, kept for the backward pass.
  std::vector<double> nx(static_cast<std::size_t>(n * c)), ny(nx.size()), cos(nx.size());
  for (std::int64_t r = 0; r < n * c; ++r) {
    const float* xr = x + r * len;
    const float* yr = y + r * len;
    double dot = 0.0, xx = 0.0, yy = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      dot += static_cast<double>(xr[i]) * yr[i];
      xx += static_cast<double>(xr[i]) * xr[i];
      yy += static_cast<double>(yr[i]) * yr[i];
    }
    nx[r] = std::sqrt(xx);
    ny[r] = std::sqrt(yy);
    if (nx[r] < kMinNorm || ny[r] < kMinNorm) continue;
    cos[r] = dot / (nx[r] * ny[r]);
    s[r] = static_cast<float>(std::clamp(cos[r], -1.0, 1.0));
  }

  if (needs_grad({&px, &py})) {
    attach_grad(out, "cosine", {px, py}, [px, py, nx, ny, cos, len](const TensorImpl& o) {
      const float* xv = px.impl()->data.data();
      const float* yv = py.impl()->data.data();
      float* gx = px.requires_grad() ? px.impl()->grad_buffer().data() : nullptr;
      float* gy = py.requires_grad() ? py.impl()->grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < nx.size(); ++r) {
        if (nx[r] < kMinNorm || ny[r] < kMinNorm) continue;
        const double g = o.grad[r];
        const double inv = 1.0 / (nx[r] * ny[r]);
        const float* xr = xv + r * len;
        const float* yr = yv + r * len;
        // d cos / dx = y / (|x||y|) - cos * x / |x|^2
        for (std::int64_t i = 0; i < len; ++i) {
          if (gx) gx[r * len + i] += static_cast<float>(g * (yr[i] * inv - cos[r] * xr[i] / (nx[r] * nx[r])));
          if (gy) gy[r * len + i] += static_cast<float>(g * (xr[i] * inv - cos[r] * yr[i] / (ny[r] * ny[r])));
        }
      }
    });
  }
  return out;
}

Tensor channel_cosine_similarity(const Tensor& fx, const Tensor& fy, std::int64_t pool_h,
                                 std::int64_t pool_w) {
  if (fx.rank() != 4 || fx.shape() != fy.shape())
    throw ShapeError("channel_cosine_similarity: inputs must share an NCHW shape, got " +
                     shape_str(fx.shape()) + " and " + shape_str(fy.shape()));
  return pooled_cosine(ops::adaptive_avg_pool2d(fx, pool_h, pool_w),
                       ops::adaptive_avg_pool2d(fy, pool_h, pool_w));
}

std::pair<Tensor, Tensor> rectify(const Tensor& fx, const Tensor& fy, const Tensor& w) {
  if (fx.shape() != fy.shape())
    throw ShapeError("rectify: feature shapes differ: " + shape_str(fx.shape()) + " vs " +
                     shape_str(fy.shape()));
  Tensor rx = ops::add(fx, ops::mul(fy, w));
  Tensor ry = ops::add(fy, ops::mul(fx, ops::affine(w, -1.0f, 1.0f)));
  return {rx, ry};
}

Tensor fuse(const Tensor& fx, const Tensor& fy, const Tensor& w) {
  if (fx.shape() != fy.shape())
    throw ShapeError("fuse: feature shapes differ: " + shape_str(fx.shape()) + " vs " +
                     shape_str(fy.shape()));
  return ops::add(ops::mul(fy, w), ops::mul(fx, ops::affine(w, -1.0f, 1.0f)));
}

Csafm::Csafm(ModuleContext& ctx, const std::string& name, const CsafmConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  ConvSpec c1;
  c1.in_channels = cfg.channels;
  c1.out_channels = cfg.hidden_channels;
  c1.bias = true;
  conv1_ = Conv2d(ctx, name + ".conv1", c1);
  bn_ = BatchNorm2d(ctx, name + ".bn", cfg.hidden_channels);
  ConvSpec c2 = c1;
  c2.in_channels = cfg.hidden_channels;
  c2.out_channels = cfg.channels;
  conv2_ = Conv2d(ctx, name + ".conv2", c2);
}

Tensor Csafm::weights(const Tensor& similarity, Mode mode) const {
  if (similarity.rank() != 2 || similarity.dim(1) != cfg_.channels)
    throw ShapeError("csafm: similarity must have shape (N," + std::to_string(cfg_.channels) +
                     "), got " + shape_str(similarity.shape()));
  Tensor s = ops::reshape(similarity, {similarity.dim(0), cfg_.channels, 1, 1});
  Tensor h = ops::relu(bn_.forward(conv1_.forward(s), mode));
  return ops::sigmoid(conv2_.forward(h));
}

CsafmOutput Csafm::forward(const Tensor& fx, const Tensor& fy, Mode mode, Outputs outputs) const {
  if (fx.rank() != 4 || fx.dim(1) != cfg_.channels)
    throw ShapeError("csafm: expected " + std::to_string(cfg_.channels) +
                     " input channels, got shape " + shape_str(fx.shape()));
  CsafmOutput out;
  out.weights = weights(channel_cosine_similarity(fx, fy, cfg_.pool_h, cfg_.pool_w), mode);
  if (outputs == Outputs::kRectifiedAndFused) {
    std::tie(out.rect_x, out.rect_y) = rectify(fx, fy, out.weights);
    out.fused = fuse(fx, fy, out.weights);
  } else {
    out.fused = fuse(fx, fy, out.weights);
  }
  return out;
}

}  // namespace csfnet
