#include "csfnet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "csfnet/kernels.hpp"

namespace csfnet::ops {
namespace {

void require_rank4(const Tensor& t, const char* op, const char* what) {
  if (!t.defined() || t.rank() != 4)
    throw ShapeError(std::string(op) + ": " + what + " must be rank-4 NCHW, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

Tensor make_output(const Shape& shape, bool meta) {
  return meta ? Tensor::meta(shape) : Tensor::zeros(shape);
}

// Per-channel broadcast layout of `b` against an NCHW `a`.
enum class Broadcast { kNone, kChannel, kSampleChannel };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.rank() == 4) {
    const auto n = a.dim(0), c = a.dim(1);
    if (b.rank() == 1 && b.dim(0) == c) return Broadcast::kChannel;
    if (b.rank() == 4 && b.dim(2) == 1 && b.dim(3) == 1 && b.dim(1) == c) {
      if (b.dim(0) == 1) return Broadcast::kChannel;
      if (b.dim(0) == n) return Broadcast::kSampleChannel;
    }
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " against " +
                   shape_str(a.shape()));
}

// Index into b for element (n, c) of a broadcast pair.
inline std::int64_t bcast_index(Broadcast kind, std::int64_t n, std::int64_t c, std::int64_t channels) {
  return kind == Broadcast::kSampleChannel ? n * channels + c : c;
}

struct PoolWindow {
  std::int64_t begin, end;
};

inline PoolWindow adaptive_window(std::int64_t i, std::int64_t in, std::int64_t out) {
  const std::int64_t begin = (i * in) / out;
  const std::int64_t end = ((i + 1) * in + out - 1) / out;
  return {begin, end};
}

struct BilinearTap {
  std::int64_t i0, i1;
  float w0, w1;
};

std::vector<BilinearTap> bilinear_taps(std::int64_t in, std::int64_t out, bool align_corners) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(out));
  for (std::int64_t d = 0; d < out; ++d) {
    double src;
    if (align_corners) {
      src = out > 1 ? static_cast<double>(d) * static_cast<double>(in - 1) / static_cast<double>(out - 1)
                    : 0.0;
    } else {
      const double scale = static_cast<double>(in) / static_cast<double>(out);
      src = std::max(0.0, (static_cast<double>(d) + 0.5) * scale - 0.5);
    }
    auto i0 = static_cast<std::int64_t>(src);
    i0 = std::min(i0, in - 1);
    const std::int64_t i1 = i0 < in - 1 ? i0 + 1 : i0;
    const auto frac = static_cast<float>(src - static_cast<double>(i0));
    taps[static_cast<std::size_t>(d)] = {i0, i1, 1.0f - frac, frac};
  }
  return taps;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Stride2d stride,
              Padding2d padding) {
  require_rank4(input, "conv2d", "input");
  require_rank4(weight, "conv2d", "weight");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: input channel dim 1 is " + std::to_string(input.dim(1)) +
                     " but weight expects Cin=" + std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
    throw ShapeError("conv2d: bias must have shape (" + std::to_string(weight.dim(0)) + "), got " +
                     shape_str(bias.shape()));
  if (stride.h < 1 || stride.w < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding.top < 0 || padding.bottom < 0 || padding.left < 0 || padding.right < 0)
    throw ShapeError("conv2d: padding must be non-negative");

  ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride_h = stride.h;
  g.stride_w = stride.w;
  g.pad_top = padding.top;
  g.pad_bottom = padding.bottom;
  g.pad_left = padding.left;
  g.pad_right = padding.right;
  if (g.in_h + g.pad_top + g.pad_bottom < g.kernel_h)
    throw ShapeError("conv2d: padded height (dim 2) " + std::to_string(g.in_h + g.pad_top + g.pad_bottom) +
                     " smaller than kernel height " + std::to_string(g.kernel_h));
  if (g.in_w + g.pad_left + g.pad_right < g.kernel_w)
    throw ShapeError("conv2d: padded width (dim 3) " + std::to_string(g.in_w + g.pad_left + g.pad_right) +
                     " smaller than kernel width " + std::to_string(g.kernel_w));

  const Shape out_shape{g.batch, g.out_channels, g.out_h(), g.out_w()};
  count_flops("conv2d", 2 * g.out_channels * g.patch() * g.out_h() * g.out_w() * g.batch);
  const bool meta = any_meta({&input, &weight, &bias});
  Tensor out = make_output(out_shape, meta);
  if (meta) return out;

  kernels::conv2d_forward(g, input.data().data(), weight.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data().data());

  if (needs_grad({&input, &weight, &bias})) {
    attach_grad(out, "conv2d", {input, weight, bias}, [g, input, weight, bias](const TensorImpl& o) {
      float* gi = input.requires_grad() ? input.impl()->grad_buffer().data() : nullptr;
      float* gw = weight.requires_grad() ? weight.impl()->grad_buffer().data() : nullptr;
      float* gb = bias.defined() && bias.requires_grad() ? bias.impl()->grad_buffer().data() : nullptr;
      kernels::conv2d_backward(g, input.impl()->data.data(), weight.impl()->data.data(),
                               o.grad.data(), gi, gw, gb);
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, Mode mode, float momentum,
                   float eps) {
  require_rank4(input, "batchnorm2d", "input");
  const auto n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != c)
      throw ShapeError("batchnorm2d: channel dim 1 of input is " + std::to_string(c) +
                       " but a parameter has shape " + shape_str(t->shape()));
  const std::int64_t count = n * hw;
  if (mode == Mode::kTrain && count == 0)
    throw ShapeError("batchnorm2d: zero batch*spatial extent in train mode");

  count_flops("batchnorm2d", 2 * input.numel());
  const bool meta = any_meta({&input, &gamma, &beta});
  Tensor out = make_output(input.shape(), meta);
  if (meta) return out;

  const float* x = input.data().data();
  float* y = out.data().data();
  const float* gm = gamma.data().data();
  const float* bt = beta.data().data();
  std::vector<double> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));

  if (mode == Mode::kTrain) {
    float* rm = running_mean.data().data();
    float* rv = running_var.data().data();
#pragma omp parallel for schedule(static)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const float* p = x + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const float* p = x + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + eps);
      rm[ch] = (1.0f - momentum) * rm[ch] + momentum * static_cast<float>(mu);
      rv[ch] = (1.0f - momentum) * rv[ch] + momentum * static_cast<float>(unbiased);
    }
  } else {
    const float* rm = running_mean.data().data();
    const float* rv = running_var.data().data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = 1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps);
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float* p = x + (b * c + ch) * hw;
      float* q = y + (b * c + ch) * hw;
      const double mu = mean[ch], scale = invstd[ch] * gm[ch], be = bt[ch];
      for (std::int64_t i = 0; i < hw; ++i) q[i] = static_cast<float>((p[i] - mu) * scale + be);
    }

  if (needs_grad({&input, &gamma, &beta})) {
    const bool train = mode == Mode::kTrain;
    attach_grad(out, "batchnorm2d", {input, gamma, beta},
                [input, gamma, beta, mean, invstd, n, c, hw, count, train](const TensorImpl& o) {
                  const float* xv = input.impl()->data.data();
                  const float* gy = o.grad.data();
                  const float* gmv = gamma.impl()->data.data();
                  float* gx = input.requires_grad() ? input.impl()->grad_buffer().data() : nullptr;
                  float* gg = gamma.requires_grad() ? gamma.impl()->grad_buffer().data() : nullptr;
                  float* gb = beta.requires_grad() ? beta.impl()->grad_buffer().data() : nullptr;
#pragma omp parallel for schedule(static)
                  for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double mu = mean[ch], is = invstd[ch];
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::int64_t b = 0; b < n; ++b) {
                      const float* p = xv + (b * c + ch) * hw;
                      const float* d = gy + (b * c + ch) * hw;
                      for (std::int64_t i = 0; i < hw; ++i) {
                        sum_dy += d[i];
                        sum_dy_xhat += static_cast<double>(d[i]) * ((p[i] - mu) * is);
                      }
                    }
                    if (gg) gg[ch] += static_cast<float>(sum_dy_xhat);
                    if (gb) gb[ch] += static_cast<float>(sum_dy);
                    if (!gx) continue;
                    const double g = gmv[ch];
                    if (!train) {
                      for (std::int64_t b = 0; b < n; ++b) {
                        const float* d = gy + (b * c + ch) * hw;
                        float* q = gx + (b * c + ch) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) q[i] += static_cast<float>(d[i] * g * is);
                      }
                      continue;
                    }
                    const auto m = static_cast<double>(count);
                    const double mean_dy = sum_dy / m;
                    const double mean_dy_xhat = sum_dy_xhat / m;
                    for (std::int64_t b = 0; b < n; ++b) {
                      const float* p = xv + (b * c + ch) * hw;
                      const float* d = gy + (b * c + ch) * hw;
                      float* q = gx + (b * c + ch) * hw;
                      for (std::int64_t i = 0; i < hw; ++i) {
                        const double xhat = (p[i] - mu) * is;
                        q[i] += static_cast<float>(g * is * (d[i] - mean_dy - xhat * mean_dy_xhat));
                      }
                    }
                  }
                });
  }
  return out;
}

Tensor relu(const Tensor& input) {
  count_flops("relu", input.numel());
  if (input.is_meta()) return Tensor::meta(input.shape());
  Tensor out = Tensor::zeros(input.shape());
  const float* x = input.data().data();
  float* y = out.data().data();
  const std::int64_t total = input.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < total; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (needs_grad({&input})) {
    attach_grad(out, "relu", {input}, [input](const TensorImpl& o) {
      float* gx = input.impl()->grad_buffer().data();
      const float* xv = input.impl()->data.data();
      const std::int64_t total = static_cast<std::int64_t>(o.grad.size());
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < total; ++i)
        if (xv[i] > 0.0f) gx[i] += o.grad[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& input) {
  count_flops("sigmoid", input.numel());
  if (input.is_meta()) return Tensor::meta(input.shape());
  Tensor out = Tensor::zeros(input.shape());
  const float* x = input.data().data();
  float* y = out.data().data();
  const std::int64_t total = input.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < total; ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
  if (needs_grad({&input})) {
    attach_grad(out, "sigmoid", {input}, [input](const TensorImpl& o) {
      float* gx = input.impl()->grad_buffer().data();
      const std::int64_t total = static_cast<std::int64_t>(o.grad.size());
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < total; ++i) {
        const float s = o.data[static_cast<std::size_t>(i)];
        gx[i] += o.grad[static_cast<std::size_t>(i)] * s * (1.0f - s);
      }
    });
  }
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  require_rank4(input, "adaptive_avg_pool2d", "input");
  if (out_h <= 0 || out_w <= 0)
    throw ShapeError("adaptive_avg_pool2d: target size must be positive, got " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h > h || out_w > w)
    throw ShapeError("adaptive_avg_pool2d: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " exceeds input " + std::to_string(h) + "x" +
                     std::to_string(w));
  const Shape out_shape{n, c, out_h, out_w};
  // Each input cell is read at least once; overlapping windows read more.
  std::int64_t reads = 0;
  for (std::int64_t i = 0; i < out_h; ++i) {
    const auto wy = adaptive_window(i, h, out_h);
    for (std::int64_t j = 0; j < out_w; ++j) {
      const auto wx = adaptive_window(j, w, out_w);
      reads += (wy.end - wy.begin) * (wx.end - wx.begin);
    }
  }
  count_flops("adaptive_avg_pool2d", reads * n * c);
  if (input.is_meta()) return Tensor::meta(out_shape);

  Tensor out = Tensor::zeros(out_shape);
  if (out_h == h && out_w == w) {
    std::copy(input.data().begin(), input.data().end(), out.data().begin());
  } else {
    const float* x = input.data().data();
    float* y = out.data().data();
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const float* p = x + plane * h * w;
      float* q = y + plane * out_h * out_w;
      for (std::int64_t i = 0; i < out_h; ++i) {
        const auto wy = adaptive_window(i, h, out_h);
        for (std::int64_t j = 0; j < out_w; ++j) {
          const auto wx = adaptive_window(j, w, out_w);
          float acc = 0.0f;
          for (std::int64_t yy = wy.begin; yy < wy.end; ++yy)
            for (std::int64_t xx = wx.begin; xx < wx.end; ++xx) acc += p[yy * w + xx];
          q[i * out_w + j] = acc / static_cast<float>((wy.end - wy.begin) * (wx.end - wx.begin));
        }
      }
    }
  }
  if (needs_grad({&input})) {
    attach_grad(out, "adaptive_avg_pool2d", {input}, [input, n, c, h, w, out_h, out_w](const TensorImpl& o) {
      float* gx = input.impl()->grad_buffer().data();
      const float* gy = o.grad.data();
#pragma omp parallel for schedule(static)
      for (std::int64_t plane = 0; plane < n * c; ++plane) {
        float* p = gx + plane * h * w;
        const float* q = gy + plane * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
          const auto wy = adaptive_window(i, h, out_h);
          for (std::int64_t j = 0; j < out_w; ++j) {
            const auto wx = adaptive_window(j, w, out_w);
            const float share =
                q[i * out_w + j] / static_cast<float>((wy.end - wy.begin) * (wx.end - wx.begin));
            for (std::int64_t yy = wy.begin; yy < wy.end; ++yy)
              for (std::int64_t xx = wx.begin; xx < wx.end; ++xx) p[yy * w + xx] += share;
          }
        }
      }
    });
  }
  return out;
}

Tensor avg_pool2d(const Tensor& input, std::int64_t kernel, std::int64_t stride,
                  std::int64_t padding) {
  require_rank4(input, "avg_pool2d", "input");
  if (kernel < 1 || stride < 1 || padding < 0 || padding * 2 > kernel)
    throw ShapeError("avg_pool2d: invalid kernel/stride/padding");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel)
    throw ShapeError("avg_pool2d: padded input smaller than kernel");
  const std::int64_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kernel) / stride + 1;
  const Shape out_shape{n, c, oh, ow};
  count_flops("avg_pool2d", kernel * kernel * n * c * oh * ow);
  if (input.is_meta()) return Tensor::meta(out_shape);

  Tensor out = Tensor::zeros(out_shape);
  const float* x = input.data().data();
  float* y = out.data().data();
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
#pragma omp parallel for schedule(static)
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* p = x + plane * h * w;
    float* q = y + plane * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        float acc = 0.0f;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const std::int64_t yy = i * stride - padding + ky;
          if (yy < 0 || yy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t xx = j * stride - padding + kx;
            if (xx >= 0 && xx < w) acc += p[yy * w + xx];
          }
        }
        q[i * ow + j] = acc * inv;
      }
  }
  if (needs_grad({&input})) {
    attach_grad(out, "avg_pool2d", {input},
                [input, n, c, h, w, oh, ow, kernel, stride, padding, inv](const TensorImpl& o) {
                  float* gx = input.impl()->grad_buffer().data();
                  const float* gy = o.grad.data();
#pragma omp parallel for schedule(static)
                  for (std::int64_t plane = 0; plane < n * c; ++plane) {
                    float* p = gx + plane * h * w;
                    const float* q = gy + plane * oh * ow;
                    for (std::int64_t i = 0; i < oh; ++i)
                      for (std::int64_t j = 0; j < ow; ++j) {
                        const float share = q[i * ow + j] * inv;
                        for (std::int64_t ky = 0; ky < kernel; ++ky) {
                          const std::int64_t yy = i * stride - padding + ky;
                          if (yy < 0 || yy >= h) continue;
                          for (std::int64_t kx = 0; kx < kernel; ++kx) {
                            const std::int64_t xx = j * stride - padding + kx;
                            if (xx >= 0 && xx < w) p[yy * w + xx] += share;
                          }
                        }
                      }
                  }
                });
  }
  return out;
}

Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w,
                       bool align_corners) {
  require_rank4(input, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1)
    throw ShapeError("bilinear_resize: output size must be >= 1");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Shape out_shape{n, c, out_h, out_w};
  count_flops("bilinear_resize", 8 * n * c * out_h * out_w);
  if (input.is_meta()) return Tensor::meta(out_shape);

  Tensor out = Tensor::zeros(out_shape);
  const bool identity = out_h == h && out_w == w;
  const auto ty = bilinear_taps(h, out_h, align_corners);
  const auto tx = bilinear_taps(w, out_w, align_corners);
  if (identity) {
    std::copy(input.data().begin(), input.data().end(), out.data().begin());
  } else {
    const float* x = input.data().data();
    float* y = out.data().data();
#pragma omp parallel for schedule(static)
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const float* p = x + plane * h * w;
      float* q = y + plane * out_h * out_w;
      for (std::int64_t i = 0; i < out_h; ++i) {
        const auto& a = ty[static_cast<std::size_t>(i)];
        const float* r0 = p + a.i0 * w;
        const float* r1 = p + a.i1 * w;
        for (std::int64_t j = 0; j < out_w; ++j) {
          const auto& b = tx[static_cast<std::size_t>(j)];
          q[i * out_w + j] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                             a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        }
      }
    }
  }
  if (needs_grad({&input})) {
    attach_grad(out, "bilinear_resize", {input},
                [input, n, c, h, w, out_h, out_w, ty, tx, identity](const TensorImpl& o) {
                  float* gx = input.impl()->grad_buffer().data();
                  const float* gy = o.grad.data();
                  if (identity) {
                    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += gy[i];
                    return;
                  }
#pragma omp parallel for schedule(static)
                  for (std::int64_t plane = 0; plane < n * c; ++plane) {
                    float* p = gx + plane * h * w;
                    const float* q = gy + plane * out_h * out_w;
                    for (std::int64_t i = 0; i < out_h; ++i) {
                      const auto& a = ty[static_cast<std::size_t>(i)];
                      float* r0 = p + a.i0 * w;
                      float* r1 = p + a.i1 * w;
                      for (std::int64_t j = 0; j < out_w; ++j) {
                        const auto& b = tx[static_cast<std::size_t>(j)];
                        const float g = q[i * out_w + j];
                        r0[b.i0] += a.w0 * b.w0 * g;
                        r0[b.i1] += a.w0 * b.w1 * g;
                        r1[b.i0] += a.w1 * b.w0 * g;
                        r1[b.i1] += a.w1 * b.w1 * g;
                      }
                    }
                  }
                });
  }
  return out;
}

namespace {

template <bool kMul>
Tensor binary(const Tensor& a, const Tensor& b, const char* op) {
  const Broadcast kind = broadcast_kind(a, b, op);
  count_flops(op, a.numel());
  if (any_meta({&a, &b})) return Tensor::meta(a.shape());

  Tensor out = Tensor::zeros(a.shape());
  const float* av = a.data().data();
  const float* bv = b.data().data();
  float* y = out.data().data();
  if (kind == Broadcast::kNone) {
    const std::int64_t total = a.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) y[i] = kMul ? av[i] * bv[i] : av[i] + bv[i];
  } else {
    const auto n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const float bs = bv[bcast_index(kind, s, ch, c)];
        const float* p = av + (s * c + ch) * hw;
        float* q = y + (s * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) q[i] = kMul ? p[i] * bs : p[i] + bs;
      }
  }

  if (needs_grad({&a, &b})) {
    attach_grad(out, op, {a, b}, [a, b, kind](const TensorImpl& o) {
      const float* gy = o.grad.data();
      const float* av = a.impl()->data.data();
      const float* bv = b.impl()->data.data();
      float* ga = a.requires_grad() ? a.impl()->grad_buffer().data() : nullptr;
      float* gb = b.requires_grad() ? b.impl()->grad_buffer().data() : nullptr;
      if (kind == Broadcast::kNone) {
        const auto total = static_cast<std::int64_t>(o.grad.size());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) {
          if (ga) ga[i] += kMul ? gy[i] * bv[i] : gy[i];
          if (gb) gb[i] += kMul ? gy[i] * av[i] : gy[i];
        }
        return;
      }
      const auto n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
      if (ga) {
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t s = 0; s < n; ++s)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const float bs = kMul ? bv[bcast_index(kind, s, ch, c)] : 1.0f;
            const float* d = gy + (s * c + ch) * hw;
            float* q = ga + (s * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) q[i] += d[i] * bs;
          }
      }
      if (gb) {
        // Reduce over the broadcast axes; the channel loop owns its output.
#pragma omp parallel for schedule(static)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          for (std::int64_t s = 0; s < n; ++s) {
            const float* d = gy + (s * c + ch) * hw;
            const float* p = av + (s * c + ch) * hw;
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) acc += kMul ? static_cast<double>(d[i]) * p[i] : d[i];
            gb[bcast_index(kind, s, ch, c)] += static_cast<float>(acc);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<false>(a, b, "add"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<true>(a, b, "mul"); }

Tensor affine(const Tensor& a, float scale, float shift) {
  count_flops("affine", 2 * a.numel());
  if (a.is_meta()) return Tensor::meta(a.shape());
  Tensor out = Tensor::zeros(a.shape());
  const float* x = a.data().data();
  float* y = out.data().data();
  const std::int64_t total = a.numel();
  for (std::int64_t i = 0; i < total; ++i) y[i] = scale * x[i] + shift;
  if (needs_grad({&a})) {
    attach_grad(out, "affine", {a}, [a, scale](const TensorImpl& o) {
      float* gx = a.impl()->grad_buffer().data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += scale * o.grad[i];
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> tensors) {
  if (tensors.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = tensors.front();
  require_rank4(first, "concat_channels", "input 0");
  std::int64_t channels = 0;
  bool meta = false, grad = false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Tensor& t = tensors[i];
    require_rank4(t, "concat_channels", "input");
    for (int d : {0, 2, 3})
      if (t.dim(d) != first.dim(d))
        throw ShapeError("concat_channels: input " + std::to_string(i) + " dim " + std::to_string(d) +
                         " is " + std::to_string(t.dim(d)) + ", expected " +
                         std::to_string(first.dim(d)));
    channels += t.dim(1);
    meta = meta || t.is_meta();
    grad = grad || t.requires_grad();
  }
  const auto n = first.dim(0), hw = first.dim(2) * first.dim(3);
  const Shape out_shape{n, channels, first.dim(2), first.dim(3)};
  if (meta) return Tensor::meta(out_shape);

  Tensor out = Tensor::zeros(out_shape);
  float* y = out.data().data();
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const Tensor& t : tensors) {
    offsets.push_back(offset);
    const auto cs = t.dim(1);
    const float* x = t.data().data();
    for (std::int64_t s = 0; s < n; ++s)
      std::copy(x + s * cs * hw, x + (s + 1) * cs * hw, y + (s * channels + offset) * hw);
    offset += cs;
  }
  if (grad && grad_enabled()) {
    std::vector<Tensor> inputs(tensors.begin(), tensors.end());
    attach_grad(out, "concat_channels", inputs, [inputs, offsets, n, hw, channels](const TensorImpl& o) {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& t = inputs[k];
        if (!t.requires_grad()) continue;
        const auto cs = t.dim(1);
        float* gx = t.impl()->grad_buffer().data();
        for (std::int64_t s = 0; s < n; ++s) {
          const float* src = o.grad.data() + (s * channels + offsets[k]) * hw;
          float* dst = gx + s * cs * hw;
          for (std::int64_t i = 0; i < cs * hw; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& input, std::int64_t start, std::int64_t count) {
  require_rank4(input, "slice_channels", "input");
  const auto n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (start < 0 || count < 1 || start + count > c)
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside channel dim " + std::to_string(c));
  const Shape out_shape{n, count, input.dim(2), input.dim(3)};
  if (input.is_meta()) return Tensor::meta(out_shape);
  Tensor out = Tensor::zeros(out_shape);
  const float* x = input.data().data();
  float* y = out.data().data();
  for (std::int64_t s = 0; s < n; ++s)
    std::copy(x + (s * c + start) * hw, x + (s * c + start + count) * hw, y + s * count * hw);
  if (needs_grad({&input})) {
    attach_grad(out, "slice_channels", {input}, [input, n, c, hw, start, count](const TensorImpl& o) {
      float* gx = input.impl()->grad_buffer().data();
      for (std::int64_t s = 0; s < n; ++s) {
        const float* src = o.grad.data() + s * count * hw;
        float* dst = gx + (s * c + start) * hw;
        for (std::int64_t i = 0; i < count * hw; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& input, std::span<const std::int64_t> sizes) {
  std::vector<Tensor> parts;
  std::int64_t start = 0;
  for (auto size : sizes) {
    parts.push_back(slice_channels(input, start, size));
    start += size;
  }
  if (start != input.dim(1))
    throw ShapeError("split_channels: sizes sum to " + std::to_string(start) + " but channel dim is " +
                     std::to_string(input.dim(1)));
  return parts;
}

Tensor reshape(const Tensor& input, const Shape& shape) {
  if (shape_numel(shape) != input.numel())
    throw ShapeError("reshape: element count " + std::to_string(input.numel()) + " of " +
                     shape_str(input.shape()) + " does not match " + shape_str(shape));
  if (input.is_meta()) return Tensor::meta(shape);
  std::vector<float> values(input.data().begin(), input.data().end());
  Tensor out = Tensor::from_data(shape, std::move(values));
  if (needs_grad({&input})) {
    attach_grad(out, "reshape", {input}, [input](const TensorImpl& o) {
      float* gx = input.impl()->grad_buffer().data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& input) {
  count_flops("sum", input.numel());
  if (input.is_meta()) return Tensor::meta({1});
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  Tensor out = Tensor::full({1}, static_cast<float>(acc));
  if (needs_grad({&input})) {
    attach_grad(out, "sum", {input}, [input](const TensorImpl& o) {
      auto& gx = input.impl()->grad_buffer();
      const float g = o.grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

}  // namespace csfnet::ops
