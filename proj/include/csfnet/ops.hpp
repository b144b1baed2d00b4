#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csfnet/tensor.hpp"

namespace csfnet {

enum class Mode { kTrain, kEval };

namespace ops {

struct Stride2d {
  std::int64_t h = 1, w = 1;
};

struct Padding2d {
  std::int64_t top = 0, bottom = 0, left = 0, right = 0;
  static Padding2d uniform(std::int64_t p) { return {p, p, p, p}; }
};

/// input (N,Cin,H,W), weight (Cout,Cin,kh,kw), bias (Cout) or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Stride2d stride = {},
              Padding2d padding = {});

/// Train mode normalises with batch statistics and updates the running
/// buffers in place; eval mode reads the running buffers.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, Mode mode, float momentum = 0.1f,
                   float eps = 1e-5f);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);

/// Output cell i averages input rows [floor(i*H/out_h), ceil((i+1)*H/out_h)).
Tensor adaptive_avg_pool2d(const Tensor& input, std::int64_t out_h, std::int64_t out_w);

/// Square average pool; padded cells count toward the divisor.
Tensor avg_pool2d(const Tensor& input, std::int64_t kernel, std::int64_t stride,
                  std::int64_t padding);

Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w,
                       bool align_corners = false);

/// `b` is either the same shape as `a`, or a per-channel vector shaped (C),
/// (1,C,1,1) or (N,C,1,1) broadcast against an NCHW `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * a + shift
Tensor affine(const Tensor& a, float scale, float shift);

Tensor concat_channels(std::span<const Tensor> tensors);
Tensor slice_channels(const Tensor& input, std::int64_t start, std::int64_t count);
std::vector<Tensor> split_channels(const Tensor& input, std::span<const std::int64_t> sizes);

Tensor reshape(const Tensor& input, const Shape& shape);
/// Sum of all elements, shape (1).
Tensor sum(const Tensor& input);

}  // namespace ops
}  // namespace csfnet
