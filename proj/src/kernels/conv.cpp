#include <algorithm>
#include <vector>

#include "csfnet/kernels.hpp"

namespace csfnet::kernels {
namespace {

// Upper bound on the im2col scratch, in floats.
constexpr std::int64_t kColBudget = std::int64_t{1} << 22;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1 &&
         g.pad_top == 0 && g.pad_bottom == 0 && g.pad_left == 0 && g.pad_right == 0;
}

std::int64_t rows_per_tile(const ConvGeometry& g) {
  const std::int64_t per_row = g.patch() * g.out_w();
  return std::clamp<std::int64_t>(kColBudget / std::max<std::int64_t>(per_row, 1), 1, g.out_h());
}

// Unfolds output rows [r0, r1) of one image into a (patch x rows*out_w) matrix.
void im2col(const ConvGeometry& g, const float* in, std::int64_t r0, std::int64_t r1, float* col) {
  const std::int64_t ow = g.out_w();
  const std::int64_t tile = (r1 - r0) * ow;
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    const float* plane = in + ci * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        float* dst = col + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * tile;
        for (std::int64_t r = r0; r < r1; ++r) {
          const std::int64_t iy = r * g.stride_h - g.pad_top + ky;
          float* drow = dst + (r - r0) * ow;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(drow, drow + ow, 0.0f);
            continue;
          }
          const float* srow = plane + iy * g.in_w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride_w - g.pad_left + kx;
            drow[ox] = (ix >= 0 && ix < g.in_w) ? srow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const float* col, std::int64_t r0, std::int64_t r1,
                float* grad_in) {
  const std::int64_t ow = g.out_w();
  const std::int64_t tile = (r1 - r0) * ow;
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    float* plane = grad_in + ci * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const float* src = col + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * tile;
        for (std::int64_t r = r0; r < r1; ++r) {
          const std::int64_t iy = r * g.stride_h - g.pad_top + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const float* srow = src + (r - r0) * ow;
          float* drow = plane + iy * g.in_w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride_w - g.pad_left + kx;
            if (ix >= 0 && ix < g.in_w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  const std::int64_t pixels = oh * ow;
  const std::int64_t patch = g.patch();
  const std::int64_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::int64_t out_stride = g.out_channels * pixels;
  thread_local std::vector<float> col;

  for (std::int64_t n = 0; n < g.batch; ++n) {
    const float* in_n = input + n * in_stride;
    float* out_n = output + n * out_stride;
    if (is_pointwise(g)) {
      sgemm(Trans::kNo, Trans::kNo, g.out_channels, pixels, g.in_channels, 1.0f, weight,
            g.in_channels, in_n, pixels, 0.0f, out_n, pixels);
    } else {
      const std::int64_t rows = rows_per_tile(g);
      col.resize(static_cast<std::size_t>(patch * rows * ow));
      for (std::int64_t r0 = 0; r0 < oh; r0 += rows) {
        const std::int64_t r1 = std::min(oh, r0 + rows);
        const std::int64_t tile = (r1 - r0) * ow;
        im2col(g, in_n, r0, r1, col.data());
        sgemm(Trans::kNo, Trans::kNo, g.out_channels, tile, patch, 1.0f, weight, patch, col.data(),
              tile, 0.0f, out_n + r0 * ow, pixels);
      }
    }
    if (bias) {
#pragma omp parallel for schedule(static)
      for (std::int64_t co = 0; co < g.out_channels; ++co) {
        float* plane = out_n + co * pixels;
        const float b = bias[co];
        for (std::int64_t i = 0; i < pixels; ++i) plane[i] += b;
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const float* input, const float* weight,
                     const float* grad_output, float* grad_input, float* grad_weight,
                     float* grad_bias) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  const std::int64_t pixels = oh * ow;
  const std::int64_t patch = g.patch();
  const std::int64_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::int64_t out_stride = g.out_channels * pixels;
  thread_local std::vector<float> col, dcol;

  if (grad_bias) {
#pragma omp parallel for schedule(static)
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      float acc = 0.0f;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const float* plane = grad_output + n * out_stride + co * pixels;
        for (std::int64_t i = 0; i < pixels; ++i) acc += plane[i];
      }
      grad_bias[co] += acc;
    }
  }
  if (!grad_input && !grad_weight) return;

  for (std::int64_t n = 0; n < g.batch; ++n) {
    const float* in_n = input + n * in_stride;
    const float* gy_n = grad_output + n * out_stride;
    if (is_pointwise(g)) {
      if (grad_weight)
        sgemm(Trans::kNo, Trans::kYes, g.out_channels, g.in_channels, pixels, 1.0f, gy_n, pixels,
              in_n, pixels, 1.0f, grad_weight, g.in_channels);
      if (grad_input)
        sgemm(Trans::kYes, Trans::kNo, g.in_channels, pixels, g.out_channels, 1.0f, weight,
              g.in_channels, gy_n, pixels, 1.0f, grad_input + n * in_stride, pixels);
      continue;
    }
    const std::int64_t rows = rows_per_tile(g);
    for (std::int64_t r0 = 0; r0 < oh; r0 += rows) {
      const std::int64_t r1 = std::min(oh, r0 + rows);
      const std::int64_t tile = (r1 - r0) * ow;
      if (grad_weight) {
        col.resize(static_cast<std::size_t>(patch * tile));
        im2col(g, in_n, r0, r1, col.data());
        sgemm(Trans::kNo, Trans::kYes, g.out_channels, patch, tile, 1.0f, gy_n + r0 * ow, pixels,
              col.data(), tile, 1.0f, grad_weight, patch);
      }
      if (grad_input) {
        dcol.resize(static_cast<std::size_t>(patch * tile));
        sgemm(Trans::kYes, Trans::kNo, patch, tile, g.out_channels, 1.0f, weight, patch,
              gy_n + r0 * ow, pixels, 0.0f, dcol.data(), tile);
        col2im_add(g, dcol.data(), r0, r1, grad_input + n * in_stride);
      }
    }
  }
}

}  // namespace csfnet::kernels
