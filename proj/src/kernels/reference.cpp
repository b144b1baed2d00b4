#include "csfnet/kernels.hpp"

namespace csfnet::reference {

void sgemm(kernels::Trans trans_a, kernels::Trans trans_b, std::int64_t m, std::int64_t n,
           std::int64_t k, float alpha, const float* a, std::int64_t lda, const float* b,
           std::int64_t ldb, float beta, float* c, std::int64_t ldc) {
  const bool ta = trans_a == kernels::Trans::kYes;
  const bool tb = trans_b == kernels::Trans::kYes;
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::int64_t p = 0; p < k; ++p) {
        const float av = ta ? a[p * lda + i] : a[i * lda + p];
        const float bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      float& out = c[i * ldc + j];
      out = alpha * acc + (beta == 0.0f ? 0.0f : beta * out);
    }
  }
}

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          float acc = bias ? bias[co] : 0.0f;
          for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
              const std::int64_t iy = oy * g.stride_h - g.pad_top + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                const std::int64_t ix = ox * g.stride_w - g.pad_left + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] *
                       weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
              }
            }
          output[((n * g.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
}

void conv2d_backward(const ConvGeometry& g, const float* input, const float* weight,
                     const float* grad_output, float* grad_input, float* grad_weight,
                     float* grad_bias) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const float gy = grad_output[((n * g.out_channels + co) * oh + oy) * ow + ox];
          if (grad_bias) grad_bias[co] += gy;
          for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
              const std::int64_t iy = oy * g.stride_h - g.pad_top + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
                const std::int64_t ix = ox * g.stride_w - g.pad_left + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                const std::int64_t in_idx = ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                const std::int64_t w_idx =
                    ((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
                if (grad_input) grad_input[in_idx] += gy * weight[w_idx];
                if (grad_weight) grad_weight[w_idx] += gy * input[in_idx];
              }
            }
        }
}

}  // namespace csfnet::reference
