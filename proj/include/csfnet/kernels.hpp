#pragma once

#include <cstdint>
#include <span>

namespace csfnet {

/// Geometry of one 2-D convolution over an NCHW batch.
struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1, in_h = 1, in_w = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1, kernel_w = 1;
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;

  std::int64_t out_h() const { return (in_h + pad_top + pad_bottom - kernel_h) / stride_h + 1; }
  std::int64_t out_w() const { return (in_w + pad_left + pad_right - kernel_w) / stride_w + 1; }
  std::int64_t patch() const { return in_channels * kernel_h * kernel_w; }
};

namespace kernels {

enum class Trans { kNo, kYes };

/// C = alpha * op(A) * op(B) + beta * C, row-major, op(A) is M x K.
///
/// Each output element is produced by exactly one thread with a fixed
/// summation order, so results do not depend on the thread count.
void sgemm(Trans trans_a, Trans trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           float beta, float* c, std::int64_t ldc);

// Blocked im2col + GEMM convolution, OpenMP-parallel.
void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output);
// Any of grad_input / grad_weight / grad_bias may be null. Results are added.
void conv2d_backward(const ConvGeometry& g, const float* input, const float* weight,
                     const float* grad_output, float* grad_input, float* grad_weight,
                     float* grad_bias);

}  // namespace kernels

/// Serial direct-loop kernels. Slow and obvious; kept as the correctness
/// reference for the parallel kernels and for the kernel benchmark.
namespace reference {

void sgemm(kernels::Trans trans_a, kernels::Trans trans_b, std::int64_t m, std::int64_t n,
           std::int64_t k, float alpha, const float* a, std::int64_t lda, const float* b,
           std::int64_t ldb, float beta, float* c, std::int64_t ldc);

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output);
void conv2d_backward(const ConvGeometry& g, const float* input, const float* weight,
                     const float* grad_output, float* grad_input, float* grad_weight,
                     float* grad_bias);

}  // namespace reference

/// Thread count for internal op parallelism. Defaults to 1; read from
/// CSFNET_THREADS by configure_threads_from_env().
void set_num_threads(int n);
int num_threads();
int configure_threads_from_env();

}  // namespace csfnet
