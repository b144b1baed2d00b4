#pragma once

#include <cstdint>
#include <string>

#include "csfnet/layers.hpp"

namespace csfnet {

struct CsafmConfig {
  std::int64_t channels = 1;
  std::int64_t pool_w = 1, pool_h = 1;
  std::int64_t hidden_channels = 8;

  static std::int64_t default_hidden(std::int64_t channels);
  static CsafmConfig make(std::int64_t channels, std::int64_t pool_w, std::int64_t pool_h);
  void validate() const;
};

/// Per-sample, per-channel cosine similarity of two (N,C,H,W) maps after
/// adaptive pooling to (pool_h, pool_w). Returns (N,C), clamped to [-1,1];
/// a channel whose pooled map has norm below 1e-8 in either input gets 0.
Tensor channel_cosine_similarity(const Tensor& fx, const Tensor& fy, std::int64_t pool_h,
                                 std::int64_t pool_w);

/// Cosine similarity between already-pooled maps, shape (N,C,h,w) -> (N,C).
Tensor pooled_cosine(const Tensor& px, const Tensor& py);

/// Cross-modal rectification: fx' = fx + fy*W, fy' = fy + fx*(1-W). W is (C) or (N,C,1,1).
std::pair<Tensor, Tensor> rectify(const Tensor& fx, const Tensor& fy, const Tensor& w);
/// Weighted fusion: fm = fy*W + fx*(1-W).
Tensor fuse(const Tensor& fx, const Tensor& fy, const Tensor& w);

struct CsafmOutput {
  Tensor rect_x, rect_y;  // undefined when only the fused map was requested
  Tensor fused;
  Tensor weights;  // (N,C,1,1)
};

class Csafm {
 public:
  enum class Outputs { kRectifiedAndFused, kFusedOnly };

  Csafm() = default;
  Csafm(ModuleContext& ctx, const std::string& name, const CsafmConfig& cfg);

  /// Maps similarities (N,C) through conv1 -> BN -> ReLU -> conv2 -> sigmoid
  /// to weights (N,C,1,1) in (0,1).
  Tensor weights(const Tensor& similarity, Mode mode) const;
  CsafmOutput forward(const Tensor& fx, const Tensor& fy, Mode mode, Outputs outputs) const;
  const CsafmConfig& config() const { return cfg_; }

 private:
  CsafmConfig cfg_;
  Conv2d conv1_, conv2_;
  BatchNorm2d bn_;
};

}  // namespace csfnet
