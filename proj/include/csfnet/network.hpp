#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "csfnet/backbone.hpp"
#include "csfnet/context.hpp"
#include "csfnet/csafm.hpp"
#include "csfnet/layers.hpp"

namespace csfnet {

enum class Variant { kCsfnet1, kCsfnet2 };
enum class DecoderFusion { kCsafm, kAdd };

struct PoolSize {
  std::int64_t w = 1, h = 1;
  bool operator==(const PoolSize&) const = default;
};

/// Adaptive pooling sizes of the fusion modules per encoder level and of the
/// context module.
struct PoolingTable {
  PoolSize l1, l2, l3, l4, context;

  static PoolingTable cityscapes();
  static PoolingTable mfnet();
  /// Small sizes for toy inputs (64..128 px).
  static PoolingTable toy();
  /// Level 1..5; level 5 is level 4 halved, rounded up.
  PoolSize level(int lvl) const;
};

struct ModelConfig {
  Variant variant = Variant::kCsfnet1;
  std::int64_t num_classes = 19;
  std::int64_t rgb_channels = 3;
  std::int64_t x_channels = 2;
  int dual_branch_stages = 3;
  DecoderFusion decoder_fusion = DecoderFusion::kCsafm;
  PoolingTable pooling = PoolingTable::cityscapes();
  std::int64_t width = 1024, height = 512;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);
std::string fusion_name(DecoderFusion f);
DecoderFusion parse_fusion(const std::string& s);

class Network {
 public:
  static constexpr std::int64_t kDecoderChannels = 32;

  /// Deterministic initialisation from `seed`.
  static Network build(const ModelConfig& cfg, std::uint64_t seed);
  /// Shape-only network for analytic accounting.
  static Network build_meta(const ModelConfig& cfg);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  struct Encoded {
    // Per level (0-based): branch outputs before fusion (dual levels only),
    // and the level's feature: the fused map at dual levels, the trunk
    // output otherwise.
    std::array<Tensor, 5> rgb, x, level;
    // Rectified maps that feed the next stage of each branch.
    std::array<Tensor, 5> rect_rgb, rect_x;
  };

  Encoded encode(const Tensor& rgb, const Tensor& x, Mode mode) const;
  Tensor decode(const Encoded& enc, std::int64_t out_h, std::int64_t out_w, Mode mode) const;
  /// Logits (N, num_classes, H, W).
  Tensor forward(const Tensor& rgb, const Tensor& x, Mode mode) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return *store_; }
  const ParameterStore& parameters() const { return *store_; }
  const Backbone& rgb_backbone() const { return rgb_; }
  const Backbone& x_backbone() const { return x_; }
  /// Encoder fusion module at a dual-branch level (0-based).
  const Csafm& encoder_fusion(int level) const { return enc_fuse_.at(static_cast<std::size_t>(level)); }

 private:
  Network(const ModelConfig& cfg, std::uint64_t seed, bool meta);
  Tensor fuse_skip(int site, const Tensor& dec, const Tensor& skip, Mode mode) const;

  ModelConfig cfg_;
  std::unique_ptr<ParameterStore> store_;
  Backbone rgb_, x_;
  std::vector<Csafm> enc_fuse_;
  ContextModule context_;
  ConvBnRelu skip1_, skip3_, skip4_;
  std::array<std::vector<ConvBnRelu>, 4> up_;
  std::array<Csafm, 3> dec_fuse_;
  Conv2d head_;
};

}  // namespace csfnet
