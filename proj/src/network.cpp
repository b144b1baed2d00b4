#include "csfnet/network.hpp"

#include <random>

namespace csfnet {

PoolingTable PoolingTable::cityscapes() {
  return {{32, 16}, {16, 8}, {8, 4}, {4, 2}, {8, 4}};
}

PoolingTable PoolingTable::mfnet() {
  return {{24, 16}, {12, 8}, {6, 4}, {3, 2}, {5, 5}};
}

PoolingTable PoolingTable::toy() {
  return {{8, 8}, {4, 4}, {2, 2}, {2, 2}, {2, 2}};
}

PoolSize PoolingTable::level(int lvl) const {
  switch (lvl) {
    case 1: return l1;
    case 2: return l2;
    case 3: return l3;
    case 4: return l4;
    case 5: return {(l4.w + 1) / 2, (l4.h + 1) / 2};
    default: throw std::out_of_range("pooling level must be 1..5, got " + std::to_string(lvl));
  }
}

std::string variant_name(Variant v) { return v == Variant::kCsfnet1 ? "csfnet1" : "csfnet2"; }

Variant parse_variant(const std::string& s) {
  if (s == "csfnet1" || s == "CSFNet-1" || s == "1") return Variant::kCsfnet1;
  if (s == "csfnet2" || s == "CSFNet-2" || s == "2") return Variant::kCsfnet2;
  throw std::invalid_argument("variant: expected csfnet1 or csfnet2, got '" + s + "'");
}

std::string fusion_name(DecoderFusion f) { return f == DecoderFusion::kCsafm ? "csafm" : "add"; }

DecoderFusion parse_fusion(const std::string& s) {
  if (s == "csafm") return DecoderFusion::kCsafm;
  if (s == "add") return DecoderFusion::kAdd;
  throw std::invalid_argument("decoder_fusion: expected csafm or add, got '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (num_classes < 1 || num_classes > 255)
    fail("num_classes: must be in 1..255, got " + std::to_string(num_classes));
  if (rgb_channels != 3) fail("rgb_channels: must be 3, got " + std::to_string(rgb_channels));
  if (x_channels != 1 && x_channels != 2)
    fail("x_channels: must be 1 or 2, got " + std::to_string(x_channels));
  if (dual_branch_stages < 3 || dual_branch_stages > 5)
    fail("dual_branch_stages: must be 3, 4 or 5, got " + std::to_string(dual_branch_stages));
  if (width < 32 || width % 32 != 0) fail("width: must be a positive multiple of 32, got " + std::to_string(width));
  if (height < 32 || height % 32 != 0)
    fail("height: must be a positive multiple of 32, got " + std::to_string(height));

  auto check = [&](const std::string& field, PoolSize p, int lvl) {
    if (p.w < 1 || p.h < 1) fail(field + ": pool size must be positive");
    const std::int64_t fw = width >> lvl, fh = height >> lvl;
    if (p.w > fw || p.h > fh)
      fail(field + ": pool size " + std::to_string(p.w) + "x" + std::to_string(p.h) +
           " exceeds the level-" + std::to_string(lvl) + " feature size " + std::to_string(fw) +
           "x" + std::to_string(fh) + " at input " + std::to_string(width) + "x" +
           std::to_string(height));
  };
  const char* names[] = {"pooling.l1", "pooling.l2", "pooling.l3", "pooling.l4", "pooling.l5"};
  for (int lvl = 1; lvl <= dual_branch_stages; ++lvl) check(names[lvl - 1], pooling.level(lvl), lvl);
  if (decoder_fusion == DecoderFusion::kCsafm)
    for (int lvl : {1, 3, 4}) check(names[lvl - 1], pooling.level(lvl), lvl);
  check("pooling.context", pooling.context, 5);
}

Network Network::build(const ModelConfig& cfg, std::uint64_t seed) { return Network(cfg, seed, false); }

Network Network::build_meta(const ModelConfig& cfg) { return Network(cfg, 0, true); }

Network::Network(const ModelConfig& cfg, std::uint64_t seed, bool meta)
    : cfg_(cfg), store_(std::make_unique<ParameterStore>()) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModuleContext ctx{*store_, rng, meta};
  const auto variant = cfg.variant == Variant::kCsfnet1 ? BackboneVariant::kStdc1 : BackboneVariant::kStdc2;
  const auto& widths = BackboneConfig::kStageChannels;

  rgb_ = Backbone(ctx, "encoder.rgb", {variant, cfg.rgb_channels});
  x_ = Backbone(ctx, "encoder.x", {variant, cfg.x_channels});
  for (int lvl = 1; lvl <= cfg.dual_branch_stages; ++lvl) {
    const PoolSize p = cfg.pooling.level(lvl);
    enc_fuse_.emplace_back(ctx, "encoder.fuse" + std::to_string(lvl),
                           CsafmConfig::make(widths[lvl - 1], p.w, p.h));
  }
  context_ = ContextModule(ctx, "context", {widths[4], cfg.pooling.context.w, cfg.pooling.context.h});

  const std::int64_t d = kDecoderChannels;
  skip1_ = ConvBnRelu(ctx, "decoder.skip1", ConvSpec::square(widths[0], d, 1));
  skip3_ = ConvBnRelu(ctx, "decoder.skip3", ConvSpec::square(widths[2], d, 1));
  skip4_ = ConvBnRelu(ctx, "decoder.skip4", ConvSpec::square(widths[3], d, 1));
  for (int u = 0; u < 4; ++u) {
    const int convs = u == 2 ? 2 : 1;
    for (int c = 0; c < convs; ++c)
      up_[u].emplace_back(ctx, "decoder.up" + std::to_string(u + 1) + ".conv" + std::to_string(c),
                          ConvSpec::square(d, d, 3));
  }
  if (cfg.decoder_fusion == DecoderFusion::kCsafm) {
    const int levels[3] = {4, 3, 1};
    for (int i = 0; i < 3; ++i) {
      const PoolSize p = cfg.pooling.level(levels[i]);
      dec_fuse_[i] = Csafm(ctx, "decoder.fuse" + std::to_string(i + 1), CsafmConfig::make(d, p.w, p.h));
    }
  }
  head_ = Conv2d(ctx, "head", ConvSpec::square(d, cfg.num_classes, 1, 1, true));
}

Network::Encoded Network::encode(const Tensor& rgb, const Tensor& x, Mode mode) const {
  if (rgb.rank() != 4 || rgb.dim(1) != cfg_.rgb_channels)
    throw ShapeError("network: rgb must be (N," + std::to_string(cfg_.rgb_channels) +
                     ",H,W), got " + shape_str(rgb.shape()));
  if (x.rank() != 4 || x.dim(1) != cfg_.x_channels)
    throw ShapeError("network: x must be (N," + std::to_string(cfg_.x_channels) + ",H,W), got " +
                     shape_str(x.shape()));
  if (rgb.dim(0) != x.dim(0) || rgb.dim(2) != x.dim(2) || rgb.dim(3) != x.dim(3))
    throw ShapeError("network: rgb " + shape_str(rgb.shape()) + " and x " + shape_str(x.shape()) +
                     " differ in batch or spatial size");
  if (rgb.dim(2) % 32 != 0 || rgb.dim(3) % 32 != 0)
    throw ShapeError("network: spatial size " + std::to_string(rgb.dim(2)) + "x" +
                     std::to_string(rgb.dim(3)) + " must be divisible by 32");

  Encoded enc;
  const int dual = cfg_.dual_branch_stages;
  Tensor r = rgb, t = x, trunk;
  for (int i = 0; i < BackboneConfig::kStages; ++i) {
    if (i < dual) {
      enc.rgb[i] = rgb_.run_stage(i, r, mode);
      enc.x[i] = x_.run_stage(i, t, mode);
      const bool last = i == dual - 1;
      auto out = enc_fuse_[i].forward(enc.rgb[i], enc.x[i], mode,
                                      last ? Csafm::Outputs::kFusedOnly : Csafm::Outputs::kRectifiedAndFused);
      enc.level[i] = out.fused;
      if (last) {
        trunk = out.fused;
      } else {
        enc.rect_rgb[i] = r = out.rect_x;
        enc.rect_x[i] = t = out.rect_y;
      }
    } else {
      trunk = rgb_.run_stage(i, trunk, mode);
      enc.level[i] = trunk;
    }
  }
  return enc;
}

Tensor Network::fuse_skip(int site, const Tensor& dec, const Tensor& skip, Mode mode) const {
  if (cfg_.decoder_fusion == DecoderFusion::kAdd) return ops::add(dec, skip);
  return dec_fuse_[site].forward(dec, skip, mode, Csafm::Outputs::kFusedOnly).fused;
}

Tensor Network::decode(const Encoded& enc, std::int64_t out_h, std::int64_t out_w, Mode mode) const {
  auto upsample = [&](int u, const Tensor& in, std::int64_t h, std::int64_t w) {
    Tensor cur = ops::bilinear_resize(in, h, w);
    for (const auto& conv : up_[u]) cur = conv.forward(cur, mode);
    return cur;
  };
  const Tensor s4 = skip4_.forward(enc.level[3], mode);
  const Tensor s3 = skip3_.forward(enc.level[2], mode);
  const Tensor s1 = skip1_.forward(enc.level[0], mode);

  Tensor d = context_.forward(enc.level[4], mode);
  d = fuse_skip(0, upsample(0, d, s4.dim(2), s4.dim(3)), s4, mode);
  d = fuse_skip(1, upsample(1, d, s3.dim(2), s3.dim(3)), s3, mode);
  d = fuse_skip(2, upsample(2, d, s1.dim(2), s1.dim(3)), s1, mode);
  d = upsample(3, d, out_h, out_w);
  return head_.forward(d);
}

Tensor Network::forward(const Tensor& rgb, const Tensor& x, Mode mode) const {
  const Encoded enc = encode(rgb, x, mode);
  return decode(enc, rgb.dim(2), rgb.dim(3), mode);
}

}  // namespace csfnet
