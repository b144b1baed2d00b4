#include "csfnet/backbone.hpp"

namespace csfnet {

std::vector<std::int64_t> StdcBlockConfig::unit_channels() const {
  std::vector<std::int64_t> widths;
  std::int64_t w = out_channels / 2;
  for (int i = 0; i < num_units; ++i) {
    widths.push_back(w);
    if (i < num_units - 2) w /= 2;
  }
  return widths;
}

void StdcBlockConfig::validate() const {
  if (num_units < 2) throw std::invalid_argument("stdc block: num_units must be at least 2");
  if (stride != 1 && stride != 2) throw std::invalid_argument("stdc block: stride must be 1 or 2");
  const std::int64_t divisor = std::int64_t{1} << (num_units - 1);
  if (in_channels < 1 || out_channels < divisor || out_channels % divisor != 0)
    throw std::invalid_argument("stdc block: out_channels " + std::to_string(out_channels) +
                                " must be a positive multiple of " + std::to_string(divisor));
}

StdcBlock::StdcBlock(ModuleContext& ctx, const std::string& name, const StdcBlockConfig& cfg)
    : cfg_(cfg) {
  cfg.validate();
  const auto widths = cfg.unit_channels();
  std::int64_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::int64_t k = i == 0 ? 1 : 3;
    const std::int64_t s = i == 1 ? cfg.stride : 1;
    units_.emplace_back(ctx, name + ".unit" + std::to_string(i), ConvSpec::square(cin, widths[i], k, s));
    cin = widths[i];
  }
}

Tensor StdcBlock::forward(const Tensor& x, Mode mode) const {
  std::vector<Tensor> parts;
  Tensor cur = x;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    cur = units_[i].forward(cur, mode);
    if (i == 0 && cfg_.stride == 2)
      parts.push_back(ops::avg_pool2d(cur, 3, 2, 1));
    else
      parts.push_back(cur);
  }
  return ops::concat_channels(parts);
}

std::array<int, 3> BackboneConfig::blocks_per_stage() const {
  return variant == BackboneVariant::kStdc1 ? std::array<int, 3>{2, 2, 2}
                                            : std::array<int, 3>{4, 5, 3};
}

Backbone::Backbone(ModuleContext& ctx, const std::string& name, const BackboneConfig& cfg)
    : cfg_(cfg) {
  if (cfg.in_channels < 1) throw std::invalid_argument("backbone: in_channels must be positive");
  const auto& ch = BackboneConfig::kStageChannels;
  stems_[0] = ConvBnRelu(ctx, name + ".stage1", ConvSpec::square(cfg.in_channels, ch[0], 3, 2));
  stems_[1] = ConvBnRelu(ctx, name + ".stage2", ConvSpec::square(ch[0], ch[1], 3, 2));
  const auto blocks = cfg.blocks_per_stage();
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < blocks[s]; ++b) {
      StdcBlockConfig bc;
      bc.in_channels = b == 0 ? ch[s + 1] : ch[s + 2];
      bc.out_channels = ch[s + 2];
      bc.stride = b == 0 ? 2 : 1;
      stages_[s].emplace_back(ctx, name + ".stage" + std::to_string(s + 3) + ".block" + std::to_string(b), bc);
    }
  }
}

Tensor Backbone::run_stage(int stage, const Tensor& x, Mode mode) const {
  if (stage < 0 || stage >= BackboneConfig::kStages)
    throw std::out_of_range("backbone: stage index " + std::to_string(stage) + " out of range");
  if (stage < 2) return stems_[stage].forward(x, mode);
  Tensor cur = x;
  for (const auto& block : stages_[stage - 2]) cur = block.forward(cur, mode);
  return cur;
}

std::vector<Tensor> Backbone::forward_range(const Tensor& x, Mode mode, int first, int last) const {
  if (first < 1 || last > BackboneConfig::kStages || first > last)
    throw std::out_of_range("backbone: invalid stage range " + std::to_string(first) + ".." +
                            std::to_string(last));
  std::vector<Tensor> outs;
  Tensor cur = x;
  for (int s = first; s <= last; ++s) {
    cur = run_stage(s - 1, cur, mode);
    outs.push_back(cur);
  }
  return outs;
}

std::vector<Tensor> Backbone::forward(const Tensor& x, Mode mode, int stop_after_stage) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
    throw ShapeError("backbone: expected " + std::to_string(cfg_.in_channels) +
                     " input channels, got shape " + shape_str(x.shape()));
  const std::int64_t divisor = std::int64_t{1} << stop_after_stage;
  if (x.dim(2) % divisor != 0 || x.dim(3) % divisor != 0)
    throw ShapeError("backbone: spatial size " + std::to_string(x.dim(2)) + "x" +
                     std::to_string(x.dim(3)) + " must be divisible by " + std::to_string(divisor));
  return forward_range(x, mode, 1, stop_after_stage);
}

}  // namespace csfnet
