#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "csfnet/layers.hpp"

namespace csfnet {

enum class BackboneVariant { kStdc1, kStdc2 };

struct StdcBlockConfig {
  std::int64_t in_channels = 1, out_channels = 8;
  std::int64_t stride = 1;
  int num_units = 4;

  /// Output widths of the units: c/2, c/4, ..., with the last repeating the
  /// one before it, so they sum to c.
  std::vector<std::int64_t> unit_channels() const;
  void validate() const;
};

/// Short-term dense concatenate block.
class StdcBlock {
 public:
  StdcBlock() = default;
  StdcBlock(ModuleContext& ctx, const std::string& name, const StdcBlockConfig& cfg);
  Tensor forward(const Tensor& x, Mode mode) const;
  const StdcBlockConfig& config() const { return cfg_; }

 private:
  StdcBlockConfig cfg_;
  std::vector<ConvBnRelu> units_;
};

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kStdc1;
  std::int64_t in_channels = 3;

  static constexpr int kStages = 5;
  static constexpr std::array<std::int64_t, kStages> kStageChannels{32, 64, 256, 512, 1024};
  /// STDC blocks in stages 3..5.
  std::array<int, 3> blocks_per_stage() const;
};

/// Two stride-2 3x3 stems followed by three STDC stages; stage i (1-based)
/// runs at 1/2^i of the input resolution.
class Backbone {
 public:
  Backbone() = default;
  Backbone(ModuleContext& ctx, const std::string& name, const BackboneConfig& cfg);

  /// Runs a single stage (0-based index).
  Tensor run_stage(int stage, const Tensor& x, Mode mode) const;
  /// Outputs of stages 1..stop_after_stage.
  std::vector<Tensor> forward(const Tensor& x, Mode mode, int stop_after_stage = 5) const;
  /// Outputs of stages first..last (1-based, inclusive) starting from the
  /// output of stage first-1.
  std::vector<Tensor> forward_range(const Tensor& x, Mode mode, int first, int last) const;
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::array<ConvBnRelu, 2> stems_;
  std::array<std::vector<StdcBlock>, 3> stages_;
};

}  // namespace csfnet
