#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "csfnet/dataio.hpp"
#include "csfnet/network.hpp"
#include "csfnet/trainer.hpp"

namespace csfnet::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `key = value` lines; `#` starts a comment. Keys mirror ModelConfig and
/// TrainConfig plus the dataset settings below.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Modality modality = Modality::kDepth;
  std::filesystem::path data_dir;
  std::filesystem::path palette;
  int synthetic_samples = 20;

  /// Unknown keys, malformed values and missing paths are reported with the
  /// file name and line number.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static std::vector<std::string> keys();

  Palette class_palette() const;
};

/// Samples from `dir`/rgb/<stem>.png, `dir`/x/<stem>.png (the raw modality
/// map) and `dir`/labels/<stem>.{png,pgm}, sorted by stem. X inputs are built
/// with make_x_input; nothing is normalised.
std::vector<Sample> load_directory(const std::filesystem::path& dir, Modality modality);

std::string pooling_name(const PoolingTable& p);

}  // namespace csfnet::cli
