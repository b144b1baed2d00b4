#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csfnet/tensor.hpp"

namespace csfnet {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// One training/eval example: rgb (3,H,W), x (C,H,W), labels H*W row-major.
struct Sample {
  Tensor rgb, x;
  std::vector<std::uint8_t> labels;
  std::int64_t height() const { return rgb.dim(1); }
  std::int64_t width() const { return rgb.dim(2); }
};

/// Stacked samples: rgb (N,3,H,W), x (N,C,H,W), labels N*H*W.
struct SampleBatch {
  Tensor rgb, x;
  std::vector<std::uint8_t> labels;
};

SampleBatch make_batch(std::span<const Sample> samples);

// ---- modality preprocessing ----

enum class Modality { kDepth, kThermal, kAolp };
Modality parse_modality(const std::string& s);

/// Angle of linear polarization, 0.5 * atan2(I0 - I90, I45 - I135), in
/// [-pi/2, pi/2]. Inputs are equal-shape intensity maps.
Tensor compute_aolp(const Tensor& i0, const Tensor& i45, const Tensor& i90, const Tensor& i135);
/// Maps an angle in [-pi/2, pi/2] linearly onto [0,1].
Tensor scale_aolp(const Tensor& angle);

/// BT.601 luma of a (3,H,W) image, shape (1,H,W).
Tensor luminance(const Tensor& rgb);

/// Per-image min-max normalisation of positive depth to [0,1]; zero
/// (missing) pixels stay zero. Accepts (H,W) or (1,H,W).
Tensor normalize_depth(const Tensor& depth);

/// depth -> (luminance(rgb), depth); thermal / aolp -> the raw map alone.
/// `raw` is (H,W) or (1,H,W) in [0,1]; `rgb` is (3,H,W).
Tensor make_x_input(Modality modality, const Tensor& raw, const Tensor& rgb);

// ---- augmentation and normalisation ----

struct AugmentPolicy {
  double hflip_p = 0.5;
  double scale_min = 0.5, scale_max = 1.75;
  std::int64_t crop_w = 0, crop_h = 0;  // 0 keeps the input size
  // Color jitter factors are drawn from [1 - s, 1 + s].
  double brightness = 0.2, contrast = 0.2, saturation = 0.2;

  static AugmentPolicy identity();
};

/// Random flip, scale (bilinear images / nearest labels), crop (padding with
/// zeros and ignore labels) applied jointly; color jitter on rgb only.
Sample augment(const Sample& sample, std::mt19937_64& rng, const AugmentPolicy& policy);

/// Horizontal mirror of all three maps.
Sample hflip(const Sample& sample);

/// Resize by `scale` then place a crop_w x crop_h window at (x0, y0) of the
/// scaled image; out-of-range cells are padded.
Sample scale_and_crop(const Sample& sample, double scale, std::int64_t crop_w, std::int64_t crop_h,
                      std::int64_t x0, std::int64_t y0);

/// (v - mean[c]) / std[c] over a (C,H,W) or (N,C,H,W) tensor.
Tensor normalize(const Tensor& t, std::span<const float> mean, std::span<const float> std);

struct Normalization {
  std::vector<float> rgb_mean{0.5f, 0.5f, 0.5f}, rgb_std{0.5f, 0.5f, 0.5f};
  float x_mean = 0.5f, x_std = 0.5f;
};
void normalize_sample(Sample& sample, const Normalization& norm);

// ---- file I/O ----

/// 8-bit PNG as (C,H,W) in [0,1]; C is 1 for grayscale, 3 otherwise (alpha
/// dropped, palettes expanded).
Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor& chw);

struct LabelMap {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> values;
};

/// Class indices from an 8-bit grayscale/indexed PNG or a P5 PGM.
LabelMap load_label(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_pgm(const std::filesystem::path& path);

using Palette = std::vector<std::array<std::uint8_t, 3>>;
/// Distinct, deterministic colors for `n` classes.
Palette default_palette(std::size_t n);
/// Text file, one "r g b" line per class.
Palette load_palette(const std::filesystem::path& path);
/// Indexed-color PNG whose pixel values are the class indices.
void save_indexed_png(const std::filesystem::path& path, const LabelMap& labels, const Palette& palette);

// ---- synthetic scenes ----

struct SceneShape {
  enum class Kind { kRect, kDisk } kind = Kind::kRect;
  std::uint8_t cls = 0;
  // Rect covers [x0,x1) x [y0,y1); disk covers (x-cx)^2+(y-cy)^2 <= r^2
  // measured at pixel centers.
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0, cy = 0, r = 0;
  double depth_const = 1.0;  // depth = 1 / depth_const + noise
  float shade = 1.0f;        // multiplies the class color
};

/// Background is class 0; shapes are painted in order, later on top.
struct SceneSpec {
  std::int64_t width = 0, height = 0;
  double background_depth_const = 1.0;
  std::vector<SceneShape> shapes;
};

/// Base color of a class in the synthetic scenes.
std::array<float, 3> synth_class_color(std::uint8_t cls);

struct SynthItem {
  SceneSpec scene;
  Sample sample;  // rgb (3,H,W) in [0,1], x = (luminance, depth)
};

SceneSpec random_scene(std::mt19937_64& rng, std::int64_t width, std::int64_t height,
                       int num_classes, std::uint8_t required_class);
Sample render_scene(const SceneSpec& scene, std::mt19937_64& rng);

/// Deterministic RGB-D dataset; sample i always contains class i mod K.
std::vector<SynthItem> synth_dataset(std::uint64_t seed, int n_samples, std::int64_t width,
                                     std::int64_t height, int num_classes);

}  // namespace csfnet
