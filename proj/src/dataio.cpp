#include "csfnet/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include "csfnet/ops.hpp"

namespace csfnet {

SampleBatch make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const auto& first = samples.front();
  const std::int64_t n = static_cast<std::int64_t>(samples.size());
  const std::int64_t h = first.height(), w = first.width(), xc = first.x.dim(0);
  SampleBatch batch;
  batch.rgb = Tensor::zeros({n, 3, h, w});
  batch.x = Tensor::zeros({n, xc, h, w});
  batch.labels.reserve(static_cast<std::size_t>(n * h * w));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.rgb.shape() != first.rgb.shape() || s.x.shape() != first.x.shape() ||
        static_cast<std::int64_t>(s.labels.size()) != h * w)
      throw ShapeError("make_batch: sample " + std::to_string(i) + " has a different shape");
    std::copy(s.rgb.data().begin(), s.rgb.data().end(), batch.rgb.data().begin() + i * 3 * h * w);
    std::copy(s.x.data().begin(), s.x.data().end(), batch.x.data().begin() + i * xc * h * w);
    batch.labels.insert(batch.labels.end(), s.labels.begin(), s.labels.end());
  }
  return batch;
}

Modality parse_modality(const std::string& s) {
  if (s == "depth") return Modality::kDepth;
  if (s == "thermal") return Modality::kThermal;
  if (s == "aolp") return Modality::kAolp;
  throw std::invalid_argument("modality: expected depth, thermal or aolp, got '" + s + "'");
}

Tensor compute_aolp(const Tensor& i0, const Tensor& i45, const Tensor& i90, const Tensor& i135) {
  for (const Tensor* t : {&i45, &i90, &i135})
    if (t->shape() != i0.shape())
      throw ShapeError("compute_aolp: intensity maps differ in shape: " + shape_str(i0.shape()) +
                       " vs " + shape_str(t->shape()));
  Tensor out = Tensor::zeros(i0.shape());
  auto a = i0.data(), b = i45.data(), c = i90.data(), d = i135.data();
  auto o = out.data();
  for (std::size_t k = 0; k < o.size(); ++k) {
    const double s1 = static_cast<double>(a[k]) - c[k];
    const double s2 = static_cast<double>(b[k]) - d[k];
    o[k] = static_cast<float>(0.5 * std::atan2(s1, s2));
  }
  return out;
}

Tensor scale_aolp(const Tensor& angle) {
  Tensor out = Tensor::zeros(angle.shape());
  auto in = angle.data();
  auto o = out.data();
  for (std::size_t k = 0; k < o.size(); ++k)
    o[k] = static_cast<float>(std::clamp((in[k] + std::numbers::pi / 2) / std::numbers::pi, 0.0, 1.0));
  return out;
}

Tensor luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw ShapeError("luminance: expected (3,H,W), got " + shape_str(rgb.shape()));
  const std::int64_t hw = rgb.dim(1) * rgb.dim(2);
  Tensor out = Tensor::zeros({1, rgb.dim(1), rgb.dim(2)});
  const float* p = rgb.data().data();
  float* y = out.data().data();
  for (std::int64_t i = 0; i < hw; ++i) y[i] = 0.299f * p[i] + 0.587f * p[hw + i] + 0.114f * p[2 * hw + i];
  return out;
}

namespace {

// (H,W) or (1,H,W) -> (1,H,W) sharing nothing with the input.
Tensor as_single_channel(const Tensor& t, const char* what) {
  if (t.rank() == 2) return Tensor::from_data({1, t.dim(0), t.dim(1)}, {t.data().begin(), t.data().end()});
  if (t.rank() == 3 && t.dim(0) == 1) return t.clone();
  throw ShapeError(std::string(what) + ": expected (H,W) or (1,H,W), got " + shape_str(t.shape()));
}

}  // namespace

Tensor normalize_depth(const Tensor& depth) {
  Tensor out = as_single_channel(depth, "normalize_depth");
  auto v = out.data();
  float lo = std::numeric_limits<float>::max(), hi = 0.0f;
  for (float d : v)
    if (d > 0.0f) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  if (hi <= 0.0f) return out;
  const float range = hi - lo;
  for (float& d : v)
    if (d > 0.0f) d = range > 0.0f ? (d - lo) / range : 1.0f;
  return out;
}

Tensor make_x_input(Modality modality, const Tensor& raw, const Tensor& rgb) {
  Tensor x = as_single_channel(raw, "make_x_input");
  if (rgb.rank() != 3 || rgb.dim(0) != 3 || rgb.dim(1) != x.dim(1) || rgb.dim(2) != x.dim(2))
    throw ShapeError("make_x_input: rgb " + shape_str(rgb.shape()) + " does not match modality map " +
                     shape_str(x.shape()));
  if (modality != Modality::kDepth) return x;
  const Tensor parts[] = {luminance(rgb), x};
  NoGradGuard guard;
  Tensor stacked = ops::concat_channels(
      std::array<Tensor, 2>{ops::reshape(parts[0], {1, 1, x.dim(1), x.dim(2)}),
                            ops::reshape(parts[1], {1, 1, x.dim(1), x.dim(2)})});
  return ops::reshape(stacked, {2, x.dim(1), x.dim(2)});
}

AugmentPolicy AugmentPolicy::identity() {
  AugmentPolicy p;
  p.hflip_p = 0.0;
  p.scale_min = p.scale_max = 1.0;
  p.brightness = p.contrast = p.saturation = 0.0;
  return p;
}

Sample hflip(const Sample& s) {
  auto flip = [](const Tensor& t) {
    Tensor out = Tensor::zeros(t.shape());
    const std::int64_t w = t.dim(t.rank() - 1), rows = t.numel() / w;
    auto in = t.data();
    auto o = out.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < w; ++c) o[r * w + c] = in[r * w + (w - 1 - c)];
    return out;
  };
  Sample out;
  out.rgb = flip(s.rgb);
  out.x = flip(s.x);
  const std::int64_t w = s.width(), h = s.height();
  out.labels.resize(s.labels.size());
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) out.labels[r * w + c] = s.labels[r * w + (w - 1 - c)];
  return out;
}

Sample scale_and_crop(const Sample& s, double scale, std::int64_t crop_w, std::int64_t crop_h,
                      std::int64_t x0, std::int64_t y0) {
  const std::int64_t h = s.height(), w = s.width();
  const std::int64_t sh = std::max<std::int64_t>(1, std::llround(h * scale));
  const std::int64_t sw = std::max<std::int64_t>(1, std::llround(w * scale));
  NoGradGuard guard;
  auto resize = [&](const Tensor& t) {
    if (sh == h && sw == w) return t;
    Tensor r = ops::bilinear_resize(ops::reshape(t, {1, t.dim(0), h, w}), sh, sw);
    return ops::reshape(r, {t.dim(0), sh, sw});
  };
  const Tensor rgb = resize(s.rgb), x = resize(s.x);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(sh * sw));
  for (std::int64_t r = 0; r < sh; ++r) {
    const std::int64_t sr = std::min(h - 1, static_cast<std::int64_t>((r + 0.5) * h / sh));
    for (std::int64_t c = 0; c < sw; ++c) {
      const std::int64_t sc = std::min(w - 1, static_cast<std::int64_t>((c + 0.5) * w / sw));
      labels[r * sw + c] = s.labels[sr * w + sc];
    }
  }

  auto crop = [&](const Tensor& t) {
    const std::int64_t ch = t.dim(0);
    Tensor out = Tensor::zeros({ch, crop_h, crop_w});
    auto in = t.data();
    auto o = out.data();
    for (std::int64_t k = 0; k < ch; ++k)
      for (std::int64_t r = 0; r < crop_h; ++r) {
        const std::int64_t sr = r + y0;
        if (sr < 0 || sr >= sh) continue;
        for (std::int64_t c = 0; c < crop_w; ++c) {
          const std::int64_t sc = c + x0;
          if (sc >= 0 && sc < sw) o[(k * crop_h + r) * crop_w + c] = in[(k * sh + sr) * sw + sc];
        }
      }
    return out;
  };
  Sample out;
  out.rgb = crop(rgb);
  out.x = crop(x);
  out.labels.assign(static_cast<std::size_t>(crop_h * crop_w), kIgnoreLabel);
  for (std::int64_t r = 0; r < crop_h; ++r) {
    const std::int64_t sr = r + y0;
    if (sr < 0 || sr >= sh) continue;
    for (std::int64_t c = 0; c < crop_w; ++c) {
      const std::int64_t sc = c + x0;
      if (sc >= 0 && sc < sw) out.labels[r * crop_w + c] = labels[sr * sw + sc];
    }
  }
  return out;
}

namespace {

void color_jitter(Tensor& rgb, double b, double c, double s) {
  const std::int64_t hw = rgb.dim(1) * rgb.dim(2);
  float* p = rgb.data().data();
  for (std::int64_t i = 0; i < 3 * hw; ++i) p[i] = std::clamp(static_cast<float>(p[i] * b), 0.0f, 1.0f);
  double mean = 0.0;
  for (std::int64_t i = 0; i < hw; ++i) mean += 0.299 * p[i] + 0.587 * p[hw + i] + 0.114 * p[2 * hw + i];
  mean /= static_cast<double>(hw);
  for (std::int64_t i = 0; i < 3 * hw; ++i)
    p[i] = std::clamp(static_cast<float>((p[i] - mean) * c + mean), 0.0f, 1.0f);
  for (std::int64_t i = 0; i < hw; ++i) {
    const float gray = 0.299f * p[i] + 0.587f * p[hw + i] + 0.114f * p[2 * hw + i];
    for (int k = 0; k < 3; ++k) {
      float& v = p[k * hw + i];
      v = std::clamp(static_cast<float>(gray + (v - gray) * s), 0.0f, 1.0f);
    }
  }
}

}  // namespace

Sample augment(const Sample& sample, std::mt19937_64& rng, const AugmentPolicy& policy) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Sample s = sample;
  if (unit(rng) < policy.hflip_p) s = hflip(s);

  const double scale = policy.scale_min + (policy.scale_max - policy.scale_min) * unit(rng);
  const std::int64_t cw = policy.crop_w > 0 ? policy.crop_w : s.width();
  const std::int64_t ch = policy.crop_h > 0 ? policy.crop_h : s.height();
  const std::int64_t sw = std::max<std::int64_t>(1, std::llround(s.width() * scale));
  const std::int64_t sh = std::max<std::int64_t>(1, std::llround(s.height() * scale));
  std::int64_t x0 = 0, y0 = 0;
  if (sw > cw) x0 = std::uniform_int_distribution<std::int64_t>(0, sw - cw)(rng);
  if (sh > ch) y0 = std::uniform_int_distribution<std::int64_t>(0, sh - ch)(rng);
  if (scale != 1.0 || cw != s.width() || ch != s.height() || x0 != 0 || y0 != 0)
    s = scale_and_crop(s, scale, cw, ch, x0, y0);
  else
    s.rgb = s.rgb.clone();

  auto factor = [&](double strength) { return 1.0 + strength * (2.0 * unit(rng) - 1.0); };
  const double b = factor(policy.brightness), c = factor(policy.contrast), sat = factor(policy.saturation);
  if (b != 1.0 || c != 1.0 || sat != 1.0) color_jitter(s.rgb, b, c, sat);
  return s;
}

Tensor normalize(const Tensor& t, std::span<const float> mean, std::span<const float> std) {
  if (t.rank() != 3 && t.rank() != 4)
    throw ShapeError("normalize: expected (C,H,W) or (N,C,H,W), got " + shape_str(t.shape()));
  const int cdim = t.rank() == 3 ? 0 : 1;
  const std::int64_t c = t.dim(cdim);
  if (static_cast<std::int64_t>(mean.size()) != c || static_cast<std::int64_t>(std.size()) != c)
    throw ShapeError("normalize: need " + std::to_string(c) + " mean/std values");
  const std::int64_t hw = t.dim(t.rank() - 1) * t.dim(t.rank() - 2);
  Tensor out = Tensor::zeros(t.shape());
  auto in = t.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const auto ch = static_cast<std::size_t>((static_cast<std::int64_t>(i) / hw) % c);
    o[i] = (in[i] - mean[ch]) / std[ch];
  }
  return out;
}

void normalize_sample(Sample& sample, const Normalization& norm) {
  sample.rgb = normalize(sample.rgb, norm.rgb_mean, norm.rgb_std);
  const std::vector<float> xm(static_cast<std::size_t>(sample.x.dim(0)), norm.x_mean);
  const std::vector<float> xs(xm.size(), norm.x_std);
  sample.x = normalize(sample.x, xm, xs);
}

// ---- PNG / PGM ----

namespace {

struct RawImage {
  std::int64_t width = 0, height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved
};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& why) {
  throw std::runtime_error(path.string() + ": " + why);
}

// keep_indices: return palette indices / gray values untouched (labels).
RawImage read_png(const std::filesystem::path& path, bool keep_indices) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) io_fail(path, "cannot open file");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) io_fail(path, "not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_fail(path, "libpng initialisation failed");
  }
  RawImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "malformed PNG data");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  bool ok = true;
  if (keep_indices) {
    if ((color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) || depth > 8) ok = false;
    if (depth < 8) png_set_packing(png);
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_strip_alpha(png);
  }
  if (ok) {
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    img.pixels.resize(stride * static_cast<std::size_t>(img.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (std::int64_t r = 0; r < img.height; ++r) rows[r] = img.pixels.data() + r * stride;
    png_read_image(png, rows.data());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) io_fail(path, "label PNG must be 8-bit grayscale or indexed");
  if (img.channels == 2 || img.channels == 4) io_fail(path, "unexpected alpha channel");
  return img;
}

void write_png(const std::filesystem::path& path, std::int64_t width, std::int64_t height,
               int channels, const std::uint8_t* pixels, const Palette* palette) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) io_fail(path, "cannot open file for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    io_fail(path, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail(path, "PNG encoding failed");
  }
  png_init_io(png, file.get());
  const int color = palette ? PNG_COLOR_TYPE_PALETTE : channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> entries;
  if (palette) {
    for (const auto& c : *palette) entries.push_back({c[0], c[1], c[2]});
    png_set_PLTE(png, info, entries.data(), static_cast<int>(entries.size()));
  }
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width * channels);
  for (std::int64_t r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels + r * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

bool has_pgm_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char m[2] = {0, 0};
  in.read(m, 2);
  return in.gcount() == 2 && m[0] == 'P' && m[1] == '5';
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  const RawImage img = read_png(path, false);
  const int c = img.channels;
  Tensor out = Tensor::zeros({c, img.height, img.width});
  auto o = out.data();
  const std::int64_t hw = img.height * img.width;
  for (std::int64_t i = 0; i < hw; ++i)
    for (int k = 0; k < c; ++k) o[k * hw + i] = img.pixels[i * c + k] / 255.0f;
  return out;
}

void save_image(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
    throw ShapeError("save_image: expected (1|3,H,W), got " + shape_str(chw.shape()));
  const std::int64_t c = chw.dim(0), hw = chw.dim(1) * chw.dim(2);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(c * hw));
  auto in = chw.data();
  for (std::int64_t i = 0; i < hw; ++i)
    for (std::int64_t k = 0; k < c; ++k)
      px[i * c + k] = static_cast<std::uint8_t>(std::lround(std::clamp(in[k * hw + i], 0.0f, 1.0f) * 255.0f));
  write_png(path, chw.dim(2), chw.dim(1), static_cast<int>(c), px.data(), nullptr);
}

LabelMap load_label(const std::filesystem::path& path) {
  if (has_pgm_magic(path)) return load_pgm(path);
  const RawImage img = read_png(path, true);
  return {img.height, img.width, img.pixels};
}

void save_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot open file for writing");
  out << "P5\n" << labels.width << " " << labels.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(labels.values.data()), static_cast<std::streamsize>(labels.values.size()));
  if (!out) io_fail(path, "write failed");
}

LabelMap load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open file");
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  if (token() != "P5") io_fail(path, "not a binary PGM (P5)");
  LabelMap m;
  try {
    m.width = std::stoll(token());
    m.height = std::stoll(token());
    if (std::stoi(token()) != 255) io_fail(path, "PGM maxval must be 255");
  } catch (const std::logic_error&) {
    io_fail(path, "malformed PGM header");
  }
  if (m.width < 1 || m.height < 1) io_fail(path, "invalid PGM dimensions");
  m.values.resize(static_cast<std::size_t>(m.width * m.height));
  in.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(m.values.size()));
  if (in.gcount() != static_cast<std::streamsize>(m.values.size())) io_fail(path, "truncated PGM data");
  return m;
}

Palette default_palette(std::size_t n) {
  // Cityscapes-style colors for the first classes, then a hashed fill.
  static const Palette base = {{128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156},
                               {190, 153, 153}, {153, 153, 153}, {250, 170, 30}, {220, 220, 0},
                               {107, 142, 35}, {152, 251, 152}, {70, 130, 180}, {220, 20, 60},
                               {255, 0, 0},    {0, 0, 142},    {0, 0, 70},     {0, 60, 100},
                               {0, 80, 100},   {0, 0, 230},    {119, 11, 32}};
  Palette p;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < base.size()) {
      p.push_back(base[i]);
    } else {
      const auto h = static_cast<std::uint32_t>(i * 2654435761u);
      p.push_back({static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16),
                   static_cast<std::uint8_t>(h >> 8)});
    }
  }
  return p;
}

Palette load_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) io_fail(path, "cannot open palette");
  Palette p;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int r, g, b;
    if (!(ls >> r)) continue;
    if (!(ls >> g >> b) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
      io_fail(path, "palette lines must hold three values in 0..255");
    p.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
  }
  if (p.empty() || p.size() > 256) io_fail(path, "palette must have 1..256 entries");
  return p;
}

void save_indexed_png(const std::filesystem::path& path, const LabelMap& labels, const Palette& palette) {
  if (palette.empty() || palette.size() > 256) throw std::invalid_argument("palette must have 1..256 entries");
  for (auto v : labels.values)
    if (v >= palette.size())
      throw std::invalid_argument("class index " + std::to_string(v) + " has no palette entry");
  write_png(path, labels.width, labels.height, 1, labels.values.data(), &palette);
}

// ---- synthetic scenes ----

std::array<float, 3> synth_class_color(std::uint8_t cls) {
  static const std::array<float, 3> colors[] = {
      {0.45f, 0.45f, 0.45f}, {0.85f, 0.2f, 0.2f}, {0.2f, 0.75f, 0.25f}, {0.2f, 0.3f, 0.9f},
      {0.9f, 0.85f, 0.2f},   {0.8f, 0.3f, 0.85f}, {0.2f, 0.85f, 0.85f}, {0.95f, 0.6f, 0.2f}};
  constexpr std::size_t n = std::size(colors);
  if (cls < n) return colors[cls];
  const float t = static_cast<float>((cls * 37) % 100) / 100.0f;
  return {t, 1.0f - t, 0.5f + 0.4f * (t - 0.5f)};
}

namespace {

bool covers(const SceneShape& s, double px, double py) {
  if (s.kind == SceneShape::Kind::kRect) return px >= s.x0 && px < s.x1 && py >= s.y0 && py < s.y1;
  const double dx = px - s.cx, dy = py - s.cy;
  return dx * dx + dy * dy <= s.r * s.r;
}

}  // namespace

SceneSpec random_scene(std::mt19937_64& rng, std::int64_t width, std::int64_t height,
                       int num_classes, std::uint8_t required_class) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneSpec scene;
  scene.width = width;
  scene.height = height;
  scene.background_depth_const = 1.0 + 0.5 * unit(rng);
  if (num_classes < 2) return scene;
  // Shapes stay off a 2-pixel border so the background class is always visible.
  const double margin = 2.0;
  auto make_shape = [&](std::uint8_t cls) {
    SceneShape s;
    s.cls = cls;
    s.depth_const = 1.5 + 3.5 * unit(rng);
    s.shade = static_cast<float>(0.85 + 0.3 * unit(rng));
    const double minside = 0.12 * std::min(width, height), maxside = 0.4 * std::min(width, height);
    if (unit(rng) < 0.5) {
      s.kind = SceneShape::Kind::kRect;
      const double w = minside + (maxside - minside) * unit(rng);
      const double h = minside + (maxside - minside) * unit(rng);
      s.x0 = margin + (width - 2 * margin - w) * unit(rng);
      s.y0 = margin + (height - 2 * margin - h) * unit(rng);
      s.x1 = s.x0 + w;
      s.y1 = s.y0 + h;
    } else {
      s.kind = SceneShape::Kind::kDisk;
      s.r = 0.5 * (minside + (maxside - minside) * unit(rng));
      s.cx = margin + s.r + (width - 2 * margin - 2 * s.r) * unit(rng);
      s.cy = margin + s.r + (height - 2 * margin - 2 * s.r) * unit(rng);
    }
    return s;
  };
  const int count = 2 + static_cast<int>(unit(rng) * 4);
  std::uniform_int_distribution<int> cls_dist(1, num_classes - 1);
  for (int i = 0; i < count; ++i) scene.shapes.push_back(make_shape(static_cast<std::uint8_t>(cls_dist(rng))));
  // Painted last so it cannot be occluded.
  if (required_class != 0) scene.shapes.push_back(make_shape(required_class));
  return scene;
}

Sample render_scene(const SceneSpec& scene, std::mt19937_64& rng) {
  const std::int64_t h = scene.height, w = scene.width, hw = h * w;
  std::normal_distribution<float> color_noise(0.0f, 0.03f), depth_noise(0.0f, 0.01f);
  Sample s;
  s.rgb = Tensor::zeros({3, h, w});
  Tensor depth = Tensor::zeros({1, h, w});
  s.labels.assign(static_cast<std::size_t>(hw), 0);
  float* rgb = s.rgb.data().data();
  float* d = depth.data().data();
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      const double px = c + 0.5, py = r + 0.5;
      const SceneShape* top = nullptr;
      for (const auto& shape : scene.shapes)
        if (covers(shape, px, py)) top = &shape;
      const std::uint8_t cls = top ? top->cls : 0;
      const float shade = top ? top->shade : 1.0f;
      const double dc = top ? top->depth_const : scene.background_depth_const;
      const auto color = synth_class_color(cls);
      const std::int64_t i = r * w + c;
      s.labels[static_cast<std::size_t>(i)] = cls;
      for (int k = 0; k < 3; ++k)
        rgb[k * hw + i] = std::clamp(color[k] * shade + color_noise(rng), 0.0f, 1.0f);
      d[i] = std::max(1e-3f, static_cast<float>(1.0 / dc) + depth_noise(rng));
    }
  s.x = make_x_input(Modality::kDepth, normalize_depth(depth), s.rgb);
  return s;
}

std::vector<SynthItem> synth_dataset(std::uint64_t seed, int n_samples, std::int64_t width,
                                     std::int64_t height, int num_classes) {
  if (width % 32 != 0 || height % 32 != 0 || width <= 0 || height <= 0)
    throw std::invalid_argument("synth_dataset: size must be a positive multiple of 32");
  if (num_classes < 1 || num_classes > 255) throw std::invalid_argument("synth_dataset: num_classes must be 1..255");
  std::mt19937_64 rng(seed);
  std::vector<SynthItem> items;
  for (int i = 0; i < n_samples; ++i) {
    SynthItem item;
    item.scene = random_scene(rng, width, height, num_classes, static_cast<std::uint8_t>(i % num_classes));
    item.sample = render_scene(item.scene, rng);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace csfnet
