#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace csfnet::cli {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

bool boolean(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw std::invalid_argument(key + ": expected on/off, got '" + v + "'");
}

PoolingTable parse_pooling(const std::string& v) {
  if (v == "cityscapes") return PoolingTable::cityscapes();
  if (v == "mfnet") return PoolingTable::mfnet();
  if (v == "toy") return PoolingTable::toy();
  throw std::invalid_argument("pooling: expected cityscapes, mfnet or toy, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant", [](RunConfig& c, auto&, auto& v) { c.model.variant = parse_variant(v); }},
      {"num_classes", [](RunConfig& c, auto& k, auto& v) { c.model.num_classes = number<std::int64_t>(k, v); }},
      {"x_channels", [](RunConfig& c, auto& k, auto& v) { c.model.x_channels = number<std::int64_t>(k, v); }},
      {"dual_branch_stages", [](RunConfig& c, auto& k, auto& v) { c.model.dual_branch_stages = number<int>(k, v); }},
      {"decoder_fusion", [](RunConfig& c, auto&, auto& v) { c.model.decoder_fusion = parse_fusion(v); }},
      {"pooling", [](RunConfig& c, auto&, auto& v) { c.model.pooling = parse_pooling(v); }},
      {"width", [](RunConfig& c, auto& k, auto& v) { c.model.width = number<std::int64_t>(k, v); }},
      {"height", [](RunConfig& c, auto& k, auto& v) { c.model.height = number<std::int64_t>(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = number<std::uint64_t>(k, v); }},
      {"base_lr", [](RunConfig& c, auto& k, auto& v) { c.train.base_lr = number<double>(k, v); }},
      {"momentum", [](RunConfig& c, auto& k, auto& v) { c.train.momentum = number<double>(k, v); }},
      {"weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = number<double>(k, v); }},
      {"power", [](RunConfig& c, auto& k, auto& v) { c.train.power = number<double>(k, v); }},
      {"max_iters", [](RunConfig& c, auto& k, auto& v) { c.train.max_iters = number<int>(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = number<int>(k, v); }},
      {"augment",
       [](RunConfig& c, auto& k, auto& v) {
         if (!boolean(k, v)) c.train.augment = AugmentPolicy::identity();
       }},
      {"hflip_p", [](RunConfig& c, auto& k, auto& v) { c.train.augment.hflip_p = number<double>(k, v); }},
      {"scale_min", [](RunConfig& c, auto& k, auto& v) { c.train.augment.scale_min = number<double>(k, v); }},
      {"scale_max", [](RunConfig& c, auto& k, auto& v) { c.train.augment.scale_max = number<double>(k, v); }},
      {"crop_w", [](RunConfig& c, auto& k, auto& v) { c.train.augment.crop_w = number<std::int64_t>(k, v); }},
      {"crop_h", [](RunConfig& c, auto& k, auto& v) { c.train.augment.crop_h = number<std::int64_t>(k, v); }},
      {"brightness", [](RunConfig& c, auto& k, auto& v) { c.train.augment.brightness = number<double>(k, v); }},
      {"contrast", [](RunConfig& c, auto& k, auto& v) { c.train.augment.contrast = number<double>(k, v); }},
      {"saturation", [](RunConfig& c, auto& k, auto& v) { c.train.augment.saturation = number<double>(k, v); }},
      {"modality", [](RunConfig& c, auto&, auto& v) { c.modality = parse_modality(v); }},
      {"data_dir", [](RunConfig& c, auto&, auto& v) { c.data_dir = v; }},
      {"palette", [](RunConfig& c, auto&, auto& v) { c.palette = v; }},
      {"synthetic_samples", [](RunConfig& c, auto& k, auto& v) { c.synthetic_samples = number<int>(k, v); }},
  };
  return table;
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : setters()) out.push_back(k);
  return out;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (cfg.synthetic_samples < 1) throw ConfigError(origin + ": synthetic_samples: must be at least 1");
  const std::int64_t want_x = cfg.modality == Modality::kDepth ? 2 : 1;
  if (cfg.model.x_channels != want_x)
    throw ConfigError(origin + ": x_channels " + std::to_string(cfg.model.x_channels) + " does not match the " +
                      (cfg.modality == Modality::kDepth ? "depth" : "single-map") + " modality (" +
                      std::to_string(want_x) + ")");
  if (!cfg.data_dir.empty() && !fs::is_directory(cfg.data_dir))
    throw ConfigError(origin + ": data_dir: not a directory: " + cfg.data_dir.string());
  if (!cfg.palette.empty() && !fs::is_regular_file(cfg.palette))
    throw ConfigError(origin + ": palette: no such file: " + cfg.palette.string());
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

Palette RunConfig::class_palette() const {
  Palette p = palette.empty() ? default_palette(static_cast<std::size_t>(model.num_classes)) : load_palette(palette);
  if (p.size() < static_cast<std::size_t>(model.num_classes))
    throw ConfigError("palette " + palette.string() + " has " + std::to_string(p.size()) + " colors for " +
                      std::to_string(model.num_classes) + " classes");
  return p;
}

std::vector<Sample> load_directory(const fs::path& dir, Modality modality) {
  for (const char* sub : {"rgb", "x", "labels"})
    if (!fs::is_directory(dir / sub)) throw ConfigError("data directory " + dir.string() + " lacks " + sub + "/");
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir / "rgb"))
    if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw ConfigError("no PNG images in " + (dir / "rgb").string());

  std::vector<Sample> out;
  for (const auto& stem : stems) {
    const fs::path xp = dir / "x" / (stem + ".png");
    fs::path lp = dir / "labels" / (stem + ".png");
    if (!fs::exists(lp)) lp = dir / "labels" / (stem + ".pgm");
    if (!fs::exists(xp)) throw ConfigError("missing modality map " + xp.string());
    if (!fs::exists(lp)) throw ConfigError("missing label map for " + stem + " in " + (dir / "labels").string());

    Sample s;
    s.rgb = load_image(dir / "rgb" / (stem + ".png"));
    if (s.rgb.dim(0) != 3) throw ConfigError((dir / "rgb" / (stem + ".png")).string() + ": expected a color image");
    Tensor raw = load_image(xp);
    if (raw.dim(0) != 1) throw ConfigError(xp.string() + ": expected a grayscale image");
    if (modality == Modality::kDepth) raw = normalize_depth(raw);
    s.x = make_x_input(modality, raw, s.rgb);
    LabelMap labels = load_label(lp);
    if (labels.height != s.height() || labels.width != s.width() || raw.dim(1) != s.height() ||
        raw.dim(2) != s.width())
      throw ConfigError("size mismatch between the rgb, x and label maps of " + stem);
    s.labels = std::move(labels.values);
    out.push_back(std::move(s));
  }
  return out;
}

std::string pooling_name(const PoolingTable& p) {
  auto same = [](const PoolingTable& a, const PoolingTable& b) {
    return a.l1 == b.l1 && a.l2 == b.l2 && a.l3 == b.l3 && a.l4 == b.l4 && a.context == b.context;
  };
  if (same(p, PoolingTable::cityscapes())) return "cityscapes";
  if (same(p, PoolingTable::mfnet())) return "mfnet";
  if (same(p, PoolingTable::toy())) return "toy";
  return "custom";
}

}  // namespace csfnet::cli
