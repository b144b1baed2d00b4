#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "csfnet/kernels.hpp"
#include "csfnet/metrics.hpp"
#include "csfnet/network.hpp"
#include "csfnet/tensor_io.hpp"
#include "csfnet/trainer.hpp"
#include "module_checks.hpp"
#include "run_config.hpp"

using namespace csfnet;
namespace fs = std::filesystem;

namespace {

// Non-fatal problems the user must see; the command exits nonzero.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

cli::RunConfig load_config(const std::string& path) {
  return path.empty() ? cli::RunConfig::parse("", "<defaults>") : cli::RunConfig::load(path);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw CommandError(std::string(what) + ": no such file: " + path);
}

void check_dims(std::int64_t w, std::int64_t h) {
  if (w < 32 || h < 32 || w % 32 != 0 || h % 32 != 0)
    throw CommandError("width and height must be positive multiples of 32, got " + std::to_string(w) + "x" +
                       std::to_string(h));
}

Network load_network(const cli::RunConfig& cfg, const std::string& checkpoint) {
  require_file(checkpoint, "checkpoint");
  Network net = Network::build(cfg.model, cfg.train.seed);
  net.parameters().assign_from(load_checkpoint(checkpoint));
  return net;
}

std::vector<Sample> normalized(std::vector<Sample> samples, const Normalization& norm) {
  for (auto& s : samples) normalize_sample(s, norm);
  return samples;
}

void print_report(const EvalReport& r) {
  std::printf("%-8s %10s\n", "class", "IoU");
  for (int k = 0; k < r.num_classes; ++k) {
    const double iou = r.per_class_iou[static_cast<std::size_t>(k)];
    if (std::isnan(iou))
      std::printf("%-8d %10s\n", k, "absent");
    else
      std::printf("%-8d %10.4f\n", k, iou);
  }
  std::printf("mIoU            %.4f\npixel accuracy  %.4f\n", r.miou, r.pixel_accuracy);
}

// ---- commands ----

struct InferArgs {
  std::string config, rgb, x, checkpoint;
  std::string out_png = "prediction.png", out_pgm = "prediction.pgm";
};

int cmd_infer(const InferArgs& a) {
  const cli::RunConfig cfg = load_config(a.config);
  require_file(a.rgb, "--rgb");
  require_file(a.x, "--x");
  const Palette palette = cfg.class_palette();
  const Network net = load_network(cfg, a.checkpoint);

  Sample s;
  s.rgb = load_image(a.rgb);
  if (s.rgb.dim(0) != 3) throw CommandError(a.rgb + ": expected a color image");
  Tensor raw = load_image(a.x);
  if (raw.dim(0) != 1) throw CommandError(a.x + ": expected a grayscale image");
  if (raw.dim(1) != s.height() || raw.dim(2) != s.width())
    throw CommandError("rgb is " + std::to_string(s.width()) + "x" + std::to_string(s.height()) + " but x is " +
                       std::to_string(raw.dim(2)) + "x" + std::to_string(raw.dim(1)));
  check_dims(s.width(), s.height());
  if (cfg.modality == Modality::kDepth) raw = normalize_depth(raw);
  s.x = make_x_input(cfg.modality, raw, s.rgb);
  s.labels.assign(static_cast<std::size_t>(s.height() * s.width()), 0);
  normalize_sample(s, cfg.train.normalization);

  const SampleBatch b = make_batch(std::span<const Sample>(&s, 1));
  Tensor logits;
  {
    NoGradGuard guard;
    logits = net.forward(b.rgb, b.x, Mode::kEval);
  }
  LabelMap pred{s.height(), s.width(), argmax_classes(logits)};
  save_indexed_png(a.out_png, pred, palette);
  save_pgm(a.out_pgm, pred);

  std::vector<std::int64_t> hist(static_cast<std::size_t>(cfg.model.num_classes), 0);
  for (std::uint8_t v : pred.values) ++hist[v];
  std::printf("%-8s %12s %8s\n", "class", "pixels", "share");
  for (std::size_t k = 0; k < hist.size(); ++k)
    std::printf("%-8zu %12lld %7.2f%%\n", k, static_cast<long long>(hist[k]),
                100.0 * static_cast<double>(hist[k]) / static_cast<double>(pred.values.size()));
  return 0;
}

struct TrainArgs {
  std::string config, data_dir, history, init;
  std::string save = "csfnet.ckpt";
  bool synthetic = false;
  int iters = 0;
};

int cmd_train(const TrainArgs& a) {
  cli::RunConfig cfg = load_config(a.config);
  if (a.iters > 0) cfg.train.max_iters = a.iters;
  const std::string data_dir = a.data_dir.empty() ? cfg.data_dir.string() : a.data_dir;
  if (a.synthetic == !data_dir.empty())
    throw CommandError("train: give exactly one of --synthetic or --data-dir (or data_dir in the config)");
  if (!a.init.empty()) require_file(a.init, "--init");
  const fs::path save = a.save;
  const fs::path history = a.history.empty() ? fs::path(a.save + ".history.csv") : fs::path(a.history);
  for (const fs::path& out : {save, history})
    if (out.has_parent_path() && !fs::is_directory(out.parent_path()))
      throw CommandError("output directory does not exist: " + out.parent_path().string());

  std::vector<Sample> data;
  if (a.synthetic) {
    for (auto& item : synth_dataset(cfg.train.seed, cfg.synthetic_samples, cfg.model.width, cfg.model.height,
                                    static_cast<int>(cfg.model.num_classes)))
      data.push_back(std::move(item.sample));
  } else {
    data = cli::load_directory(data_dir, cfg.modality);
  }
  for (const Sample& s : data)
    for (std::uint8_t v : s.labels)
      if (v != kIgnoreLabel && v >= cfg.model.num_classes)
        throw CommandError("label " + std::to_string(v) + " is out of range for " +
                           std::to_string(cfg.model.num_classes) + " classes");

  Network net = Network::build(cfg.model, cfg.train.seed);
  if (!a.init.empty()) net.parameters().assign_from(load_checkpoint(a.init));

  std::ofstream csv(history);
  if (!csv) throw CommandError("cannot write " + history.string());
  csv << "iter,loss,lr\n";
  const int every = std::max(1, cfg.train.max_iters / 20);
  const auto log = [&](const HistoryEntry& h) {
    char line[64];
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", h.iter, h.loss, h.lr);
    csv << line;
    if (h.iter % every == 0 || h.iter + 1 == cfg.train.max_iters)
      std::printf("iter %5d  loss %.5f  lr %.6f\n", h.iter, h.loss, h.lr);
  };
  const auto hist = train_loop(net, data, cfg.train, log);
  csv.close();
  save_checkpoint(net.parameters(), save);

  const auto means = window_means(hist, 20);
  std::printf("loss first %.5f last %.5f\n", hist.front().loss, hist.back().loss);
  if (!means.empty()) {
    std::printf("20-iter means:");
    for (double m : means) std::printf(" %.4f", m);
    std::printf("\n");
  }
  const EvalReport r = evaluate(net, normalized(data, cfg.train.normalization));
  std::printf("training pixel accuracy %.4f  mIoU %.4f\n", r.pixel_accuracy, r.miou);
  std::printf("checkpoint %s\nhistory %s\n", save.string().c_str(), history.string().c_str());
  return 0;
}

struct EvalArgs {
  std::string config, checkpoint, data_dir, pred_dir;
};

int cmd_eval(const EvalArgs& a) {
  const cli::RunConfig cfg = load_config(a.config);
  const std::string data_dir = a.data_dir.empty() ? cfg.data_dir.string() : a.data_dir;
  if (data_dir.empty()) throw CommandError("eval: --data-dir (or data_dir in the config) is required");
  if (a.checkpoint.empty() == a.pred_dir.empty())
    throw CommandError("eval: give exactly one of --checkpoint or --pred-dir");

  if (!a.pred_dir.empty()) {
    if (!fs::is_directory(a.pred_dir)) throw CommandError("--pred-dir: not a directory: " + a.pred_dir);
    ConfusionMatrix cm(static_cast<int>(cfg.model.num_classes));
    std::vector<fs::path> labels;
    for (const auto& e : fs::directory_iterator(fs::path(data_dir) / "labels")) labels.push_back(e.path());
    std::sort(labels.begin(), labels.end());
    if (labels.empty()) throw CommandError("no label maps in " + (fs::path(data_dir) / "labels").string());
    for (const auto& lp : labels) {
      fs::path pp = fs::path(a.pred_dir) / (lp.stem().string() + ".pgm");
      if (!fs::exists(pp)) pp.replace_extension(".png");
      if (!fs::exists(pp)) throw CommandError("no prediction for " + lp.stem().string() + " in " + a.pred_dir);
      const LabelMap truth = load_label(lp), pred = load_label(pp);
      if (truth.width != pred.width || truth.height != pred.height)
        throw CommandError("prediction " + pp.string() + " differs in size from " + lp.string());
      cm.accumulate(pred.values, truth.values);
    }
    print_report(make_report(cm));
    return 0;
  }
  const Network net = load_network(cfg, a.checkpoint);
  const auto data = normalized(cli::load_directory(data_dir, cfg.modality), cfg.train.normalization);
  print_report(evaluate(net, data));
  return 0;
}

struct BenchArgs {
  std::string config, csv;
  std::int64_t width = 1024, height = 512;
  int warmup = 50, iters = 200;
};

int cmd_bench(const BenchArgs& a) {
  cli::RunConfig cfg = load_config(a.config);
  check_dims(a.width, a.height);
  cfg.model.width = a.width;
  cfg.model.height = a.height;
  cfg.model.validate();
  const Network net = Network::build(cfg.model, cfg.train.seed);
  const BenchReport r = benchmark_fps(net, a.height, a.width, a.warmup, a.iters);

  std::printf("model        %s, %lld classes, %dx%d, batch 1, %d thread(s)\n",
              variant_name(cfg.model.variant).c_str(), static_cast<long long>(cfg.model.num_classes),
              static_cast<int>(a.width), static_cast<int>(a.height), num_threads());
  std::printf("warmup       %d\n", r.warmup_iters);
  std::printf("timed        %d\n", r.timed_iters);
  std::printf("mean ms      %.3f\n", r.mean_ms);
  std::printf("std ms       %.3f\n", r.std_ms);
  std::printf("median ms    %.3f\n", r.median_ms);
  std::printf("fps          %.3f\n", r.fps);
  std::printf("params       %lld\n", static_cast<long long>(r.params));
  std::printf("flops        %lld\n", static_cast<long long>(r.flops));
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw CommandError("cannot write " + a.csv);
    out << "key,value\n"
        << "warmup_iters," << r.warmup_iters << "\ntimed_iters," << r.timed_iters << "\nmean_ms," << r.mean_ms
        << "\nstd_ms," << r.std_ms << "\nmedian_ms," << r.median_ms << "\nfps," << r.fps << "\nparams," << r.params
        << "\nflops," << r.flops << "\n";
    for (std::size_t i = 0; i < r.latencies_ms.size(); ++i) out << "latency_ms_" << i << "," << r.latencies_ms[i] << "\n";
  }
  return 0;
}

struct DescribeArgs {
  std::string config;
  std::int64_t width = 0, height = 0;
  bool macs = false;
};

std::string module_group(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const std::string top = name.substr(0, first);
  if (top != "encoder" && top != "decoder") return top;
  const auto second = name.find('.', first + 1);
  return second == std::string::npos ? name : name.substr(0, second);
}

int cmd_describe(const DescribeArgs& a) {
  cli::RunConfig cfg = load_config(a.config);
  const std::int64_t w = a.width ? a.width : cfg.model.width, h = a.height ? a.height : cfg.model.height;
  check_dims(w, h);
  cfg.model.width = w;
  cfg.model.height = h;
  cfg.model.validate();
  const Network net = Network::build_meta(cfg.model);

  std::map<std::string, std::int64_t> groups;
  for (const auto& [name, e] : net.parameters().entries())
    if (e.kind == ParameterStore::Kind::kParameter) groups[module_group(name)] += e.value.numel();
  const std::int64_t total = count_parameters(net.parameters());
  std::printf("%s, %lld classes, x_channels %lld, dual_branch_stages %d, decoder_fusion %s\n\n",
              variant_name(cfg.model.variant).c_str(), static_cast<long long>(cfg.model.num_classes),
              static_cast<long long>(cfg.model.x_channels), cfg.model.dual_branch_stages,
              fusion_name(cfg.model.decoder_fusion).c_str());
  std::printf("%-20s %12s %8s\n", "module", "params", "share");
  for (const auto& [g, n] : groups)
    std::printf("%-20s %12lld %7.2f%%\n", g.c_str(), static_cast<long long>(n),
                100.0 * static_cast<double>(n) / static_cast<double>(total));
  std::printf("%-20s %12lld (%.2fM)\n\n", "total", static_cast<long long>(total), static_cast<double>(total) / 1e6);

  const FlopReport f = estimate_flops(cfg.model, h, w);
  const double value = a.macs ? static_cast<double>(f.total) / 2.0 : static_cast<double>(f.total);
  std::printf("%s at %lldx%lld: %.2fG\n", a.macs ? "MACs" : "FLOPs", static_cast<long long>(w),
              static_cast<long long>(h), value / 1e9);
  for (const auto& [op, n] : f.by_op)
    std::printf("  %-20s %.3fG\n", op.c_str(), (a.macs ? static_cast<double>(n) / 2.0 : static_cast<double>(n)) / 1e9);

  std::printf("\npooling table (%s), w x h\n", cli::pooling_name(cfg.model.pooling).c_str());
  for (int lvl = 1; lvl <= 5; ++lvl) {
    const PoolSize p = cfg.model.pooling.level(lvl);
    const bool used = lvl <= cfg.model.dual_branch_stages ||
                      (cfg.model.decoder_fusion == DecoderFusion::kCsafm && (lvl == 1 || lvl == 3 || lvl == 4));
    std::printf("  level %d  %3lld x %-3lld%s\n", lvl, static_cast<long long>(p.w), static_cast<long long>(p.h),
                used ? "" : "  (unused)");
  }
  std::printf("  context  %3lld x %-3lld\n", static_cast<long long>(cfg.model.pooling.context.w),
              static_cast<long long>(cfg.model.pooling.context.h));
  return 0;
}

struct GradcheckArgs {
  std::string module = "csafm";
  std::uint64_t seed = 1;
  double step = 1e-3;
  int params = 100;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const std::vector<std::string> modules =
      a.module == "all" ? std::vector<std::string>{"csafm", "context", "network"} : std::vector<std::string>{a.module};
  bool ok = true;
  for (const auto& m : modules) {
    GradcheckResult r;
    if (m == "csafm") {
      r = module_checks::csafm_gradcheck(a.seed);
    } else if (m == "context") {
      r = module_checks::context_gradcheck(a.seed);
    } else {
      GradcheckOptions opt;
      opt.step = a.step;
      auto c = module_checks::network_gradcheck(a.seed, Mode::kEval, a.params, 2, opt);
      std::printf("network: float64 reference forward differs by at most %.3g\n", c.forward_max_diff);
      r = c.result;
    }
    if (m != "network" && a.step != 1e-3) std::printf("%s: --step applies to the network check only\n", m.c_str());
    const GradcheckOptions tol;
    std::printf("%-8s entries %4zu  failures %3d  max relative error %.3e  tolerance %.0e  %s\n", m.c_str(),
                r.entries.size(), r.failures, r.max_error, tol.rel_tol, r.passed() ? "PASS" : "FAIL");
    for (const auto& e : r.entries)
      if (!e.passed)
        std::printf("  %s[%lld] analytic %.6g numeric %.6g error %.3e\n", e.name.c_str(),
                    static_cast<long long>(e.index), e.analytic, e.numeric, e.error);
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

struct AolpArgs {
  std::string i0, i45, i90, i135, out;
};

int cmd_aolp(const AolpArgs& a) {
  std::array<Tensor, 4> maps;
  const std::array<const std::string*, 4> paths{&a.i0, &a.i45, &a.i90, &a.i135};
  for (std::size_t i = 0; i < 4; ++i) {
    require_file(*paths[i], "intensity image");
    maps[i] = load_image(*paths[i]);
    if (maps[i].dim(0) != 1) throw CommandError(*paths[i] + ": expected a grayscale image");
  }
  save_image(a.out, scale_aolp(compute_aolp(maps[0], maps[1], maps[2], maps[3])));
  return 0;
}

struct InitArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_init(const InitArgs& a) {
  const cli::RunConfig cfg = load_config(a.config);
  const Network net = Network::build(cfg.model, a.seed_given ? a.seed : cfg.train.seed);
  save_checkpoint(net.parameters(), a.out);
  std::printf("%lld parameters written to %s\n", static_cast<long long>(count_parameters(net.parameters())),
              a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"CSFNet RGB-X segmentation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Segment one RGB-X pair");
  c_infer->add_option("--config", infer.config, "Run config file")->capture_default_str();
  c_infer->add_option("--rgb", infer.rgb, "Color image (PNG)")->required();
  c_infer->add_option("--x", infer.x, "Raw modality map (grayscale PNG)")->required();
  c_infer->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required();
  c_infer->add_option("--out-png", infer.out_png, "Colorized prediction")->capture_default_str();
  c_infer->add_option("--out-pgm", infer.out_pgm, "Class-index prediction")->capture_default_str();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train on synthetic or directory data");
  c_train->add_option("--config", train.config, "Run config file")->capture_default_str();
  auto* o_syn = c_train->add_flag("--synthetic", train.synthetic, "Use the synthetic RGB-D scenes");
  c_train->add_option("--data-dir", train.data_dir, "Directory with rgb/, x/ and labels/")->excludes(o_syn);
  c_train->add_option("--iters", train.iters, "Iterations (default: max_iters from the config, 200)")
      ->check(CLI::Range(1, 100000000));
  c_train->add_option("--save", train.save, "Checkpoint to write")->capture_default_str();
  c_train->add_option("--history", train.history, "CSV history (default: <save>.history.csv)");
  c_train->add_option("--init", train.init, "Start from this checkpoint");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Per-class IoU and mIoU on a labelled directory");
  c_eval->add_option("--config", ev.config, "Run config file")->capture_default_str();
  c_eval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  c_eval->add_option("--data-dir", ev.data_dir, "Directory with rgb/, x/ and labels/");
  c_eval->add_option("--pred-dir", ev.pred_dir, "Score saved predictions (<stem>.pgm/.png) instead of a model");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Batch-1 eval latency and FPS");
  c_bench->add_option("--config", bench.config, "Run config file")->capture_default_str();
  c_bench->add_option("--width", bench.width, "Input width")->capture_default_str();
  c_bench->add_option("--height", bench.height, "Input height")->capture_default_str();
  c_bench->add_option("--warmup", bench.warmup, "Untimed forwards")->check(CLI::Range(0, 100000))->capture_default_str();
  c_bench->add_option("--iters", bench.iters, "Timed forwards")->check(CLI::Range(1, 100000))->capture_default_str();
  c_bench->add_option("--csv", bench.csv, "Also write the report as key,value CSV");

  DescribeArgs desc;
  auto* c_desc = app.add_subcommand("describe", "Parameter table, analytic FLOPs and pooling table");
  c_desc->add_option("--config", desc.config, "Run config file")->capture_default_str();
  c_desc->add_option("--width", desc.width, "Input width (default: config)")->capture_default_str();
  c_desc->add_option("--height", desc.height, "Input height (default: config)")->capture_default_str();
  c_desc->add_flag("--macs", desc.macs, "Report multiply-accumulates instead of FLOPs (1 MAC = 2 FLOPs)");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient check of a module");
  c_gc->add_option("--module", gc.module, "csafm, context, network or all")
      ->check(CLI::IsMember({"csafm", "context", "network", "all"}))
      ->capture_default_str();
  c_gc->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  c_gc->add_option("--step", gc.step, "Finite-difference step (network)")->capture_default_str();
  c_gc->add_option("--params", gc.params, "Sampled parameter entries (network)")
      ->check(CLI::Range(1, 100000))
      ->capture_default_str();

  AolpArgs aolp;
  auto* c_aolp = app.add_subcommand("aolp", "Scaled angle of linear polarization as an 8-bit PNG");
  c_aolp->add_option("--i0", aolp.i0, "Intensity at 0 degrees")->required();
  c_aolp->add_option("--i45", aolp.i45, "Intensity at 45 degrees")->required();
  c_aolp->add_option("--i90", aolp.i90, "Intensity at 90 degrees")->required();
  c_aolp->add_option("--i135", aolp.i135, "Intensity at 135 degrees")->required();
  c_aolp->add_option("--out", aolp.out, "Output PNG")->required();

  InitArgs init;
  auto* c_init = app.add_subcommand("init", "Write a freshly initialised checkpoint");
  c_init->add_option("--config", init.config, "Run config file")->capture_default_str();
  auto* o_seed = c_init->add_option("--seed", init.seed, "Seed (default: config seed)");
  c_init->add_option("--out", init.out, "Checkpoint to write")->required();

  CLI11_PARSE(app, argc, argv);
  init.seed_given = o_seed->count() > 0;

  try {
    if (c_infer->parsed()) return cmd_infer(infer);
    if (c_train->parsed()) return cmd_train(train);
    if (c_eval->parsed()) return cmd_eval(ev);
    if (c_bench->parsed()) return cmd_bench(bench);
    if (c_desc->parsed()) return cmd_describe(desc);
    if (c_gc->parsed()) return cmd_gradcheck(gc);
    if (c_aolp->parsed()) return cmd_aolp(aolp);
    if (c_init->parsed()) return cmd_init(init);
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
