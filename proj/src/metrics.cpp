#include "csfnet/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace csfnet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1 || num_classes > 255)
    throw std::invalid_argument("confusion matrix: num_classes must be 1..255");
  counts_.assign(static_cast<std::size_t>(k_ * k_), 0);
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> label,
                                 std::uint8_t ignore) {
  if (pred.size() != label.size())
    throw ShapeError("confusion: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(label.size()) + " labels");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (label[i] == ignore) continue;
    if (label[i] >= k_)
      throw std::invalid_argument("confusion: label " + std::to_string(label[i]) + " out of range");
    if (pred[i] >= k_)
      throw std::invalid_argument("confusion: prediction " + std::to_string(pred[i]) + " out of range");
    ++counts_[static_cast<std::size_t>(label[i] * k_ + pred[i])];
  }
}

EvalReport make_report(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  EvalReport r;
  r.num_classes = k;
  r.confusion.assign(cm.counts().begin(), cm.counts().end());
  std::int64_t correct = 0, total = 0;
  double iou_sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::int64_t tp = cm.at(c, c);
    const std::int64_t uni = row + col - tp;
    correct += tp;
    total += row;
    if (uni == 0) {
      r.per_class_iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class_iou.push_back(iou);
    iou_sum += iou;
    ++present;
  }
  r.miou = present > 0 ? iou_sum / present : 0.0;
  r.pixel_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

std::vector<std::uint8_t> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4 || logits.dim(1) > 255)
    throw ShapeError("argmax: expected (N,K,H,W) with K <= 255, got " + shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const float* z = logits.data().data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n * hw));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < hw; ++i) {
      const float* zp = z + b * k * hw + i;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c)
        if (zp[c * hw] > zp[best * hw]) best = c;
      out[static_cast<std::size_t>(b * hw + i)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

EvalReport evaluate(const Network& net, std::span<const Sample> samples, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be positive");
  ConfusionMatrix cm(static_cast<int>(net.config().num_classes));
  NoGradGuard guard;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(samples.size() - start, static_cast<std::size_t>(batch_size));
    const SampleBatch b = make_batch(samples.subspan(start, count));
    const Tensor logits = net.forward(b.rgb, b.x, Mode::kEval);
    cm.accumulate(argmax_classes(logits), b.labels);
  }
  return make_report(cm);
}

std::int64_t count_parameters(const ParameterStore& store) { return store.parameter_count(); }

FlopReport estimate_flops(const ModelConfig& cfg, std::int64_t height, std::int64_t width) {
  ModelConfig c = cfg;
  c.height = height;
  c.width = width;
  const Network net = Network::build_meta(c);
  FlopCounter counter;
  {
    FlopScope scope(counter);
    NoGradGuard guard;
    net.forward(Tensor::meta({1, c.rgb_channels, height, width}), Tensor::meta({1, c.x_channels, height, width}),
                Mode::kEval);
  }
  return {counter.total, counter.by_op};
}

BenchReport benchmark(const std::function<void()>& fn, int warmup, int iters) {
  if (iters < 2) throw std::invalid_argument("benchmark: iters must be at least 2");
  if (warmup < 0) throw std::invalid_argument("benchmark: warmup must be non-negative");
  using Clock = std::chrono::steady_clock;
  BenchReport r;
  r.warmup_iters = warmup;
  r.timed_iters = iters;
  for (int i = 0; i < warmup; ++i) fn();
  for (int i = 0; i < iters; ++i) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    r.latencies_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  const auto& l = r.latencies_ms;
  r.mean_ms = std::accumulate(l.begin(), l.end(), 0.0) / iters;
  double ss = 0.0;
  for (double v : l) ss += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = std::sqrt(ss / (iters - 1));
  std::vector<double> sorted = l;
  std::sort(sorted.begin(), sorted.end());
  r.median_ms = iters % 2 ? sorted[iters / 2] : 0.5 * (sorted[iters / 2 - 1] + sorted[iters / 2]);
  r.fps = 1000.0 / r.mean_ms;
  return r;
}

BenchReport benchmark_fps(const Network& net, std::int64_t height, std::int64_t width, int warmup, int iters) {
  const auto& cfg = net.config();
  Tensor rgb = Tensor::zeros({1, cfg.rgb_channels, height, width});
  Tensor x = Tensor::zeros({1, cfg.x_channels, height, width});
  // Smooth deterministic pattern rather than constants.
  for (std::int64_t i = 0; i < rgb.numel(); ++i) rgb.data()[i] = 0.5f * std::sin(0.001f * static_cast<float>(i));
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = 0.5f * std::cos(0.0007f * static_cast<float>(i));
  NoGradGuard guard;
  BenchReport r = benchmark([&] { net.forward(rgb, x, Mode::kEval); }, warmup, iters);
  r.params = count_parameters(net.parameters());
  r.flops = estimate_flops(cfg, height, width).total;
  return r;
}

}  // namespace csfnet
