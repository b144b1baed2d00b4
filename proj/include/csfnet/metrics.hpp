#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csfnet/dataio.hpp"
#include "csfnet/network.hpp"

namespace csfnet {

/// K x K counts; rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);
  int num_classes() const { return k_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::span<const std::int64_t> counts() const { return counts_; }

  /// Skips ignore pixels; rejects out-of-range predictions or labels.
  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> label,
                  std::uint8_t ignore = kIgnoreLabel);

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

struct EvalReport {
  std::vector<std::int64_t> confusion;
  int num_classes = 0;
  // NaN for classes absent from both prediction and ground truth.
  std::vector<double> per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
};

EvalReport make_report(const ConfusionMatrix& cm);

/// Per-pixel argmax over the class axis of (N,K,H,W) logits.
std::vector<std::uint8_t> argmax_classes(const Tensor& logits);

/// Eval-mode predictions over `samples` (already normalised), in batches.
EvalReport evaluate(const Network& net, std::span<const Sample> samples, int batch_size = 4);

std::int64_t count_parameters(const ParameterStore& store);

struct FlopReport {
  std::int64_t total = 0;
  std::vector<std::pair<std::string, std::int64_t>> by_op;
};

/// Analytic FLOPs of one batch-1 forward at H x W, counted by running the
/// network's own forward on shape-only tensors (1 MAC = 2 FLOPs).
FlopReport estimate_flops(const ModelConfig& cfg, std::int64_t height, std::int64_t width);

struct BenchReport {
  int warmup_iters = 0, timed_iters = 0;
  std::vector<double> latencies_ms;
  double mean_ms = 0.0, std_ms = 0.0, median_ms = 0.0;
  double fps = 0.0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

/// Times `fn` with a monotonic clock after `warmup` untimed calls.
BenchReport benchmark(const std::function<void()>& fn, int warmup, int iters);

/// Eval-mode, batch-1 forwards on fixed deterministic inputs.
BenchReport benchmark_fps(const Network& net, std::int64_t height, std::int64_t width, int warmup = 50,
                          int iters = 200);

}  // namespace csfnet
