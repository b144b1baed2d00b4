#include "csfnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace csfnet {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr: must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum: must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay: must be non-negative");
  if (power <= 0.0) throw std::invalid_argument("power: must be positive");
  if (max_iters < 1) throw std::invalid_argument("max_iters: must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size: must be at least 1");
}

namespace {

void check_labels(const Tensor& logits, std::span<const std::uint8_t> labels, std::uint8_t ignore) {
  if (logits.rank() != 4) throw ShapeError("cross_entropy: logits must be (N,K,H,W), got " + shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (static_cast<std::int64_t>(labels.size()) != n * hw)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  for (auto v : labels)
    if (v != ignore && v >= k)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(v) + " out of range for " +
                                  std::to_string(k) + " classes");
}

}  // namespace

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::uint8_t> labels, std::uint8_t ignore) {
  check_labels(logits, labels, ignore);
  const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const float* z = logits.data().data();
  std::vector<double> pixel_loss(static_cast<std::size_t>(n * hw), 0.0);
  std::int64_t count = 0;
  for (auto v : labels) count += v != ignore;

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n * hw; ++p) {
    const std::uint8_t y = labels[static_cast<std::size_t>(p)];
    if (y == ignore) continue;
    const std::int64_t b = p / hw, i = p % hw;
    const float* zp = z + b * k * hw + i;
    double mx = zp[0];
    for (std::int64_t c = 1; c < k; ++c) mx = std::max<double>(mx, zp[c * hw]);
    double s = 0.0;
    for (std::int64_t c = 0; c < k; ++c) s += std::exp(zp[c * hw] - mx);
    pixel_loss[static_cast<std::size_t>(p)] = mx + std::log(s) - zp[y * hw];
  }
  double total = 0.0;
  for (double v : pixel_loss) total += v;
  const double mean = count > 0 ? total / static_cast<double>(count) : 0.0;
  Tensor out = Tensor::from_data({1}, {static_cast<float>(mean)});

  if (count > 0 && needs_grad({&logits})) {
    std::vector<std::uint8_t> y(labels.begin(), labels.end());
    attach_grad(out, "cross_entropy", {logits}, [logits, y, n, k, hw, count, ignore](const TensorImpl& o) {
      const float* zv = logits.impl()->data.data();
      float* g = logits.impl()->grad_buffer().data();
      const double scale = o.grad[0] / static_cast<double>(count);
#pragma omp parallel for schedule(static)
      for (std::int64_t p = 0; p < n * hw; ++p) {
        const std::uint8_t label = y[static_cast<std::size_t>(p)];
        if (label == ignore) continue;
        const std::int64_t b = p / hw, i = p % hw;
        const float* zp = zv + b * k * hw + i;
        float* gp = g + b * k * hw + i;
        double mx = zp[0];
        for (std::int64_t c = 1; c < k; ++c) mx = std::max<double>(mx, zp[c * hw]);
        double s = 0.0;
        for (std::int64_t c = 0; c < k; ++c) s += std::exp(zp[c * hw] - mx);
        for (std::int64_t c = 0; c < k; ++c) {
          const double prob = std::exp(zp[c * hw] - mx) / s;
          gp[c * hw] += static_cast<float>(scale * (prob - (c == label ? 1.0 : 0.0)));
        }
      }
    });
  }
  return out;
}

double cross_entropy_value(const Tensor& logits, std::span<const std::uint8_t> labels, std::uint8_t ignore) {
  check_labels(logits, labels, ignore);
  const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const float* z = logits.data().data();
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < n * hw; ++p) {
    const std::uint8_t y = labels[static_cast<std::size_t>(p)];
    if (y == ignore) continue;
    const float* zp = z + (p / hw) * k * hw + p % hw;
    double mx = zp[0];
    for (std::int64_t c = 1; c < k; ++c) mx = std::max<double>(mx, zp[c * hw]);
    double s = 0.0;
    for (std::int64_t c = 0; c < k; ++c) s += std::exp(zp[c * hw] - mx);
    total += mx + std::log(s) - zp[y * hw];
    ++count;
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

double poly_lr(int iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.max_iters)
    throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                                std::to_string(cfg.max_iters) + "]");
  return cfg.base_lr * std::pow(1.0 - static_cast<double>(iter) / cfg.max_iters, cfg.power);
}

Sgd::Sgd(ParameterStore& store, double momentum, double weight_decay)
    : store_(store), momentum_(momentum), weight_decay_(weight_decay) {}

bool Sgd::decays(const std::string& name) {
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !ends_with(".bias") && !ends_with(".bn.weight");
}

void Sgd::step(double lr) {
  bool any = false;
  for (auto& [name, entry] : store_.entries()) {
    if (entry.kind != ParameterStore::Kind::kParameter) continue;
    Tensor& p = store_.at(name);
    if (!p.has_grad()) continue;
    any = true;
    auto& v = velocity_[name];
    if (v.empty()) v.assign(static_cast<std::size_t>(p.numel()), 0.0f);
    const double wd = decays(name) ? weight_decay_ : 0.0;
    auto g = p.grad();
    auto x = p.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<float>(momentum_ * v[i] + g[i] + wd * x[i]);
      x[i] = static_cast<float>(x[i] - lr * v[i]);
    }
  }
  if (!any) throw std::logic_error("sgd_step: no parameter has a gradient; run backward first");
}

std::vector<HistoryEntry> train_loop(Network& net, std::span<const Sample> dataset, const TrainConfig& cfg,
                                     const IterationCallback& on_iter) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_loop: dataset is empty");
  std::mt19937_64 rng(cfg.seed);
  Sgd sgd(net.parameters(), cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  std::vector<HistoryEntry> history;

  for (int it = 0; it < cfg.max_iters; ++it) {
    std::vector<Sample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      Sample s = augment(dataset[order[cursor++]], rng, cfg.augment);
      normalize_sample(s, cfg.normalization);
      batch.push_back(std::move(s));
    }
    const SampleBatch sb = make_batch(batch);
    net.parameters().zero_grad();
    const Tensor logits = net.forward(sb.rgb, sb.x, Mode::kTrain);
    const Tensor loss = cross_entropy_loss(logits, sb.labels);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw TrainingDiverged("training diverged: loss is " + std::to_string(value) + " at iteration " +
                             std::to_string(it));
    backward(loss);
    const double lr = poly_lr(it, cfg);
    sgd.step(lr);
    history.push_back({it, value, lr});
    if (on_iter) on_iter(history.back());
  }
  return history;
}

std::vector<double> window_means(std::span<const HistoryEntry> history, int window) {
  if (window < 1) throw std::invalid_argument("window_means: window must be positive");
  std::vector<double> means;
  for (std::size_t start = 0; start + static_cast<std::size_t>(window) <= history.size(); start += window) {
    double s = 0.0;
    for (int i = 0; i < window; ++i) s += history[start + i].loss;
    means.push_back(s / window);
  }
  return means;
}

}  // namespace csfnet
