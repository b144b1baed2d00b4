#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csfnet/dataio.hpp"
#include "csfnet/network.hpp"

namespace csfnet {

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 0.9;
  int max_iters = 200;
  int batch_size = 4;
  std::uint64_t seed = 0;
  AugmentPolicy augment;
  Normalization normalization;

  void validate() const;
};

/// Mean over non-ignored pixels of -log softmax(logits)[label]; 0 (with zero
/// gradients) when every pixel is ignored. logits (N,K,H,W), labels N*H*W.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                          std::uint8_t ignore = kIgnoreLabel);
/// The same loss evaluated in double precision, without a graph.
double cross_entropy_value(const Tensor& logits, std::span<const std::uint8_t> labels,
                           std::uint8_t ignore = kIgnoreLabel);

/// base_lr * (1 - iter / max_iters)^power.
double poly_lr(int iter, const TrainConfig& cfg);

/// SGD with momentum: v = m*v + g + wd*p; p -= lr*v. Weight decay is not
/// applied to biases or batch-norm parameters. Parameters that received no
/// gradient (unused by the forward pass) are left untouched.
class Sgd {
 public:
  Sgd(ParameterStore& store, double momentum, double weight_decay);
  void step(double lr);
  static bool decays(const std::string& name);

 private:
  ParameterStore& store_;
  double momentum_, weight_decay_;
  std::map<std::string, std::vector<float>> velocity_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HistoryEntry {
  int iter = 0;
  double loss = 0.0;
  double lr = 0.0;
};

using IterationCallback = std::function<void(const HistoryEntry&)>;

/// Deterministic given cfg.seed. Each iteration draws a batch from a seeded
/// per-epoch shuffle, augments and normalises it, runs a train-mode forward,
/// back-propagates the loss and takes an SGD step at poly_lr(iter).
std::vector<HistoryEntry> train_loop(Network& net, std::span<const Sample> dataset,
                                     const TrainConfig& cfg, const IterationCallback& on_iter = {});

/// Mean loss over consecutive windows of `window` iterations.
std::vector<double> window_means(std::span<const HistoryEntry> history, int window);

}  // namespace csfnet
