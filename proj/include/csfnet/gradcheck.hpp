#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csfnet/tensor.hpp"

namespace csfnet {

struct GradcheckOptions {
  double step = 1e-3;
  double rel_tol = 2e-2;
  // Entries with |analytic| + |numeric| below this are compared absolutely.
  double abs_floor = 1e-4;
};

/// Tensor entries to check.
struct GradTarget {
  std::string name;
  Tensor tensor;
  std::vector<std::int64_t> indices;
};

struct GradcheckEntry {
  std::string name;
  std::int64_t index = 0;
  double analytic = 0.0, numeric = 0.0, error = 0.0;
  bool passed = false;
};

struct GradcheckResult {
  std::vector<GradcheckEntry> entries;
  double max_error = 0.0;
  int failures = 0;
  bool passed() const { return failures == 0 && !entries.empty(); }
};

/// Scalar-loss problem. `loss` builds a differentiable (1)-shaped loss from
/// the current tensor values; `value` recomputes the same loss in double
/// precision without recording a graph (used for the central differences).
struct GradcheckProblem {
  std::function<Tensor()> loss;
  std::function<double()> value;
};

/// Error metric: |a - n| / max(|a|, |n|), or |a - n| when |a| + |n| is below
/// abs_floor. An entry passes when the error is at most rel_tol.
double gradcheck_error(double analytic, double numeric, const GradcheckOptions& opt);

/// Runs one backward for analytic gradients, then central differences on
/// every listed entry. Gradients of the targets are zeroed first.
GradcheckResult gradcheck(const GradcheckProblem& problem, std::vector<GradTarget> targets,
                          const GradcheckOptions& opt = {});

/// Double-precision sum(out * weights) for weighted-sum losses.
double weighted_sum(const Tensor& out, const Tensor& weights);

}  // namespace csfnet
