#include "csfnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace csfnet {

double gradcheck_error(double analytic, double numeric, const GradcheckOptions& opt) {
  const double diff = std::abs(analytic - numeric);
  if (std::abs(analytic) + std::abs(numeric) < opt.abs_floor) return diff;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

GradcheckResult gradcheck(const GradcheckProblem& problem, std::vector<GradTarget> targets,
                          const GradcheckOptions& opt) {
  for (auto& t : targets) {
    if (!t.tensor.requires_grad()) throw std::invalid_argument("gradcheck: " + t.name + " does not require grad");
    t.tensor.zero_grad();
  }
  const Tensor loss = problem.loss();
  backward(loss);

  GradcheckResult result;
  for (auto& t : targets) {
    auto values = t.tensor.data();
    for (std::int64_t idx : t.indices) {
      if (idx < 0 || idx >= t.tensor.numel())
        throw std::out_of_range("gradcheck: index " + std::to_string(idx) + " outside " + t.name);
      GradcheckEntry e;
      e.name = t.name;
      e.index = idx;
      e.analytic = t.tensor.has_grad() ? t.tensor.grad()[idx] : 0.0;
      const float original = values[idx];
      const float up = static_cast<float>(original + opt.step);
      const float down = static_cast<float>(original - opt.step);
      values[idx] = up;
      const double f_up = problem.value();
      values[idx] = down;
      const double f_down = problem.value();
      values[idx] = original;
      e.numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      e.error = gradcheck_error(e.analytic, e.numeric, opt);
      e.passed = e.error <= opt.rel_tol;
      result.max_error = std::max(result.max_error, e.error);
      result.failures += e.passed ? 0 : 1;
      result.entries.push_back(e);
    }
  }
  return result;
}

double weighted_sum(const Tensor& out, const Tensor& weights) {
  if (out.shape() != weights.shape())
    throw ShapeError("weighted_sum: shapes differ: " + shape_str(out.shape()) + " vs " + shape_str(weights.shape()));
  double s = 0.0;
  auto a = out.data();
  auto w = weights.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * w[i];
  return s;
}

}  // namespace csfnet
