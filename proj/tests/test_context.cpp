#include <random>

#include "csfnet/context.hpp"
#include "doctest.h"
#include "grad_support.hpp"
#include "oracles.hpp"

using namespace csfnet;
using oracle::random_tensor;

namespace {

// Non-trivial running statistics and biases so eval-mode BN is not the identity.
void randomize_state(ParameterStore& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(-0.3f, 0.3f), pos(0.5f, 1.5f);
  for (auto& [name, e] : store.entries()) {
    if (name.ends_with("running_var") || name.ends_with("bn.weight")) {
      for (float& v : store.at(name).data()) v = pos(rng);
    } else if (!name.ends_with("conv.weight") && !name.ends_with("project.weight")) {
      for (float& v : store.at(name).data()) v = d(rng);
    }
  }
}

}  // namespace

TEST_CASE("context module output shape at Cityscapes scale") {
  ParameterStore store;
  std::mt19937_64 rng(1);
  ModuleContext ctx{store, rng, true};
  ContextModule m(ctx, "context", {1024, 8, 4});
  Tensor y = m.forward(Tensor::meta({1, 1024, 16, 32}), Mode::kEval);
  CHECK(y.shape() == Shape{1, 32, 16, 32});
}

TEST_CASE("context module rejects widths not divisible by 32") {
  ParameterStore store;
  std::mt19937_64 rng(1);
  ModuleContext ctx{store, rng};
  CHECK_THROWS_AS(ContextModule(ctx, "c", {48, 2, 2}), std::invalid_argument);
}

TEST_CASE("zero input through a zero-bias module gives zero output") {
  ParameterStore store;
  std::mt19937_64 rng(2);
  ModuleContext ctx{store, rng};
  ContextModule m(ctx, "c", {64, 2, 2});
  Tensor y = m.forward(Tensor::zeros({1, 64, 4, 4}), Mode::kEval);
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("context module matches the scalar pipeline") {
  std::mt19937_64 rng(3);
  for (auto [ph, pw, h, w] : {std::array<int, 4>{2, 2, 4, 4}, {3, 2, 5, 6}, {1, 1, 3, 3}, {4, 4, 4, 4}}) {
    ParameterStore store;
    ModuleContext ctx{store, rng};
    ContextModule m(ctx, "c", {32, pw, ph});
    randomize_state(store, rng);
    Tensor x = random_tensor({1, 32, h, w}, rng);
    Tensor y = m.forward(x, Mode::kEval);
    CHECK(y.shape() == Shape{1, 1, h, w});
    CHECK(oracle::max_abs_diff(y, oracle::context_module(x, store, "c", ph, pw)) < 1e-4);
  }
}

TEST_CASE("branch sum is order independent") {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor({1, 2, 3, 3}, rng), b = random_tensor({1, 2, 3, 3}, rng);
  Tensor ab = ops::add(a, b), ba = ops::add(b, a);
  CHECK(std::equal(ab.data().begin(), ab.data().end(), ba.data().begin()));
}

TEST_CASE("context module gradient check on a 4x4 instance") {
  for (Mode mode : {Mode::kEval, Mode::kTrain}) {
    ParameterStore store;
    std::mt19937_64 rng(5);
    ModuleContext ctx{store, rng};
    ContextModule m(ctx, "c", {32, 2, 2});
    randomize_state(store, rng);
    const bool train = mode == Mode::kTrain;
    auto r = testing_support::check_grad(
        [&](const std::vector<Tensor>& in) { return m.forward(in[0], mode); }, {random_tensor({2, 32, 4, 4}, rng)},
        rng, 16, &store,
        [&](const std::vector<Tensor>& in) {
          return oracle64::context_module(oracle64::from(in[0]), store, "c", 2, 2, train);
        });
    CHECK(r.passed());
    if (!r.passed())
      for (const auto& e : r.entries)
        if (!e.passed) MESSAGE(e.name << "[" << e.index << "] a=" << e.analytic << " n=" << e.numeric);
  }
}
