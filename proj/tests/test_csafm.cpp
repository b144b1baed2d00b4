#include <random>

#include "csfnet/csafm.hpp"
#include "doctest.h"
#include "grad_support.hpp"
#include "oracles.hpp"

using namespace csfnet;
using oracle::random_tensor;

namespace {

struct Fixture {
  ParameterStore store;
  std::mt19937_64 rng{5};
  ModuleContext ctx{store, rng};
};

void zero_state(ParameterStore& store) {
  for (auto& [name, e] : store.entries()) {
    if (name.ends_with("running_var") || name.ends_with("bn.weight")) continue;
    for (float& v : store.at(name).data()) v = 0.0f;
  }
}

}  // namespace

TEST_CASE("cosine similarity of identical and antipodal maps") {
  std::mt19937_64 rng(1);
  Tensor f = oracle::random_away_from_zero({1, 4, 8, 8}, rng);
  // Pooled maps of random data could come close to zero; offset them.
  f = ops::affine(f, 1.0f, 2.0f);
  Tensor s = channel_cosine_similarity(f, f, 2, 2);
  CHECK(s.shape() == Shape{1, 4});
  for (float v : oracle::values(s)) CHECK(std::abs(v - 1.0f) <= 1e-6);
  Tensor neg = ops::affine(f, -1.0f, 0.0f);
  for (float v : oracle::values(channel_cosine_similarity(f, neg, 2, 2))) CHECK(std::abs(v + 1.0f) <= 1e-6);
}

TEST_CASE("cosine similarity matches the scalar oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor fx = random_tensor({2, 4, 8, 8}, rng), fy = random_tensor({2, 4, 8, 8}, rng);
    Tensor s = channel_cosine_similarity(fx, fy, 2, 2);
    const auto ref = oracle::cosine(fx, fy, 2, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(s.at(i) - ref[i]) < 1e-6);
  }
}

TEST_CASE("cosine similarity properties") {
  std::mt19937_64 rng(3);
  Tensor fx = random_tensor({1, 5, 6, 6}, rng), fy = random_tensor({1, 5, 6, 6}, rng);
  Tensor a = channel_cosine_similarity(fx, fy, 3, 2), b = channel_cosine_similarity(fy, fx, 3, 2);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  for (float v : oracle::values(a)) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  // Scaling channel 2 of both inputs by 3 leaves its similarity unchanged.
  Tensor sx = fx.clone(), sy = fy.clone();
  for (int i = 2 * 36; i < 3 * 36; ++i) {
    sx.data()[i] *= 3.0f;
    sy.data()[i] *= 3.0f;
  }
  Tensor c = channel_cosine_similarity(sx, sy, 3, 2);
  CHECK(c.at(2) == doctest::Approx(a.at(2)).epsilon(1e-6));

  Tensor zero = Tensor::zeros({1, 5, 6, 6});
  for (float v : oracle::values(channel_cosine_similarity(zero, fy, 3, 2))) CHECK(v == 0.0f);
  CHECK_THROWS_AS(channel_cosine_similarity(fx, Tensor::zeros({1, 5, 6, 5}), 3, 2), ShapeError);
}

TEST_CASE("attention weights") {
  Fixture f;
  Csafm m(f.ctx, "m", CsafmConfig::make(4, 2, 2));
  CHECK(m.config().hidden_channels == 8);
  zero_state(f.store);
  Tensor s = Tensor::from_data({1, 4}, {0.3f, -0.2f, 1.0f, 0.0f});
  for (float v : oracle::values(m.weights(s, Mode::kEval))) CHECK(v == 0.5f);

  Fixture g;
  Csafm r(g.ctx, "r", CsafmConfig::make(6, 2, 2));
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t)
    for (float v : oracle::values(r.weights(random_tensor({3, 6}, rng), Mode::kTrain))) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
}

TEST_CASE("attention weights match a scalar pipeline on a hand-set state") {
  Fixture f;
  CsafmConfig cfg{2, 1, 1, 8};
  Csafm m(f.ctx, "m", cfg);
  auto& st = f.store;
  std::mt19937_64 rng(6);
  for (auto& [name, e] : st.entries()) {
    auto v = st.at(name).data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1f * float((i * 7 + name.size()) % 11) - 0.5f;
  }
  for (float& v : st.at("m.bn.running_var").data()) v = 0.5f + std::abs(v);
  const std::vector<float> sv{0.6f, -0.3f};
  Tensor w = m.weights(Tensor::from_data({1, 2}, sv), Mode::kEval);

  auto get = [&](const std::string& n) { return st.at(n); };
  for (int c = 0; c < 2; ++c) {
    double out = get("m.conv2.bias").at(c);
    for (int h = 0; h < 8; ++h) {
      double a = get("m.conv1.bias").at(h);
      for (int k = 0; k < 2; ++k) a += double(get("m.conv1.weight").at(h * 2 + k)) * sv[k];
      a = (a - get("m.bn.running_mean").at(h)) / std::sqrt(double(get("m.bn.running_var").at(h)) + 1e-5) *
              get("m.bn.weight").at(h) +
          get("m.bn.bias").at(h);
      a = std::max(a, 0.0);
      out += double(get("m.conv2.weight").at(c * 8 + h)) * a;
    }
    CHECK(w.at(c) == doctest::Approx(oracle::sigmoid(out)).epsilon(1e-6));
  }
}

TEST_CASE("rectify and fuse identities") {
  std::mt19937_64 rng(7);
  Tensor fx = random_tensor({1, 3, 4, 4}, rng), fy = random_tensor({1, 3, 4, 4}, rng);
  Tensor w0 = Tensor::zeros({3}), w1 = Tensor::full({3}, 1.0f);

  auto [ax, ay] = rectify(fx, fy, w0);
  CHECK(oracle::max_abs_diff(ax, fx) == 0.0);
  CHECK(oracle::max_abs_diff(ay, oracle::add(fy, fx)) <= 1e-6);
  auto [bx, by] = rectify(fx, fy, w1);
  CHECK(oracle::max_abs_diff(bx, oracle::add(fx, fy)) <= 1e-6);
  CHECK(oracle::max_abs_diff(by, fy) == 0.0);

  CHECK(oracle::max_abs_diff(fuse(fx, fy, w1), fy) == 0.0);
  Tensor wr = random_tensor({3}, rng, 0.0f, 1.0f);
  CHECK(oracle::max_abs_diff(fuse(fx, fx, wr), fx) <= 1e-6);
}

TEST_CASE("rectify and fuse match per-element loops") {
  std::mt19937_64 rng(8);
  Tensor fx = random_tensor({2, 3, 4, 5}, rng), fy = random_tensor({2, 3, 4, 5}, rng);
  Tensor w = random_tensor({2, 3, 1, 1}, rng, 0.0f, 1.0f);
  auto [rx, ry] = rectify(fx, fy, w);
  Tensor fm = fuse(fx, fy, w);
  for (std::int64_t i = 0; i < fx.numel(); ++i) {
    const double wi = w.at(i / 20);
    CHECK(std::abs(rx.at(i) - (fx.at(i) + fy.at(i) * wi)) < 1e-6);
    CHECK(std::abs(ry.at(i) - (fy.at(i) + fx.at(i) * (1 - wi))) < 1e-6);
    CHECK(std::abs(fm.at(i) - (fy.at(i) * wi + fx.at(i) * (1 - wi))) < 1e-6);
  }
}

TEST_CASE("module forward on equal inputs with a zero state") {
  Fixture f;
  Csafm m(f.ctx, "m", CsafmConfig::make(3, 2, 2));
  zero_state(f.store);
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  auto out = m.forward(x, x, Mode::kEval, Csafm::Outputs::kRectifiedAndFused);
  CHECK(out.fused.shape() == x.shape());
  for (float v : oracle::values(out.weights)) CHECK(v == 0.5f);
  CHECK(oracle::max_abs_diff(out.fused, x) <= 1e-6);
  CHECK(oracle::max_abs_diff(out.rect_x, ops::affine(x, 1.5f, 0.0f)) <= 1e-6);
  CHECK(oracle::max_abs_diff(out.rect_y, ops::affine(x, 1.5f, 0.0f)) <= 1e-6);

  auto fused_only = m.forward(x, x, Mode::kEval, Csafm::Outputs::kFusedOnly);
  CHECK_FALSE(fused_only.rect_x.defined());
}

TEST_CASE("full module gradient check") {
  for (Mode mode : {Mode::kEval, Mode::kTrain}) {
    Fixture f;
    Csafm m(f.ctx, "m", CsafmConfig::make(4, 2, 2));
    std::mt19937_64 rng(10);
    const bool train = mode == Mode::kTrain;
    const std::int64_t n = train ? 4 : 1;
    std::vector<Tensor> inputs{random_tensor({n, 4, 4, 4}, rng), random_tensor({n, 4, 4, 4}, rng)};
    auto r = testing_support::check_grad(
        [&](const std::vector<Tensor>& in) {
          auto o = m.forward(in[0], in[1], mode, Csafm::Outputs::kRectifiedAndFused);
          const std::array<Tensor, 3> all{o.rect_x, o.rect_y, o.fused};
          return ops::concat_channels(all);
        },
        inputs, rng, 32, &f.store,
        [&](const std::vector<Tensor>& in) {
          return oracle64::csafm(oracle64::from(in[0]), oracle64::from(in[1]), f.store, "m", 2, 2, train);
        });
    CHECK(r.passed());
    if (!r.passed())
      for (const auto& e : r.entries)
        if (!e.passed) MESSAGE(e.name << "[" << e.index << "] a=" << e.analytic << " n=" << e.numeric);
  }
}
