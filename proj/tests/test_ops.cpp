#include <array>
#include <cmath>
#include <random>

#include "csfnet/csafm.hpp"
#include "csfnet/kernels.hpp"
#include "csfnet/ops.hpp"
#include "csfnet/trainer.hpp"
#include "doctest.h"
#include "grad_support.hpp"
#include "oracles.hpp"

using namespace csfnet;
using oracle::max_abs_diff;
using oracle::random_tensor;
using testing_support::check_grad;

namespace {
Tensor undefined;
}

TEST_CASE("conv2d worked examples") {
  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor two = Tensor::full({1, 1, 1, 1}, 2.0f);
  Tensor y = ops::conv2d(ones, two, undefined);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (float v : oracle::values(y)) CHECK(v == 2.0f);

  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
  Tensor z = ops::conv2d(x, w, undefined);
  CHECK(z.shape() == Shape{1, 1, 1, 1});
  CHECK(z.at(0) == 10.0f);
}

TEST_CASE("conv2d strided padded case matches the loop oracle") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tensor y = ops::conv2d(x, w, undefined, {2, 2}, ops::Padding2d::uniform(1));
  CHECK(y.shape() == Shape{2, 4, 4, 4});
  CHECK(max_abs_diff(y, oracle::conv2d(x, w, nullptr, 2, 2, 1, 1, 1, 1)) < 1e-5);
}

TEST_CASE("conv2d agrees with the oracle on 50 random configurations") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> small(1, 4), pad(0, 2), stride(1, 3), spatial(4, 11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = small(rng) % 2 + 1, cin = small(rng), cout = small(rng);
    const int kh = small(rng), kw = small(rng), sh = stride(rng), sw = stride(rng);
    const ops::Padding2d p{pad(rng), pad(rng), pad(rng), pad(rng)};
    const int h = spatial(rng), wd = spatial(rng);
    Tensor x = random_tensor({n, cin, h, wd}, rng);
    Tensor w = random_tensor({cout, cin, kh, kw}, rng);
    Tensor b = random_tensor({cout}, rng);
    Tensor y = ops::conv2d(x, w, b, {sh, sw}, p);
    Tensor ref = oracle::conv2d(x, w, &b, sh, sw, p.top, p.bottom, p.left, p.right);
    REQUIRE(y.shape() == ref.shape());
    CHECK(max_abs_diff(y, ref) < 1e-4);
  }
}

TEST_CASE("conv2d rejects bad shapes with a named dimension") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  CHECK_THROWS_WITH_AS(ops::conv2d(x, Tensor::zeros({2, 2, 3, 3}), undefined), doctest::Contains("channel"),
                       ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({2, 3, 5, 5}), undefined), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("conv2d output does not depend on the thread count") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 16, 20, 20}, rng);
  Tensor w = random_tensor({24, 16, 3, 3}, rng);
  set_num_threads(1);
  Tensor a = ops::conv2d(x, w, undefined, {1, 1}, ops::Padding2d::uniform(1));
  set_num_threads(4);
  Tensor b = ops::conv2d(x, w, undefined, {1, 1}, ops::Padding2d::uniform(1));
  set_num_threads(1);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("batchnorm2d eval and train examples") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor mean = Tensor::zeros({3}), var = Tensor::full({3}, 1.0f);
  Tensor gamma = Tensor::full({3}, 1.0f), beta = Tensor::zeros({3});
  Tensor y = ops::batchnorm2d(x, gamma, beta, mean, var, Mode::kEval);
  CHECK(max_abs_diff(x, y) < 1e-4);

  Tensor zero_gamma = Tensor::zeros({3}), five = Tensor::full({3}, 5.0f);
  Tensor c = ops::batchnorm2d(x, zero_gamma, five, mean, var, Mode::kEval);
  for (float v : oracle::values(c)) CHECK(v == 5.0f);

  Tensor t = Tensor::from_data({1, 1, 1, 4}, {1, 2, 3, 4});
  Tensor rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0f);
  Tensor g1 = Tensor::full({1}, 1.0f), b0 = Tensor::zeros({1});
  Tensor n = ops::batchnorm2d(t, g1, b0, rm, rv, Mode::kTrain, 0.1f, 0.0f);
  const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 4.0);
  for (int i = 0; i < 4; ++i) CHECK(n.at(i) == doctest::Approx((i + 1 - 2.5) / sd).epsilon(1e-6));
  // Running buffers move toward the batch statistics (unbiased variance).
  CHECK(rm.at(0) == doctest::Approx(0.25));
  CHECK(rv.at(0) == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
}

TEST_CASE("batchnorm2d rejects mismatched channel vectors") {
  Tensor x = Tensor::zeros({1, 3, 2, 2});
  Tensor v2 = Tensor::zeros({2}), v3 = Tensor::zeros({3});
  CHECK_THROWS_AS(ops::batchnorm2d(x, v2, v3, v3, v3, Mode::kEval), ShapeError);
}

TEST_CASE("relu and sigmoid") {
  Tensor r = ops::relu(Tensor::from_data({3}, {-1, 0, 2}));
  CHECK(r.at(0) == 0.0f);
  CHECK(r.at(1) == 0.0f);
  CHECK(r.at(2) == 2.0f);
  CHECK(ops::sigmoid(Tensor::from_data({1}, {0})).at(0) == 0.5f);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({64}, rng, -8.0f, 8.0f);
  Tensor s = ops::sigmoid(x);
  for (int i = 0; i < 64; ++i) {
    CHECK(std::abs(s.at(i) - oracle::sigmoid(x.at(i))) < 1e-6);
    CHECK(s.at(i) > 0.0f);
    CHECK(s.at(i) < 1.0f);
  }
}

TEST_CASE("adaptive_avg_pool2d") {
  Tensor c = Tensor::full({1, 2, 7, 5}, 3.5f);
  Tensor pc = ops::adaptive_avg_pool2d(c, 3, 2);
  for (float v : oracle::values(pc)) CHECK(v == doctest::Approx(3.5f));

  Tensor g = ops::adaptive_avg_pool2d(Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4}), 1, 1);
  CHECK(g.at(0) == 2.5f);

  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 3, 7, 5}, rng);
  CHECK(max_abs_diff(ops::adaptive_avg_pool2d(x, 2, 2), oracle::adaptive_avg_pool(x, 2, 2)) < 1e-6);

  Tensor same = ops::adaptive_avg_pool2d(x, 7, 5);
  CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));

  CHECK_THROWS_AS(ops::adaptive_avg_pool2d(x, 0, 2), ShapeError);
  CHECK_THROWS_AS(ops::adaptive_avg_pool2d(x, 8, 2), ShapeError);
}

TEST_CASE("avg_pool2d counts padding in the divisor") {
  Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
  Tensor y = ops::avg_pool2d(x, 3, 2, 1);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.at(0) == doctest::Approx(4.0 / 9.0));
  CHECK(y.at(3) == doctest::Approx(1.0));
}

TEST_CASE("bilinear_resize") {
  Tensor c = Tensor::full({1, 2, 3, 5}, -1.25f);
  for (float v : oracle::values(ops::bilinear_resize(c, 7, 4))) CHECK(v == doctest::Approx(-1.25f));

  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 3, 5, 6}, rng);
  Tensor same = ops::bilinear_resize(x, 5, 6);
  CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));

  Tensor small = Tensor::from_data({1, 1, 2, 2}, {0, 1, 2, 3});
  CHECK(max_abs_diff(ops::bilinear_resize(small, 4, 4), oracle::bilinear(small, 4, 4)) < 1e-6);
  CHECK(max_abs_diff(ops::bilinear_resize(x, 11, 3), oracle::bilinear(x, 11, 3)) < 1e-6);
  CHECK_THROWS_AS(ops::bilinear_resize(x, 0, 3), ShapeError);
}

TEST_CASE("elementwise ops and channel broadcast") {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor({2, 3, 2, 2}, rng);
  Tensor z = ops::add(a, Tensor::zeros(a.shape()));
  CHECK(std::equal(z.data().begin(), z.data().end(), a.data().begin()));

  Tensor m = ops::mul(Tensor::full({1, 2, 2, 2}, 1.0f), Tensor::from_data({2}, {2, 3}));
  for (int i = 0; i < 4; ++i) CHECK(m.at(i) == 2.0f);
  for (int i = 4; i < 8; ++i) CHECK(m.at(i) == 3.0f);

  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(ops::mul(a, Tensor::zeros({3, 3, 1, 1})), ShapeError);
}

TEST_CASE("broadcast mul gradient matches an explicit-reduction oracle") {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({2, 3, 4, 5}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor r = random_tensor({2, 3, 4, 5}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(ops::sum(ops::mul(ops::mul(a, b), r)));
  for (int c = 0; c < 3; ++c) {
    double expect = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 20; ++i) expect += double(a.at((n * 3 + c) * 20 + i)) * r.at((n * 3 + c) * 20 + i);
    CHECK(b.grad()[c] == doctest::Approx(expect).epsilon(1e-5));
  }
  for (int i = 0; i < a.numel(); ++i) CHECK(a.grad()[i] == doctest::Approx(b.at((i / 20) % 3) * r.at(i)));
}

TEST_CASE("concat, split and reshape") {
  Tensor a = Tensor::zeros({1, 2, 2, 2}), b = Tensor::zeros({1, 3, 2, 2});
  const std::array<Tensor, 2> parts{a, b};
  CHECK(ops::concat_channels(parts).shape() == Shape{1, 5, 2, 2});

  std::mt19937_64 rng(10);
  Tensor x = random_tensor({1, 4, 2, 3}, rng);
  Tensor r = ops::reshape(x, {4, 6});
  CHECK(r.shape() == Shape{4, 6});
  CHECK(std::equal(r.data().begin(), r.data().end(), x.data().begin()));
  CHECK_THROWS_AS(ops::reshape(x, {5, 5}), ShapeError);

  Tensor p = random_tensor({2, 2, 3, 3}, rng), q = random_tensor({2, 5, 3, 3}, rng);
  const std::array<Tensor, 2> pq{p, q};
  Tensor cat = ops::concat_channels(pq);
  const std::array<std::int64_t, 2> sizes{2, 5};
  auto back = ops::split_channels(cat, sizes);
  CHECK(std::equal(back[0].data().begin(), back[0].data().end(), p.data().begin()));
  CHECK(std::equal(back[1].data().begin(), back[1].data().end(), q.data().begin()));

  const std::array<Tensor, 2> bad{p, random_tensor({2, 1, 4, 3}, rng)};
  CHECK_THROWS_AS(ops::concat_channels(bad), ShapeError);
}

TEST_CASE("meta tensors propagate shapes and count operations") {
  FlopCounter counter;
  {
    FlopScope scope(counter);
    Tensor y = ops::conv2d(Tensor::meta({1, 16, 8, 8}), Tensor::meta({32, 16, 3, 3}), Tensor::meta({32}), {1, 1},
                           ops::Padding2d::uniform(1));
    CHECK(y.is_meta());
    CHECK(y.shape() == Shape{1, 32, 8, 8});
  }
  CHECK(counter.total == 2 * 32 * 16 * 9 * 64);
}

// ---- finite-difference checks for every differentiable op ----

TEST_CASE("gradcheck: conv2d") {
  std::mt19937_64 rng(20);
  auto r = check_grad(
      [](const std::vector<Tensor>& in) { return ops::conv2d(in[0], in[1], in[2], {2, 1}, {1, 0, 2, 1}); },
      {random_tensor({2, 3, 6, 5}, rng), random_tensor({4, 3, 3, 2}, rng), random_tensor({4}, rng)}, rng);
  CHECK(r.passed());
}

TEST_CASE("gradcheck: batchnorm2d in both modes") {
  std::mt19937_64 rng(21);
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    Tensor rm = random_tensor({3}, rng), rv = random_tensor({3}, rng, 0.5f, 2.0f);
    auto r = check_grad(
        [&](const std::vector<Tensor>& in) { return ops::batchnorm2d(in[0], in[1], in[2], rm, rv, mode); },
        {random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)}, rng);
    CHECK(r.passed());
  }
}

TEST_CASE("gradcheck: relu, sigmoid, affine") {
  std::mt19937_64 rng(22);
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::relu(in[0]); },
                   {oracle::random_away_from_zero({2, 2, 3, 3}, rng)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::sigmoid(in[0]); },
                   {random_tensor({2, 2, 3, 3}, rng, -3, 3)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::affine(in[0], -1.5f, 0.25f); },
                   {random_tensor({7}, rng)}, rng)
            .passed());
}

TEST_CASE("gradcheck: pooling and resize") {
  std::mt19937_64 rng(23);
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::adaptive_avg_pool2d(in[0], 3, 2); },
                   {random_tensor({2, 2, 7, 5}, rng)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::avg_pool2d(in[0], 3, 2, 1); },
                   {random_tensor({1, 2, 6, 7}, rng)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::bilinear_resize(in[0], 9, 4); },
                   {random_tensor({1, 2, 4, 6}, rng)}, rng)
            .passed());
}

TEST_CASE("gradcheck: add and mul with every broadcast form") {
  std::mt19937_64 rng(24);
  const Shape a{2, 3, 2, 2};
  for (const Shape& b : {a, Shape{3}, Shape{1, 3, 1, 1}, Shape{2, 3, 1, 1}}) {
    CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::add(in[0], in[1]); },
                     {random_tensor(a, rng), random_tensor(b, rng)}, rng)
              .passed());
    CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::mul(in[0], in[1]); },
                     {random_tensor(a, rng), random_tensor(b, rng)}, rng)
              .passed());
  }
}

TEST_CASE("gradcheck: concat, slice, reshape, sum") {
  std::mt19937_64 rng(25);
  CHECK(check_grad(
            [](const std::vector<Tensor>& in) {
              const std::array<Tensor, 2> parts{in[0], in[1]};
              return ops::concat_channels(parts);
            },
            {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::slice_channels(in[0], 1, 2); },
                   {random_tensor({2, 4, 2, 2}, rng)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::reshape(in[0], {6, 4}); },
                   {random_tensor({1, 4, 2, 3}, rng)}, rng)
            .passed());
  CHECK(check_grad([](const std::vector<Tensor>& in) { return ops::sum(in[0]); }, {random_tensor({5, 3}, rng)},
                   rng)
            .passed());
}

TEST_CASE("gradcheck: composite graph") {
  std::mt19937_64 rng(26);
  Tensor rm = Tensor::zeros({4}), rv = Tensor::full({4}, 1.0f);
  auto r = check_grad(
      [&](const std::vector<Tensor>& in) {
        Tensor y = ops::conv2d(in[0], in[1], Tensor(), {1, 1}, ops::Padding2d::uniform(1));
        y = ops::batchnorm2d(y, in[2], in[3], rm, rv, Mode::kTrain);
        y = ops::sigmoid(y);
        y = ops::bilinear_resize(ops::adaptive_avg_pool2d(y, 2, 3), 5, 5);
        return ops::mul(y, ops::reshape(in[4], {1, 4, 1, 1}));
      },
      {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng, 0.5f, 1.5f),
       random_tensor({4}, rng), random_tensor({4}, rng)},
      rng, 24, nullptr, [&](const std::vector<Tensor>& in) {
        oracle64::D y = oracle64::conv(oracle64::from(in[0]), in[1], nullptr, 1, 1, 1, 1);
        y = oracle64::sigmoid(oracle64::bn(y, in[2], in[3], rm, rv, true));
        y = oracle64::bilinear(oracle64::pool(y, 2, 3), 5, 5);
        for (std::int64_t n = 0; n < y.s[0]; ++n)
          for (std::int64_t c = 0; c < y.s[1]; ++c)
            for (std::int64_t i = 0; i < 25; ++i) y.at(n, c, i / 5, i % 5) *= in[4].at(c);
        return y;
      });
  CHECK(r.passed());
}

TEST_CASE("gradcheck: cosine similarity and cross-entropy") {
  std::mt19937_64 rng(27);
  CHECK(check_grad([](const std::vector<Tensor>& in) { return channel_cosine_similarity(in[0], in[1], 2, 2); },
                   {random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)}, rng)
            .passed());

  Tensor logits = random_tensor({2, 3, 2, 2}, rng, -2, 2);
  const std::vector<std::uint8_t> labels{0, 1, 2, 255, 2, 2, 1, 0};
  logits.set_requires_grad(true);
  GradcheckProblem p;
  p.loss = [&] { return cross_entropy_loss(logits, labels); };
  p.value = [&] { return cross_entropy_value(logits, labels); };
  GradTarget t{"logits", logits, {}};
  for (std::int64_t i = 0; i < logits.numel(); ++i) t.indices.push_back(i);
  CHECK(gradcheck(p, {t}).passed());
}

TEST_CASE("forward passes are deterministic") {
  std::mt19937_64 rng(28);
  Tensor x = random_tensor({1, 4, 9, 9}, rng), w = random_tensor({6, 4, 3, 3}, rng);
  Tensor a = ops::bilinear_resize(ops::conv2d(x, w, undefined, {2, 2}, ops::Padding2d::uniform(1)), 9, 9);
  Tensor b = ops::bilinear_resize(ops::conv2d(x, w, undefined, {2, 2}, ops::Padding2d::uniform(1)), 9, 9);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
