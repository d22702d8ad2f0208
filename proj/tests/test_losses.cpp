#include <doctest.h>

#include "test_util.hpp"
#include "vmfnet/losses.hpp"
#include "vmfnet/training.hpp"

using namespace vmfnet;
using testutil::grad_err;
using testutil::random_tensor;

TEST_CASE("dice loss: perfect overlap, disjoint, and the 2x2 hand case") {
  Tensor<double> t({1, 2, 2}, {1, 0, 1, 0});
  CHECK(dice_loss(t, t) == doctest::Approx(0.0).epsilon(1e-5));

  Tensor<double> p({1, 2, 2}, {0, 1, 0, 1});
  CHECK(dice_loss(p, t) == doctest::Approx(1.0).epsilon(1e-5));

  // pred (1,1,0,0), truth (1,0,1,0): 1 - (2*1+eps)/(2+2+eps) = 0.5
  Tensor<double> p2({1, 2, 2}, {1, 1, 0, 0});
  CHECK(dice_loss(p2, t) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("dice loss stays in [0,1] on random probabilistic predictions") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_tensor<double>({3, 4, 4}, rng, 0, 1);
    Tensor<double> t({3, 4, 4});
    for (int q = 0; q < 16; ++q) t.data[static_cast<std::size_t>(rng.uniform_int(3)) * 16 + q] = 1;
    const double d = dice_loss(p, t);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("dice loss rejects non-one-hot truth") {
  Tensor<double> p({1, 2, 2}, {1, 0, 0, 0});
  Tensor<double> half({1, 2, 2}, {0.5, 0, 0, 0});
  CHECK_THROWS_AS(dice_loss(p, half), InvalidLabelError);

  Tensor<double> p2({2, 1, 2}, {1, 0, 0, 0});
  Tensor<double> doubled({2, 1, 2}, {1, 0, 1, 0});
  CHECK_THROWS_AS(dice_loss(p2, doubled), InvalidLabelError);

  Tensor<double> wrong_shape({1, 1, 2}, {1, 0});
  CHECK_THROWS_AS(dice_loss(p, wrong_shape), ShapeError);
}

TEST_CASE("dice gradient matches central differences") {
  Rng rng(2);
  auto p = random_tensor<double>({2, 3, 3}, rng, 0.05, 0.95);
  Tensor<double> t({2, 3, 3});
  for (int q = 0; q < 9; ++q)
    if (rng.uniform() < 0.7) t.data[static_cast<std::size_t>(rng.uniform_int(2)) * 9 + q] = 1;
  Tensor<double> g(p.shape);
  dice_loss_backward(p, t, 1.0, g);
  const double step = 1e-6;
  for (std::size_t q = 0; q < p.numel(); ++q) {
    const double orig = p.data[q];
    p.data[q] = orig + step;
    const double fp = dice_loss(p, t);
    p.data[q] = orig - step;
    const double fm = dice_loss(p, t);
    p.data[q] = orig;
    CHECK(grad_err(g.data[q], (fp - fm) / (2 * step)) < 1e-5);
  }
}

TEST_CASE("reconstruction loss: zero, constant offset, scalar-loop oracle") {
  Rng rng(3);
  auto x = random_tensor<double>({1, 4, 4}, rng, 0, 1);
  CHECK(reconstruction_loss(x, x) == 0.0);

  Tensor<double> zeros({1, 4, 4});
  Tensor<double> halves({1, 4, 4});
  halves.fill(0.5);
  CHECK(reconstruction_loss(zeros, halves) == doctest::Approx(0.5).epsilon(1e-12));

  auto y = random_tensor<double>({1, 4, 4}, rng, 0, 1);
  double acc = 0;
  for (std::size_t q = 0; q < x.numel(); ++q) acc += std::abs(x.data[q] - y.data[q]);
  CHECK(testutil::rel_err(reconstruction_loss(x, y), acc / 16.0) < 1e-12);
}

TEST_CASE("reconstruction gradient matches central differences") {
  Rng rng(4);
  auto x = random_tensor<double>({1, 3, 3}, rng, 0, 1);
  auto y = random_tensor<double>({1, 3, 3}, rng, 0, 1);
  Tensor<double> g(y.shape);
  reconstruction_loss_backward(x, y, 1.0, g);
  const double step = 1e-7;
  for (std::size_t q = 0; q < y.numel(); ++q) {
    const double orig = y.data[q];
    y.data[q] = orig + step;
    const double fp = reconstruction_loss(x, y);
    y.data[q] = orig - step;
    const double fm = reconstruction_loss(x, y);
    y.data[q] = orig;
    CHECK(grad_err(g.data[q], (fp - fm) / (2 * step)) < 1e-5);
  }
}

TEST_CASE("one_hot encodes labels and rejects out-of-range values") {
  std::vector<std::uint8_t> labels = {0, 1, 2, 1};
  auto t = one_hot<double>(labels, 2, 2, 3);
  CHECK(t.at(0, 0, 0) == 1.0);
  CHECK(t.at(1, 0, 1) == 1.0);
  CHECK(t.at(2, 1, 0) == 1.0);
  CHECK(t.at(1, 1, 1) == 1.0);
  CHECK(t.numel() == 12);
  double sum = 0;
  for (double v : t.data) sum += v;
  CHECK(sum == 4.0);

  std::vector<std::uint8_t> bad = {0, 3, 0, 0};
  CHECK_THROWS_AS(one_hot<double>(bad, 2, 2, 3), InvalidLabelError);
}

// ---------------------------------------------------------------------------
// Full-objective gradient check on a 16x16 toy (double precision)
// ---------------------------------------------------------------------------

TEST_CASE("gradients of the full objective match central differences") {
  TrainConfig cfg;
  cfg.image_size = 16;
  cfg.encoder_depth = 2;
  cfg.encoder_base_channels = 4;
  cfg.encoder_feature_dim = 8;
  cfg.kernels = 3;
  cfg.head_hidden = 4;
  cfg.holdout = "A";
  cfg.seed = 5;

  VmfNet<double> model(cfg.model_config());
  model.init(cfg.seed);

  // two samples, one labeled
  Rng rng(6);
  Batch<double> batch;
  batch.x = random_tensor<double>({2, 1, 16, 16}, rng, 0, 1);
  Tensor<double> onehot({4, 16, 16});
  for (int q = 0; q < 256; ++q) {
    const int cls = rng.uniform_int(4);
    onehot.data[static_cast<std::size_t>(cls) * 256 + q] = 1;
  }
  batch.onehot.push_back(onehot);
  batch.onehot.emplace_back();
  batch.labeled = {1, 0};
  batch.labeled_count = 1;

  model.zero_grad();
  (void)forward_loss(model, batch, cfg, true);
  auto params = model.params();

  const auto loss = [&]() { return forward_loss(model, batch, cfg, false).total; };
  const double step = 1e-5;
  int checked = 0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    // a handful of entries per tensor, spread deterministically
    const std::size_t stride = std::max<std::size_t>(1, p.value->numel() / 3);
    for (std::size_t q = 0; q < p.value->numel(); q += stride) {
      double* x = &p.value->data[q];
      const double orig = *x;
      *x = orig + step;
      const double fp = loss();
      *x = orig - step;
      const double fm = loss();
      *x = orig;
      const double numeric = (fp - fm) / (2 * step);
      CHECK_MESSAGE(grad_err(p.grad->data[q], numeric) < 1e-4,
                    "param ", p.name, "[", q, "] analytic ", p.grad->data[q], " numeric ", numeric);
      ++checked;
    }
  }
  CHECK(checked > 50);
}
