// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 4, 6 and 7 share the smoke-trained models.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "vmfnet/evaluate.hpp"
#include "vmfnet/losses.hpp"
#include "vmfnet/png_io.hpp"
#include "vmfnet/probe.hpp"
#include "vmfnet/training.hpp"
#include "vmfnet/ttt.hpp"
#include "vmfnet/viz.hpp"

using namespace vmfnet;
using Clock = std::chrono::steady_clock;

namespace {

struct Ctx {
  std::filesystem::path work;
  Dataset smoke_dataset;                                   // 4 domains, 64x64
  std::vector<std::unique_ptr<Trainer<float>>> smoke_run;  // one per seed
  std::vector<SplitResult> smoke_split;
  std::vector<double> smoke_dice;
  int failures = 0;
};

// gradient comparison: relative error with an absolute floor soaking up
// finite-difference roundoff where the true gradient is (near) zero
double grad_err(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool report(Ctx& ctx, int number, const std::string& name, double budget_s,
            const std::function<bool(std::string&)>& body) {
  std::string detail;
  const auto t0 = Clock::now();
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool in_budget = elapsed < budget_s;
  const bool pass = ok && in_budget;
  std::printf("[%s] criterion %d: %s (%.1fs of %.0fs budget)%s%s\n", pass ? "PASS" : "FAIL", number,
              name.c_str(), elapsed, budget_s, detail.empty() ? "" : " - ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++ctx.failures;
  return pass;
}

Tensor<double> random_field(Rng& rng, int h, int w, int d) {
  Tensor<double> t({h, w, d});
  rng.fill_uniform(t, -1, 1);
  return t;
}

// ---------------------------------------------------------------------------
// criterion 1: math oracles
// ---------------------------------------------------------------------------

bool math_oracles(std::string& detail) {
  Rng rng(101);
  int instances = 0;
  double worst = 0;

  for (int trial = 0; trial < 110; ++trial) {
    const int h = 2 + rng.uniform_int(4), w = 2 + rng.uniform_int(4);
    const int d = 2 + rng.uniform_int(7), j = 2 + rng.uniform_int(5);
    const auto z = normalize_features(random_field(rng, h, w, d));
    auto bank = KernelBank<double>::random(j, d, 5.0 + rng.uniform(0.0, 30.0), rng);

    // scalar-loop likelihoods (no max subtraction, no vectorization)
    const auto lik = vmf_likelihoods(z, bank);
    for (int i = 0; i < h * w; ++i) {
      long double total = 0;
      std::vector<long double> e(static_cast<std::size_t>(j));
      for (int m = 0; m < j; ++m) {
        long double dot = 0;
        for (int c = 0; c < d; ++c)
          dot += static_cast<long double>(bank.mu.at(m, c)) *
                 z.data.data[static_cast<std::size_t>(i) * d + c];
        e[static_cast<std::size_t>(m)] = std::exp(static_cast<long double>(bank.sigma) * dot);
        total += e[static_cast<std::size_t>(m)];
      }
      for (int m = 0; m < j; ++m) {
        const double oracle = static_cast<double>(e[static_cast<std::size_t>(m)] / total);
        const double got = lik.data.data[static_cast<std::size_t>(i) * j + m];
        worst = std::max(worst, std::abs(got - oracle) / std::max({std::abs(oracle), 1e-30}));
      }
    }

    // scalar-loop cluster loss
    {
      long double acc = 0;
      for (int i = 0; i < h * w; ++i) {
        long double best = -1e30L;
        for (int m = 0; m < j; ++m) {
          long double dot = 0;
          for (int c = 0; c < d; ++c)
            dot += static_cast<long double>(bank.mu.at(m, c)) *
                   z.data.data[static_cast<std::size_t>(i) * d + c];
          best = std::max(best, dot);
        }
        acc += best;
      }
      const double oracle = static_cast<double>(-acc / (h * w));
      const double got = vmf_loss(z, bank);
      worst = std::max(worst, std::abs(got - oracle) / std::max(std::abs(oracle), 1e-30));
    }

    // scalar-loop recomposition
    {
      const auto rec = recompose(lik, bank);
      for (int i = 0; i < h * w; ++i)
        for (int c = 0; c < d; ++c) {
          long double acc = 0;
          for (int m = 0; m < j; ++m)
            acc += static_cast<long double>(lik.data.data[static_cast<std::size_t>(i) * j + m]) *
                   bank.mu.at(m, c);
          const double got = rec.data.data[static_cast<std::size_t>(i) * d + c];
          worst = std::max(worst,
                           std::abs(got - static_cast<double>(acc)) /
                               std::max({std::abs(static_cast<double>(acc)), 1e-12}));
        }
    }
    ++instances;
  }
  if (worst >= 1e-9) {
    detail = "vmf op relative error " + std::to_string(worst);
    return false;
  }

  // dice / reconstruction losses against scalar formulas
  for (int trial = 0; trial < 110; ++trial) {
    const int c = 1 + rng.uniform_int(3), h = 2 + rng.uniform_int(5), w = 2 + rng.uniform_int(5);
    Tensor<double> pred({c, h, w});
    rng.fill_uniform(pred, 0, 1);
    Tensor<double> truth({c, h, w});
    for (int q = 0; q < h * w; ++q) {
      const int cls = rng.uniform_int(c + 1);
      if (cls < c) truth.data[static_cast<std::size_t>(cls) * h * w + q] = 1;
    }
    long double acc = 0;
    for (int ch = 0; ch < c; ++ch) {
      long double inter = 0, psq = 0, tsq = 0;
      for (int q = 0; q < h * w; ++q) {
        const double p = pred.data[static_cast<std::size_t>(ch) * h * w + q];
        const double t = truth.data[static_cast<std::size_t>(ch) * h * w + q];
        inter += p * t;
        psq += p * p;
        tsq += t * t;
      }
      acc += (2 * inter + 1e-6) / (psq + tsq + 1e-6);
    }
    const double oracle = static_cast<double>(1 - acc / c);
    worst = std::max(worst, std::abs(dice_loss(pred, truth) - oracle) / std::max(std::abs(oracle), 1e-12));

    Tensor<double> xhat({c, h, w});
    rng.fill_uniform(xhat, 0, 1);
    long double l1 = 0;
    for (std::size_t q = 0; q < pred.numel(); ++q) l1 += std::abs(pred.data[q] - xhat.data[q]);
    const double rec_oracle = static_cast<double>(l1 / pred.numel());
    worst = std::max(worst, std::abs(reconstruction_loss(pred, xhat) - rec_oracle) / rec_oracle);
    ++instances;
  }
  if (worst >= 1e-9) {
    detail = "loss relative error " + std::to_string(worst);
    return false;
  }

  // hard metrics: exact set counting, brute-force hausdorff
  for (int trial = 0; trial < 110; ++trial) {
    const int h = 8 + rng.uniform_int(9), w = 8 + rng.uniform_int(9);
    std::vector<std::uint8_t> a(static_cast<std::size_t>(h) * w), b(a);
    const auto blob = [&](std::vector<std::uint8_t>& m) {
      const double cy = rng.uniform(3, h - 3), cx = rng.uniform(3, w - 3), r = rng.uniform(1.5, 4.5);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
            m[static_cast<std::size_t>(y) * w + x] = 1;
    };
    blob(a);
    blob(b);
    long long inter = 0, pa = 0, pb = 0;
    for (std::size_t q = 0; q < a.size(); ++q) {
      inter += a[q] == 1 && b[q] == 1;
      pa += a[q] == 1;
      pb += b[q] == 1;
    }
    const double dice_oracle = (pa + pb) == 0 ? 100.0 : 200.0 * inter / static_cast<double>(pa + pb);
    if (dice_score(a, b, 1) != dice_oracle) {
      detail = "dice_score mismatch";
      return false;
    }
    for (const auto variant : {HdVariant::kStandard, HdVariant::kModified}) {
      const auto got = hausdorff(a, b, h, w, 1, variant);
      // independent double loop over boundary pixels
      const auto bp = boundary_pixels(a.data(), h, w, 1);
      const auto bt = boundary_pixels(b.data(), h, w, 1);
      if (bp.empty() || bt.empty()) {
        if (got.has_value()) {
          detail = "hausdorff defined on an empty set";
          return false;
        }
        continue;
      }
      const auto dir = [&](const auto& p, const auto& q) {
        double mx = 0, sum = 0;
        for (auto& [py, px] : p) {
          double best = 1e300;
          for (auto& [qy, qx] : q)
            best = std::min(best, std::sqrt(double((py - qy) * (py - qy) + (px - qx) * (px - qx))));
          mx = std::max(mx, best);
          sum += best;
        }
        return variant == HdVariant::kStandard ? mx : sum / static_cast<double>(p.size());
      };
      const double oracle = std::max(dir(bp, bt), dir(bt, bp));
      if (std::abs(*got - oracle) > 1e-12) {
        detail = "hausdorff mismatch " + std::to_string(*got - oracle);
        return false;
      }
    }
    ++instances;
  }
  detail = std::to_string(instances) + " instances, worst rel err " + std::to_string(worst);
  return true;
}

// ---------------------------------------------------------------------------
// criterion 2: gradients against central differences
// ---------------------------------------------------------------------------

TrainConfig toy_config(int image_size) {
  TrainConfig cfg;
  cfg.image_size = image_size;
  cfg.encoder_depth = 2;
  cfg.encoder_base_channels = 4;
  cfg.encoder_feature_dim = 8;
  cfg.kernels = 3;
  cfg.head_hidden = 4;
  cfg.holdout = "A";
  return cfg;
}

template <typename T>
bool objective_gradcheck(std::uint64_t seed, double step, double tol, double floor,
                         std::string& detail) {
  TrainConfig cfg = toy_config(16);
  cfg.seed = seed;
  VmfNet<T> model(cfg.model_config());
  model.init(cfg.seed);

  Rng rng(seed * 13 + 1);
  Batch<T> batch;
  batch.x = Tensor<T>({2, 1, 16, 16});
  rng.fill_uniform(batch.x, 0, 1);
  Tensor<T> onehot({4, 16, 16});
  for (int q = 0; q < 256; ++q)
    onehot.data[static_cast<std::size_t>(rng.uniform_int(4)) * 256 + q] = 1;
  batch.onehot.push_back(onehot);
  batch.onehot.emplace_back();
  batch.labeled = {1, 0};
  batch.labeled_count = 1;

  model.zero_grad();
  (void)forward_loss(model, batch, cfg, true);
  const auto loss = [&]() {
    return static_cast<double>(forward_loss(model, batch, cfg, false).total);
  };
  double worst = 0;
  int checked = 0;
  for (auto& p : model.params()) {
    if (!p.trainable) continue;
    const std::size_t stride = std::max<std::size_t>(1, p.value->numel() / 3);
    for (std::size_t q = 0; q < p.value->numel(); q += stride) {
      T* x = &p.value->data[q];
      const T orig = *x;
      *x = orig + static_cast<T>(step);
      const double fp = loss();
      *x = orig - static_cast<T>(step);
      const double fm = loss();
      *x = orig;
      const double numeric = (fp - fm) / (2 * step);
      worst = std::max(worst, grad_err(static_cast<double>(p.grad->data[q]), numeric, floor));
      ++checked;
    }
  }
  detail += std::to_string(checked) + " params, worst " + std::to_string(worst) + "; ";
  return worst < tol;
}

bool gradient_suite(std::string& detail) {
  // vmf cluster loss and the recomposition chain, 4x4x8 fields, J=3
  for (std::uint64_t seed : {31ULL, 32ULL}) {
    Rng rng(seed);
    Tensor<double> z_raw = random_field(rng, 4, 4, 8);
    Tensor<double> mu_raw({3, 8});
    rng.fill_uniform(mu_raw, -1, 1);
    const double sigma = 9.0;

    const auto make_bank = [&]() {
      KernelBank<double> b;
      b.sigma = sigma;
      b.mu = mu_raw;
      return project_kernels(b);
    };
    const auto field = [&]() {
      FeatureField<double> f;
      f.h = 4;
      f.w = 4;
      f.d = 8;
      f.data = z_raw;
      return f;
    };

    const auto loss_vmf = [&]() { return vmf_loss(field(), make_bank()); };
    const auto loss_chain = [&]() {
      auto bank = make_bank();
      auto dec = vmf_decompose(field(), bank, VmfNorm::kL1);
      auto rec = recompose(dec.lik, bank);
      double acc = 0;
      for (double v : rec.data.data) acc += v * v;
      return acc;
    };

    for (int which = 0; which < 2; ++which) {
      auto f = field();
      auto bank = make_bank();
      Tensor<double> gz({4, 4, 8}), gmu_unit({3, 8}), gmu({3, 8});
      if (which == 0) {
        auto dec = vmf_decompose(f, bank, VmfNorm::kL1);
        vmf_loss_backward(f, bank, dec.argmax, 1.0, gz, gmu_unit);
      } else {
        auto dec = vmf_decompose(f, bank, VmfNorm::kL1);
        auto rec = recompose(dec.lik, bank);
        Tensor<double> grec({4, 4, 8});
        for (std::size_t q = 0; q < grec.numel(); ++q) grec.data[q] = 2.0 * rec.data.data[q];
        Tensor<double> glik({4, 4, 3});
        recompose_backward(dec.lik, bank, grec, glik, gmu_unit);
        vmf_likelihoods_backward(f, bank, dec, glik, VmfNorm::kL1, gz, gmu_unit);
      }
      project_kernels_backward(mu_raw, gmu_unit, gmu);

      const auto scalar = [&]() { return which == 0 ? loss_vmf() : loss_chain(); };
      const double step = 1e-4;
      double worst = 0;
      for (std::size_t q = 0; q < z_raw.numel(); q += 5) {
        const double orig = z_raw.data[q];
        z_raw.data[q] = orig + step;
        const double fp = scalar();
        z_raw.data[q] = orig - step;
        const double fm = scalar();
        z_raw.data[q] = orig;
        worst = std::max(worst, grad_err(gz.data[q], (fp - fm) / (2 * step), 1e-6));
      }
      for (std::size_t q = 0; q < mu_raw.numel(); q += 2) {
        const double orig = mu_raw.data[q];
        mu_raw.data[q] = orig + step;
        const double fp = scalar();
        mu_raw.data[q] = orig - step;
        const double fm = scalar();
        mu_raw.data[q] = orig;
        worst = std::max(worst, grad_err(gmu.data[q], (fp - fm) / (2 * step), 1e-6));
      }
      if (worst >= 1e-4) {
        detail = "vmf gradients worst " + std::to_string(worst);
        return false;
      }
    }
  }

  // dice loss gradient
  {
    Rng rng(41);
    Tensor<double> pred({3, 6, 6});
    rng.fill_uniform(pred, 0.05, 0.95);
    Tensor<double> truth({3, 6, 6});
    for (int q = 0; q < 36; ++q)
      truth.data[static_cast<std::size_t>(rng.uniform_int(3)) * 36 + q] = 1;
    Tensor<double> g(pred.shape);
    dice_loss_backward(pred, truth, 1.0, g);
    double worst = 0;
    for (std::size_t q = 0; q < pred.numel(); ++q) {
      const double orig = pred.data[q];
      const double step = 1e-6;
      pred.data[q] = orig + step;
      const double fp = dice_loss(pred, truth);
      pred.data[q] = orig - step;
      const double fm = dice_loss(pred, truth);
      pred.data[q] = orig;
      worst = std::max(worst, grad_err(g.data[q], (fp - fm) / (2 * step), 1e-6));
    }
    if (worst >= 1e-4) {
      detail = "dice gradient worst " + std::to_string(worst);
      return false;
    }
  }

  // full objective: double then single precision
  if (!objective_gradcheck<double>(5, 1e-5, 1e-4, 1e-6, detail)) {
    detail += "(double objective)";
    return false;
  }
  if (!objective_gradcheck<float>(6, 5e-3, 1e-3, 1e-3, detail)) {
    detail += "(single objective)";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// criterion 3: invariants
// ---------------------------------------------------------------------------

bool invariant_suite(Ctx& ctx, std::string& detail) {
  // a tiny dataset to drive training-coupled invariants
  const auto ds_dir = ctx.work / "inv_ds";
  GeneratorConfig gen;
  gen.num_domains = 2;
  gen.subjects_per_domain = 2;
  gen.slices_per_subject = 2;
  gen.image_size = 32;
  gen.seed = 303;
  generate_dataset(gen, ds_dir);
  const Dataset ds = load_dataset(ds_dir);

  TrainConfig cfg = toy_config(32);
  cfg.encoder_base_channels = 8;
  cfg.encoder_feature_dim = 16;
  cfg.kernels = 4;
  cfg.iterations = 25;
  cfg.learning_rate = 5e-3;  // aggressive steps to stress the projection
  cfg.log_every = 5;
  cfg.seed = 7;
  cfg.holdout = "B";

  // unit-norm kernels after arbitrary training steps
  {
    auto tr = Trainer<float>::make(cfg);
    (void)run_training(tr, ds, nullptr);
    try {
      tr.model->projected_bank().validate_unit_rows(1e-6);
    } catch (const std::exception& e) {
      detail = std::string("kernel norm: ") + e.what();
      return false;
    }
  }

  // likelihood channel sums and scale invariance
  {
    Rng rng(51);
    const auto raw = random_field(rng, 6, 6, 8);
    auto bank = KernelBank<double>::random(4, 8, 30.0, rng);
    const auto lik = vmf_likelihoods(normalize_features(raw), bank);
    for (int i = 0; i < 36; ++i) {
      double s = 0;
      for (int m = 0; m < 4; ++m) s += lik.data.data[static_cast<std::size_t>(i) * 4 + m];
      if (std::abs(s - 1.0) > 1e-5) {
        detail = "channel sum " + std::to_string(s);
        return false;
      }
    }
    for (double c : {2.0, 0.25, 3.7}) {
      auto scaled = raw;
      for (auto& v : scaled.data) v *= c;
      const auto lik2 = vmf_likelihoods(normalize_features(scaled), bank);
      for (std::size_t q = 0; q < lik.data.numel(); ++q) {
        const bool pow2 = c == 2.0 || c == 0.25;
        const double diff = std::abs(lik2.data.data[q] - lik.data.data[q]);
        if (pow2 ? diff != 0.0 : diff > 1e-11 * std::max(1.0, std::abs(lik.data.data[q]))) {
          detail = "scale invariance violated at c=" + std::to_string(c);
          return false;
        }
      }
    }
    // kernel permutation equivariance
    KernelBank<double> pbank;
    pbank.sigma = bank.sigma;
    pbank.mu = Tensor<double>({4, 8});
    const int perm[4] = {3, 1, 0, 2};
    for (int r = 0; r < 4; ++r)
      for (int c2 = 0; c2 < 8; ++c2) pbank.mu.at(r, c2) = bank.mu.at(perm[r], c2);
    const auto plik = vmf_likelihoods(normalize_features(raw), pbank);
    for (int i = 0; i < 36; ++i)
      for (int r = 0; r < 4; ++r) {
        const double a = plik.data.data[static_cast<std::size_t>(i) * 4 + r];
        const double b = lik.data.data[static_cast<std::size_t>(i) * 4 + perm[r]];
        if (std::abs(a - b) > 1e-13 * std::max(1.0, std::abs(b))) {
          detail = "permutation equivariance violated";
          return false;
        }
      }
    const auto f = normalize_features(raw);
    if (std::abs(vmf_loss(f, pbank) - vmf_loss(f, bank)) > 1e-13) {
      detail = "vmf_loss changed under permutation";
      return false;
    }
  }

  // per-sample lambda gating
  {
    auto tr = Trainer<float>::make(cfg);
    auto one = assemble_batch<float>(ds, {0}, ds.num_classes);
    const auto a = forward_loss(*tr.model, one, cfg, false);
    auto two = assemble_batch<float>(ds, {0, 3}, ds.num_classes);
    two.onehot[1] = Tensor<float>{};
    two.labeled = {1, 0};
    two.labeled_count = 1;
    const auto b = forward_loss(*tr.model, two, cfg, false);
    if (a.dice_loss != b.dice_loss) {
      detail = "dice term changed when an unlabeled sample joined the batch";
      return false;
    }
  }

  // metric symmetry
  {
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::uint8_t> a(16 * 16), b(16 * 16);
      const auto blob = [&](std::vector<std::uint8_t>& m) {
        const double cy = rng.uniform(4, 12), cx = rng.uniform(4, 12), r = rng.uniform(2, 5);
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 16; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
              m[static_cast<std::size_t>(y) * 16 + x] = 1;
      };
      blob(a);
      blob(b);
      if (dice_score(a, b, 1) != dice_score(b, a, 1)) {
        detail = "dice asymmetric";
        return false;
      }
      for (auto v : {HdVariant::kStandard, HdVariant::kModified}) {
        const auto ab = hausdorff(a, b, 16, 16, 1, v);
        const auto ba = hausdorff(b, a, 16, 16, 1, v);
        if (ab.has_value() != ba.has_value() || (ab && *ab != *ba)) {
          detail = "hausdorff asymmetric";
          return false;
        }
      }
    }
  }

  // checkpoint bit-exact round trip
  {
    auto tr = Trainer<float>::make(cfg);
    (void)run_training(tr, ds, nullptr);
    Rng rng(54);
    Tensor<float> x({1, 1, 32, 32});
    rng.fill_uniform(x, 0, 1);
    const auto y_before = tr.model->forward(x, Mode::kEval).yhat;
    save_trainer(ctx.work / "inv.ckpt", tr);
    auto tr2 = load_trainer<float>(ctx.work / "inv.ckpt");
    const auto y_after = tr2.model->forward(x, Mode::kEval).yhat;
    if (y_before.data != y_after.data) {
      detail = "checkpoint round trip changed the forward pass";
      return false;
    }
    auto p1 = tr.model->params();
    auto p2 = tr2.model->params();
    for (std::size_t i = 0; i < p1.size(); ++i)
      if (p1[i].value->data != p2[i].value->data) {
        detail = "checkpoint round trip changed tensor " + p1[i].name;
        return false;
      }
  }

  // full determinism of (config, seed)
  {
    auto t1 = Trainer<float>::make(cfg);
    const auto l1 = run_training(t1, ds, nullptr);
    auto t2 = Trainer<float>::make(cfg);
    const auto l2 = run_training(t2, ds, nullptr);
    if (l1.size() != l2.size()) {
      detail = "log lengths differ";
      return false;
    }
    for (std::size_t i = 0; i < l1.size(); ++i)
      if (l1[i].dice_loss != l2[i].dice_loss || l1[i].rec_loss != l2[i].rec_loss ||
          l1[i].vmf_loss != l2[i].vmf_loss || l1[i].total != l2[i].total) {
        detail = "metrics logs differ at row " + std::to_string(i);
        return false;
      }
    auto p1 = t1.model->params();
    auto p2 = t2.model->params();
    for (std::size_t i = 0; i < p1.size(); ++i)
      if (p1[i].value->data != p2[i].value->data) {
        detail = "parameters differ after identical runs: " + p1[i].name;
        return false;
      }
  }
  return true;
}

// ---------------------------------------------------------------------------
// criterion 4: end-to-end smoke
// ---------------------------------------------------------------------------

bool smoke(Ctx& ctx, std::string& detail) {
  GeneratorConfig gen;  // defaults: 4 domains x 10 subjects x 8 slices, 64x64
  gen.seed = 0;
  generate_dataset(gen, ctx.work / "smoke_ds");
  ctx.smoke_dataset = load_dataset(ctx.work / "smoke_ds");

  bool all_ok = true;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    TrainConfig cfg;  // desk defaults: 64x64, depth 3, base 16, D 64, J 12
    cfg.labeled_fraction = 0.2;
    cfg.seed = seed;
    cfg.holdout = "A";
    auto run = train_on<float>(cfg, ctx.smoke_dataset, nullptr);
    const MetricReport rep = evaluate_model(*run.trainer.model, run.split.test);
    detail += "seed " + std::to_string(seed) + ": dice " + std::to_string(rep.mean_foreground_dice) + "; ";
    if (rep.mean_foreground_dice < 70.0) all_ok = false;
    ctx.smoke_dice.push_back(rep.mean_foreground_dice);
    ctx.smoke_run.push_back(std::make_unique<Trainer<float>>(std::move(run.trainer)));
    ctx.smoke_split.push_back(std::move(run.split));
    save_trainer(ctx.work / ("smoke_seed" + std::to_string(seed) + ".ckpt"), *ctx.smoke_run.back());
  }
  return all_ok;
}

// ---------------------------------------------------------------------------
// criterion 5: ablation direction
// ---------------------------------------------------------------------------

bool ablation_direction(Ctx& ctx, std::string& detail) {
  TrainConfig base;
  base.labeled_fraction = 0.1;
  base.holdout = "A";
  base.iterations = 1000;
  const AblationResult result = run_ablation<float>(base, ctx.smoke_dataset, {1, 2, 3});
  double full = 0;
  bool ok = true;
  for (const auto& [variant, dice] : result.mean_dice_by_variant) {
    detail += variant + " " + std::to_string(dice) + "; ";
    if (variant == "full") full = dice;
  }
  for (const auto& [variant, dice] : result.mean_dice_by_variant)
    if (variant != "full" && full < dice) ok = false;
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 6: test-time training contract
// ---------------------------------------------------------------------------

bool ttt_contract(Ctx& ctx, std::string& detail) {
  TTTConfig cfg;  // 15 iterations, lr 1e-6, initial state included
  int improved_dice_seeds = 0;
  for (std::size_t s = 0; s < ctx.smoke_run.size(); ++s) {
    auto& model = *ctx.smoke_run[s]->model;

    // frozen groups observed around the evaluation
    std::vector<std::vector<float>> frozen;
    for (auto& p : model.params())
      if (p.name.rfind("task.", 0) == 0 || p.name == "kernels.mu") frozen.push_back(p.value->data);

    const TTTEvaluation eval = ttt_evaluate(model, ctx.smoke_split[s].test, cfg);

    std::size_t fi = 0;
    for (auto& p : model.params())
      if (p.name.rfind("task.", 0) == 0 || p.name == "kernels.mu")
        if (p.value->data != frozen[fi++]) {
          detail = "frozen parameters moved: " + p.name;
          return false;
        }

    for (const auto& t : eval.traces)
      if (t.selected_error > t.baseline_error) {
        detail = "subject " + t.subject_id + " selected a worse reconstruction";
        return false;
      }
    if (eval.adapted.mean_foreground_dice >= eval.baseline.mean_foreground_dice)
      ++improved_dice_seeds;
    detail += "seed " + std::to_string(s + 1) + ": " +
              std::to_string(eval.baseline.mean_foreground_dice) + " -> " +
              std::to_string(eval.adapted.mean_foreground_dice) + "; ";
  }
  detail += std::to_string(improved_dice_seeds) + "/3 seeds improved";
  return improved_dice_seeds >= 2;
}

// ---------------------------------------------------------------------------
// criterion 7: alignment direction
// ---------------------------------------------------------------------------

bool alignment_direction(Ctx& ctx, std::string& detail) {
  int aligned_seeds = 0;
  for (std::size_t s = 0; s < ctx.smoke_run.size(); ++s) {
    auto& model = *ctx.smoke_run[s]->model;
    ProbeConfig pc;
    pc.seed = ctx.smoke_run[s]->cfg.seed;
    const auto feat = alignment_probe(model, ctx.smoke_split[s].train, ProbeRepresentation::kFeatures, pc);
    const auto lik =
        alignment_probe(model, ctx.smoke_split[s].train, ProbeRepresentation::kLikelihoods, pc);
    detail += "seed " + std::to_string(s + 1) + ": CE(Z) " + std::to_string(feat.test_ce) +
              " CE(Zvmf) " + std::to_string(lik.test_ce) + "; ";
    if (lik.test_ce >= feat.test_ce) ++aligned_seeds;
  }

  // chance-level oracle: shuffled labels land at ln 3 within 0.05
  ProbeConfig pc;
  pc.seed = 12;
  pc.shuffle_labels = true;
  const auto chance =
      alignment_probe(*ctx.smoke_run[0]->model, ctx.smoke_split[0].train,
                      ProbeRepresentation::kFeatures, pc);
  detail += "chance CE " + std::to_string(chance.test_ce);
  if (std::abs(chance.test_ce - std::log(3.0)) >= 0.05) return false;
  return aligned_seeds >= 2;
}

// ---------------------------------------------------------------------------
// criterion 8: visualization contract
// ---------------------------------------------------------------------------

bool viz_contract(Ctx& ctx, std::string& detail) {
  auto& model = *ctx.smoke_run[0]->model;
  const auto out = ctx.work / "viz";
  const Sample& sample = ctx.smoke_split[0].test.samples[0];
  Tensor<float> x({1, 1, sample.h, sample.w});
  for (std::size_t p = 0; p < sample.image.size(); ++p)
    x.data[p] = static_cast<float>(sample.image[p]) / 255.0f;

  const int top_k = 8;
  const auto files = export_likelihood_maps(model, x, out, top_k);
  if (files.size() != static_cast<std::size_t>(3 + top_k)) {
    detail = "expected 11 files, got " + std::to_string(files.size());
    return false;
  }
  for (const char* name : {"00_input.png", "01_reconstruction.png", "02_mask.png"})
    if (!std::filesystem::exists(out / name)) {
      detail = std::string("missing ") + name;
      return false;
    }

  // degenerate one-hot input yields binary channel images
  LikelihoodField<float> onehot;
  onehot.h = 16;
  onehot.w = 16;
  onehot.j = 12;
  onehot.data = Tensor<float>({16, 16, 12});
  Rng rng(80);
  for (int p = 0; p < 256; ++p)
    onehot.data.data[static_cast<std::size_t>(p) * 12 + rng.uniform_int(12)] = 1.0f;
  const auto order = rank_channels(onehot, {});
  const auto chans = export_channels(onehot, order, ctx.work / "viz_onehot", 8);
  for (const auto& file : chans) {
    const auto img = read_png8(file);
    for (auto v : img.pixels)
      if (v != 0 && v != 255) {
        detail = "one-hot channel image is not binary";
        return false;
      }
  }
  detail = "11 files, binary degenerate channels";
  return true;
}

}  // namespace

int main() {
  Ctx ctx;
  ctx.work = std::filesystem::temp_directory_path() /
             ("vmfnet_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(ctx.work);
  std::printf("work directory: %s\n", ctx.work.string().c_str());

  report(ctx, 1, "math oracles vs scalar implementations", 60, math_oracles);
  report(ctx, 2, "analytic gradients vs central differences", 120, gradient_suite);
  report(ctx, 3, "invariants (norms, gating, determinism, round trips)", 120,
         [&](std::string& d) { return invariant_suite(ctx, d); });
  const bool smoke_ok =
      report(ctx, 4, "end-to-end smoke: held-out dice >= 70% on 3 seeds", 1800,
             [&](std::string& d) { return smoke(ctx, d); });
  if (smoke_ok || !ctx.smoke_run.empty()) {
    report(ctx, 5, "ablation direction: full >= each ablated variant", 7200,
           [&](std::string& d) { return ablation_direction(ctx, d); });
    report(ctx, 6, "test-time training contract", 1200,
           [&](std::string& d) { return ttt_contract(ctx, d); });
    report(ctx, 7, "alignment direction and chance-level probe", 600,
           [&](std::string& d) { return alignment_direction(ctx, d); });
    report(ctx, 8, "visualization contract", 60,
           [&](std::string& d) { return viz_contract(ctx, d); });
  } else {
    std::printf("[FAIL] criteria 5-8 skipped: no trained smoke models\n");
    ctx.failures += 4;
  }

  std::printf("%d criteria failed\n", ctx.failures);
  return ctx.failures == 0 ? 0 : 1;
}
