#include <doctest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "vmfnet/png_io.hpp"
#include "vmfnet/probe.hpp"
#include "vmfnet/training.hpp"
#include "vmfnet/viz.hpp"

using namespace vmfnet;

namespace {

// 3 balanced classes, 10 subjects each, 8 vectors per subject
void synthetic_probe_data(std::uint64_t seed, bool informative,
                          std::vector<std::vector<double>>& vecs, std::vector<int>& labels,
                          std::vector<int>& subject_of) {
  Rng rng(seed * 31 + 7);
  for (int cls = 0; cls < 3; ++cls)
    for (int subj = 0; subj < 10; ++subj)
      for (int k = 0; k < 8; ++k) {
        std::vector<double> v(16);
        for (auto& x : v) x = rng.normal();
        if (informative) v[static_cast<std::size_t>(cls)] += 1.5;
        vecs.push_back(std::move(v));
        labels.push_back(cls);
        subject_of.push_back(cls * 10 + subj);
      }
}

}  // namespace

TEST_CASE("probe lands at chance on shuffled labels: CE within ln3 +- 0.05") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    std::vector<std::vector<double>> vecs;
    std::vector<int> labels, subject_of;
    synthetic_probe_data(seed, true, vecs, labels, subject_of);
    ProbeConfig cfg;
    cfg.seed = seed;
    cfg.shuffle_labels = true;
    const auto res = probe_on_vectors(vecs, labels, subject_of, 3, cfg, ProbeRepresentation::kFeatures);
    CHECK(std::abs(res.test_ce - std::log(3.0)) < 0.05);
  }
}

TEST_CASE("probe detects an informative representation") {
  std::vector<std::vector<double>> vecs;
  std::vector<int> labels, subject_of;
  synthetic_probe_data(4, true, vecs, labels, subject_of);
  ProbeConfig cfg;
  cfg.seed = 4;
  const auto res = probe_on_vectors(vecs, labels, subject_of, 3, cfg, ProbeRepresentation::kFeatures);
  CHECK(res.test_ce < std::log(3.0) - 0.1);
  CHECK(res.train_samples + res.test_samples == 240);
}

TEST_CASE("probe is deterministic under a fixed seed") {
  std::vector<std::vector<double>> vecs;
  std::vector<int> labels, subject_of;
  synthetic_probe_data(5, true, vecs, labels, subject_of);
  ProbeConfig cfg;
  cfg.seed = 11;
  const auto a = probe_on_vectors(vecs, labels, subject_of, 3, cfg, ProbeRepresentation::kImage);
  const auto b = probe_on_vectors(vecs, labels, subject_of, 3, cfg, ProbeRepresentation::kImage);
  CHECK(a.test_ce == b.test_ce);
  CHECK(a.train_ce == b.train_ce);
}

TEST_CASE("alignment probe refuses a single-domain dataset") {
  testutil::TempDir tmp("probe1dom");
  GeneratorConfig gen;
  gen.num_domains = 1;
  gen.subjects_per_domain = 2;
  gen.slices_per_subject = 2;
  gen.image_size = 32;
  generate_dataset(gen, tmp.path());
  Dataset ds = load_dataset(tmp.path());

  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.encoder_depth = 2;
  cfg.encoder_base_channels = 4;
  cfg.encoder_feature_dim = 8;
  cfg.kernels = 3;
  cfg.head_hidden = 4;
  cfg.holdout = "A";
  VmfNet<float> model(cfg.model_config());
  model.init(1);
  ProbeConfig pc;
  CHECK_THROWS_AS(alignment_probe(model, ds, ProbeRepresentation::kFeatures, pc), ConfigError);
}

TEST_CASE("probe feature extraction pools the masked representations") {
  testutil::TempDir tmp("probe_feat");
  GeneratorConfig gen;
  gen.num_domains = 2;
  gen.subjects_per_domain = 1;
  gen.slices_per_subject = 2;
  gen.image_size = 32;
  generate_dataset(gen, tmp.path());
  Dataset ds = load_dataset(tmp.path());

  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.encoder_depth = 2;
  cfg.encoder_base_channels = 4;
  cfg.encoder_feature_dim = 8;
  cfg.kernels = 3;
  cfg.head_hidden = 4;
  cfg.holdout = "A";
  VmfNet<float> model(cfg.model_config());
  model.init(2);

  const auto img = probe_features(model, ds, ProbeRepresentation::kImage);
  CHECK(img.size() == 4);
  CHECK(img[0].size() == 1);

  const auto feats = probe_features(model, ds, ProbeRepresentation::kFeatures);
  CHECK(feats[0].size() == 8);

  const auto liks = probe_features(model, ds, ProbeRepresentation::kLikelihoods);
  CHECK(liks[0].size() == 3);
  // pooled normalized likelihood channels still sum to one
  for (const auto& v : liks) {
    double s = 0;
    for (double x : v) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  CHECK(probe_representation_from_name("features") == ProbeRepresentation::kFeatures);
  CHECK_THROWS_AS(probe_representation_from_name("bogus"), ConfigError);
}

// ---------------------------------------------------------------------------
// visualization export
// ---------------------------------------------------------------------------

namespace {

struct VizFixture {
  testutil::TempDir tmp{"viz_ds"};
  Dataset ds;
  std::unique_ptr<VmfNet<float>> model;

  VizFixture() {
    GeneratorConfig gen;
    gen.num_domains = 2;
    gen.subjects_per_domain = 1;
    gen.slices_per_subject = 2;
    gen.image_size = 32;
    gen.seed = 9;
    generate_dataset(gen, tmp.path());
    ds = load_dataset(tmp.path());

    TrainConfig cfg;
    cfg.image_size = 32;
    cfg.encoder_depth = 2;
    cfg.encoder_base_channels = 4;
    cfg.encoder_feature_dim = 8;
    cfg.kernels = 12;
    cfg.head_hidden = 4;
    cfg.holdout = "A";
    model = std::make_unique<VmfNet<float>>(cfg.model_config());
    model->init(3);
  }
};

}  // namespace

TEST_CASE("viz exports exactly 3 + top_k files with the documented names") {
  VizFixture f;
  testutil::TempDir out("viz_out");
  Tensor<float> x({1, 1, 32, 32});
  for (std::size_t p = 0; p < x.numel(); ++p)
    x.data[p] = static_cast<float>(f.ds.samples[0].image[p]) / 255.0f;

  const auto files = export_likelihood_maps(*f.model, x, out.path(), 8);
  CHECK(files.size() == 11);  // input + reconstruction + mask + 8 channels
  CHECK(std::filesystem::exists(out.path() / "00_input.png"));
  CHECK(std::filesystem::exists(out.path() / "01_reconstruction.png"));
  CHECK(std::filesystem::exists(out.path() / "02_mask.png"));
  int channel_files = 0;
  for (const auto& e : std::filesystem::directory_iterator(out.path()))
    if (e.path().filename().string().rfind("channel_", 0) == 0) ++channel_files;
  CHECK(channel_files == 8);

  // scaling contract: non-constant channels peak at 255
  for (const auto& file : files) {
    if (file.filename().string().rfind("channel_", 0) != 0) continue;
    const auto img = read_png8(file);
    int mx = 0;
    for (auto v : img.pixels) mx = std::max(mx, static_cast<int>(v));
    CHECK(mx == 255);
  }

  CHECK_THROWS_AS(export_likelihood_maps(*f.model, x, out.path(), 13), ConfigError);
}

TEST_CASE("one-hot likelihood fields export as binary channel images") {
  testutil::TempDir out("viz_onehot");
  LikelihoodField<float> lik;
  lik.h = 8;
  lik.w = 8;
  lik.j = 4;
  lik.data = Tensor<float>({8, 8, 4});
  Rng rng(13);
  for (int p = 0; p < 64; ++p)
    lik.data.data[static_cast<std::size_t>(p) * 4 + rng.uniform_int(4)] = 1.0f;

  const auto order = rank_channels(lik, {});
  const auto files = export_channels(lik, order, out.path(), 4);
  CHECK(files.size() == 4);
  for (const auto& file : files) {
    const auto img = read_png8(file);
    std::set<int> values;
    for (auto v : img.pixels) values.insert(v);
    for (int v : values) CHECK((v == 0 || v == 255));
  }
}

TEST_CASE("channel ranking prefers channels active in the foreground") {
  LikelihoodField<float> lik;
  lik.h = 2;
  lik.w = 2;
  lik.j = 3;
  lik.data = Tensor<float>({2, 2, 3});
  // position 0 is foreground; channel 2 dominates there, channel 0 elsewhere
  lik.data.data = {0.1f, 0.2f, 0.7f, 0.8f, 0.1f, 0.1f, 0.9f, 0.05f, 0.05f, 0.8f, 0.1f, 0.1f};
  const std::vector<char> fg = {1, 0, 0, 0};
  const auto order = rank_channels(lik, fg);
  CHECK(order[0] == 2);
  const auto whole = rank_channels(lik, {});
  CHECK(whole[0] == 0);
}
