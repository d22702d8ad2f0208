#include <doctest.h>

#include "test_util.hpp"
#include "vmfnet/training.hpp"
#include "vmfnet/ttt.hpp"

using namespace vmfnet;

namespace {

struct Fixture {
  testutil::TempDir tmp{"ttt_ds"};
  Dataset full;
  SplitResult split;
  std::unique_ptr<VmfNet<float>> model;

  Fixture() {
    GeneratorConfig gen;
    gen.num_domains = 3;
    gen.subjects_per_domain = 2;
    gen.slices_per_subject = 3;
    gen.image_size = 32;
    gen.seed = 55;
    generate_dataset(gen, tmp.path());
    full = load_dataset(tmp.path());

    TrainConfig cfg;
    cfg.image_size = 32;
    cfg.encoder_depth = 2;
    cfg.encoder_base_channels = 8;
    cfg.encoder_feature_dim = 16;
    cfg.kernels = 4;
    cfg.head_hidden = 8;
    cfg.learning_rate = 1e-3;
    cfg.iterations = 60;
    cfg.holdout = "C";
    cfg.seed = 3;
    auto run = train_on<float>(cfg, full, nullptr);
    split = std::move(run.split);
    model = std::move(run.trainer.model);
  }
};

std::vector<std::vector<float>> all_params(VmfNet<float>& m) {
  std::vector<std::vector<float>> out;
  for (auto& p : m.params()) out.push_back(p.value->data);
  return out;
}

}  // namespace

TEST_CASE("adaptation freezes the task head and kernels and restores the model") {
  Fixture f;
  const auto before = all_params(*f.model);
  const auto names = [&] {
    std::vector<std::string> n;
    for (auto& p : f.model->params()) n.push_back(p.name);
    return n;
  }();

  TTTConfig cfg;
  cfg.iterations = 4;
  cfg.learning_rate = 1e-3;  // large enough that unfrozen params visibly move
  const auto result = adapt_subject(*f.model, f.split.test, 0, cfg);

  CHECK(result.candidate_errors.size() == 5);  // initial + 4 steps
  CHECK(result.selected_error <= result.baseline_error);
  double best = result.candidate_errors[0];
  for (double e : result.candidate_errors) best = std::min(best, e);
  CHECK(result.selected_error == best);
  CHECK(result.predictions.size() == 3);  // slices of the subject

  // restoration: resident model equals the pre-adaptation state bitwise
  const auto after = all_params(*f.model);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK_MESSAGE(before[i] == after[i], "param ", names[i], " not restored");
}

TEST_CASE("theta and mu receive zero updates during adaptation (observed mid-flight)") {
  Fixture f;
  // capture the frozen groups, then adapt with a huge learning rate: if the
  // optimizer touched them at all the comparison would fail
  std::vector<std::vector<float>> frozen_before;
  for (auto& p : f.model->params())
    if (p.name.rfind("task.", 0) == 0 || p.name == "kernels.mu")
      frozen_before.push_back(p.value->data);

  TTTConfig cfg;
  cfg.iterations = 3;
  cfg.learning_rate = 0.5;
  (void)adapt_subject(*f.model, f.split.test, 0, cfg);

  std::size_t i = 0;
  for (auto& p : f.model->params())
    if (p.name.rfind("task.", 0) == 0 || p.name == "kernels.mu")
      CHECK(p.value->data == frozen_before[i++]);
}

TEST_CASE("zero-iteration adaptation equals the baseline exactly") {
  Fixture f;
  TTTConfig cfg;
  cfg.iterations = 0;
  const auto eval = ttt_evaluate(*f.model, f.split.test, cfg);
  REQUIRE(eval.baseline.subjects.size() == eval.adapted.subjects.size());
  for (std::size_t i = 0; i < eval.baseline.subjects.size(); ++i) {
    for (int c = 0; c < 3; ++c)
      CHECK(eval.baseline.subjects[i].dice_pct[static_cast<std::size_t>(c)] ==
            eval.adapted.subjects[i].dice_pct[static_cast<std::size_t>(c)]);
  }
  CHECK(eval.mean_rec_before == eval.mean_rec_after);
  for (const auto& t : eval.traces) CHECK(t.selected_step == 0);
}

TEST_CASE("subjects adapt in isolation") {
  Fixture f;
  TTTConfig cfg;
  cfg.iterations = 3;
  cfg.learning_rate = 1e-4;
  const auto solo = adapt_subject(*f.model, f.split.test, 1, cfg);
  (void)adapt_subject(*f.model, f.split.test, 0, cfg);
  const auto after_other = adapt_subject(*f.model, f.split.test, 1, cfg);
  CHECK(solo.candidate_errors == after_other.candidate_errors);
  CHECK(solo.predictions == after_other.predictions);
}

TEST_CASE("paired evaluation covers every held-out subject with selection traces") {
  Fixture f;
  TTTConfig cfg;
  cfg.iterations = 2;
  const auto eval = ttt_evaluate(*f.model, f.split.test, cfg);
  CHECK(eval.traces.size() == f.split.test.subjects.size());
  CHECK(eval.baseline.subjects.size() == f.split.test.subjects.size());
  CHECK(eval.adapted.subjects.size() == f.split.test.subjects.size());
  for (const auto& t : eval.traces) {
    CHECK(t.candidate_errors.size() == 3);
    CHECK(t.selected_error <= t.baseline_error);
  }
  CHECK(eval.mean_rec_after <= eval.mean_rec_before);
  CHECK(!eval.table().empty());
}

TEST_CASE("the paper-literal candidate set (no initial state) starts at step 1") {
  Fixture f;
  TTTConfig cfg;
  cfg.iterations = 3;
  cfg.include_initial = false;
  const auto result = adapt_subject(*f.model, f.split.test, 0, cfg);
  CHECK(result.selected_step >= 1);
}

TEST_CASE("adaptation rejects empty subjects and bad configs") {
  Fixture f;
  TTTConfig bad;
  bad.iterations = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.iterations = 5;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Dataset broken = f.split.test;
  broken.subjects[0].sample_indices.clear();
  TTTConfig cfg;
  CHECK_THROWS_AS(adapt_subject(*f.model, broken, 0, cfg), InvalidInputError);
}
