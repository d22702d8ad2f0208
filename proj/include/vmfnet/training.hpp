#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "vmfnet/adam.hpp"
#include "vmfnet/checkpoint.hpp"
#include "vmfnet/config_file.hpp"
#include "vmfnet/data.hpp"
#include "vmfnet/networks.hpp"

namespace vmfnet {

struct LossReport {
  long long iteration = 0;
  double dice_loss = 0;  // mean over labeled samples; 0 with labeled_count 0
  double rec_loss = 0;
  double vmf_loss = 0;
  double total = 0;  // lambda_dice * dice (gated) + rec + vmf, per enabled terms
  int labeled_count = 0;
  double elapsed_s = 0;  // wall clock; excluded from determinism comparisons

  std::string to_json_line() const;
};

template <typename T>
struct Batch {
  Tensor<T> x;                    // [N, C, H, W]
  std::vector<Tensor<T>> onehot;  // per sample [K+1, H, W]; numel 0 when unlabeled
  std::vector<char> labeled;
  int labeled_count = 0;
};

// Uniform draw over training subjects, then a uniform slice of the subject.
std::vector<int> sample_batch_indices(Rng& rng, const Dataset& train, int batch_size);

template <typename T>
Tensor<T> image_to_tensor(const Sample& s);  // [1, H, W], intensities in [0,1]

template <typename T>
Batch<T> assemble_batch(const Dataset& train, const std::vector<int>& sample_ids, int classes);

// Full pipeline X -> Z -> (Z_vMF, Z~) -> (Y^, X^) with Eq.-3 gating: the dice
// term is averaged over labeled samples only; reconstruction and cluster
// terms cover the whole batch. With `with_grads`, gradients for every
// parameter group are accumulated in the model.
template <typename T>
LossReport forward_loss(VmfNet<T>& model, const Batch<T>& batch, const TrainConfig& cfg,
                        bool with_grads, Mode mode = Mode::kTrain);

template <typename T>
struct Trainer {
  TrainConfig cfg;
  std::unique_ptr<VmfNet<T>> model;
  std::unique_ptr<Adam<T>> opt;
  Rng sampler{0};
  long long iteration = 0;

  static Trainer make(const TrainConfig& cfg);
};

// Runs cfg.iterations optimizer steps. Reports are appended at iteration 1,
// every cfg.log_every, and at the end; checkpoints at cfg.checkpoint_every
// and the end when out_dir is given (checkpoint_000123.ckpt / final.ckpt,
// metrics.jsonl).
template <typename T>
std::vector<LossReport> run_training(Trainer<T>& tr, const Dataset& train_set,
                                     const std::filesystem::path* out_dir);

template <typename T>
void save_trainer(const std::filesystem::path& path, Trainer<T>& tr);

template <typename T>
Trainer<T> load_trainer(const std::filesystem::path& path);

// Reads only the stored precision tag ("f32" / "f64").
std::string checkpoint_precision(const std::filesystem::path& path);

// Convenience: split + train + final checkpoint; returns the trainer and the
// test split for follow-up evaluation.
template <typename T>
struct TrainRun {
  Trainer<T> trainer;
  SplitResult split;
  std::vector<LossReport> log;
};

template <typename T>
TrainRun<T> train_on(const TrainConfig& cfg, const Dataset& full,
                     const std::filesystem::path* out_dir);

// Loss-term ablation: full, no reconstruction, no cluster loss, neither.
struct AblationCell {
  std::string variant;
  std::uint64_t seed;
  double mean_dice = 0;
  std::optional<double> mean_hd;
};

struct AblationResult {
  std::vector<AblationCell> cells;                 // variant x seed
  std::vector<std::pair<std::string, double>> mean_dice_by_variant;
  std::string table() const;
};

template <typename T>
AblationResult run_ablation(const TrainConfig& base, const Dataset& full,
                            const std::vector<std::uint64_t>& seeds);

}  // namespace vmfnet
