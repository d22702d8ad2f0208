#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "vmfnet/networks.hpp"

namespace vmfnet {

// Training configuration. Field names mirror the key = value config file
// one to one; flags override file values.
struct TrainConfig {
  double learning_rate = 1e-4;
  long long iterations = 2000;   // desk default; the reference setup ran 50k
  int batch_size = 4;
  double lambda_dice = 1.0;      // weight of the per-sample gated dice term
  double labeled_fraction = 1.0;
  std::uint64_t seed = 0;
  double sigma = 30.0;
  int kernels = 12;
  std::string likelihood_norm = "l1";  // l1 | l2
  int encoder_depth = 3;
  int encoder_base_channels = 16;
  int encoder_feature_dim = 64;
  int image_size = 64;
  int image_channels = 1;
  int classes = 3;
  int head_hidden = 16;
  bool use_rec_loss = true;
  bool use_vmf_loss = true;
  long long log_every = 100;
  long long checkpoint_every = 500;
  std::string holdout;
  std::string precision = "f32";  // f32 | f64

  void validate() const;
  VmfNetConfig model_config() const;
};

// `key = value` lines, '#' comments, blank lines ignored.
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);

// Applies entries onto `base`; unknown keys raise ConfigError.
TrainConfig apply_kv(const TrainConfig& base, const std::map<std::string, std::string>& kv);

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base = {});

std::string to_kv(const TrainConfig& cfg);
std::string to_json_string(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace vmfnet
