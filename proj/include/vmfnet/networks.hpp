#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vmfnet/layers.hpp"
#include "vmfnet/vmf.hpp"

namespace vmfnet {

struct EncoderConfig {
  int depth = 3;            // down/up stage count
  int base_channels = 16;   // channels at the first stage
  int feature_dim = 64;     // D of the emitted feature field
  int input_h = 64;
  int input_w = 64;
  int in_channels = 1;

  void validate() const;  // throws ConfigError; warns if feature_dim < J elsewhere
  int feature_h() const { return input_h / 2; }
  int feature_w() const { return input_w / 2; }
};

struct HeadConfig {
  int in_channels = 0;
  int hidden_channels = 16;
  int out_channels = 0;

  void validate() const;
};

// conv(3x3) + BN + ReLU, twice.
template <typename T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(const std::string& name, int cin, int cout);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& gy);
  void collect(ParamSet<T>& out);
  void zero_grad();
  static std::size_t param_count(int cin, int cout);

 private:
  Conv2d<T> c1_, c2_;
  BatchNorm2d<T> bn1_, bn2_;
  ReLU<T> r1_, r2_;
};

// 2D UNet without the last upsampling and output layers: `depth` pooling
// stages down, depth-1 transposed-conv stages back up with skip
// concatenation, then a linear 3x3 convolution onto feature_dim channels.
// Emits features at half the input resolution.
template <typename T>
class UNetEncoder {
 public:
  UNetEncoder() = default;
  explicit UNetEncoder(const EncoderConfig& cfg);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);  // [N,C,H,W] -> [N,D,H/2,W/2]
  Tensor<T> backward(const Tensor<T>& gy);
  void collect(ParamSet<T>& out);
  void zero_grad();
  static std::size_t param_count(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<DoubleConv<T>> downs_;
  std::vector<MaxPool2d<T>> pools_;
  DoubleConv<T> bottom_;
  std::vector<ConvTranspose2d<T>> up_convs_;
  std::vector<DoubleConv<T>> up_blocks_;
  Conv2d<T> feature_conv_;
  std::vector<int> skip_channels_;
};

// Shallow head shared by the task and reconstruction networks: double conv,
// transposed-conv 2x upsample, double conv, 1x1 output conv, sigmoid.
template <typename T>
class ConvHead {
 public:
  ConvHead() = default;
  ConvHead(const std::string& name, const HeadConfig& cfg);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);  // [N,cin,h,w] -> [N,cout,2h,2w]
  Tensor<T> backward(const Tensor<T>& gy);
  void collect(ParamSet<T>& out);
  void zero_grad();
  static std::size_t param_count(const HeadConfig& cfg);

  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  DoubleConv<T> d1_, d2_;
  ConvTranspose2d<T> up_;
  Conv2d<T> out_conv_;
  Sigmoid<T> sig_;
};

struct VmfNetConfig {
  EncoderConfig encoder;
  int num_classes = 3;     // foreground classes; the head emits K+1 channels
  int image_channels = 1;
  int num_kernels = 12;
  double sigma = 30.0;
  VmfNorm norm = VmfNorm::kL1;
  int head_hidden = 16;

  void validate() const;
  HeadConfig task_head() const { return {num_kernels, head_hidden, num_classes + 1}; }
  HeadConfig recon_head() const { return {encoder.feature_dim, head_hidden, image_channels}; }
};

// The full pipeline: X -> F_psi -> Z -> (Z_vMF, Z~) -> (Y^, X^).
template <typename T>
class VmfNet {
 public:
  struct ForwardResult {
    Tensor<T> yhat;       // [N, K+1, H, W] sigmoid mask probabilities
    Tensor<T> xhat;       // [N, C, H, W] sigmoid reconstruction
    T vmf_loss = T(0);    // batch mean of the cluster loss
    // per-sample intermediates at feature resolution
    std::vector<FeatureField<T>> z;
    std::vector<VmfDecomposition<T>> dec;
    std::vector<RecomposedField<T>> recomposed;
  };

  VmfNet() = default;
  explicit VmfNet(const VmfNetConfig& cfg);

  void init(std::uint64_t seed);
  const ForwardResult& forward(const Tensor<T>& x, Mode mode);
  // Any of the loss gradients may be empty (numel 0) to drop that path.
  void backward(const Tensor<T>& gyhat, const Tensor<T>& gxhat, T vmf_weight);

  ParamSet<T> params();
  void zero_grad();
  std::size_t param_count();
  static std::size_t param_count(const VmfNetConfig& cfg);

  const VmfNetConfig& config() const { return cfg_; }
  KernelBank<T> projected_bank() const { return project_kernels(bank_); }
  Tensor<T>& kernel_param() { return bank_.mu; }

  // Encoder-only pass (alignment probe, feature export).
  Tensor<T> encode(const Tensor<T>& x, Mode mode) { return encoder_.forward(x, mode); }

 private:
  VmfNetConfig cfg_;
  UNetEncoder<T> encoder_;
  ConvHead<T> task_head_, recon_head_;
  KernelBank<T> bank_;  // raw (unprojected) kernel parameters
  Tensor<T> gmu_;       // gradient on the raw kernels
  // caches
  Tensor<T> raw_feats_;
  std::vector<Tensor<T>> raw_fields_;  // per-sample [h,w,D] pre-normalization
  KernelBank<T> unit_bank_;
  ForwardResult fwd_;
};

}  // namespace vmfnet
