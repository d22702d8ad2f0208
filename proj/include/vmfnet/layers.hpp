#pragma once

#include <string>
#include <vector>

#include "vmfnet/rng.hpp"
#include "vmfnet/tensor.hpp"

namespace vmfnet {

// Forward-pass mode.
//  kTrain:  normalization uses current-batch statistics, running stats update
//  kFrozen: running stats as constants, gradients still flow (test-time use)
//  kEval:   running stats, inference only
enum class Mode { kTrain, kFrozen, kEval };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for non-trainable buffers
  bool trainable = true;
};

template <typename T>
using ParamSet = std::vector<ParamRef<T>>;

// 2D convolution, stride 1, square kernel. Weights [cout, cin*k*k].
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int cin, int cout, int ksize, int pad);

  void init(Rng& rng);  // Kaiming fan-in scaling
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& gy);
  void collect(ParamSet<T>& out);
  void zero_grad();
  std::size_t param_count() const;

  int cin() const { return cin_; }
  int cout() const { return cout_; }

  Tensor<T> w, b, gw, gb;

 private:
  std::string name_;
  int cin_ = 0, cout_ = 0, k_ = 0, pad_ = 0;
  Tensor<T> x_;  // cached input
};

// 2D transposed convolution with kernel 2, stride 2 (exact 2x upsampling).
// Weights [cin, cout*4].
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, int cin, int cout);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& gy);
  void collect(ParamSet<T>& out);
  void zero_grad();
  std::size_t param_count() const;

  Tensor<T> w, b, gw, gb;

 private:
  std::string name_;
  int cin_ = 0, cout_ = 0;
  Tensor<T> x_;
};

// Batch normalization with per-sample spatial statistics: in kTrain each
// sample is normalized by its own per-channel mean/variance over H*W, so
// samples in a batch never influence one another. Running averages
// (momentum 0.1) aggregate the per-sample statistics for kEval/kFrozen.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& gy);
  void collect(ParamSet<T>& out);
  void zero_grad();
  std::size_t param_count() const { return 2 * static_cast<std::size_t>(c_); }

  Tensor<T> gamma, beta, ggamma, gbeta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

 private:
  std::string name_;
  int c_ = 0;
  Mode mode_ = Mode::kTrain;
  Tensor<T> xhat_;     // cached normalized input
  Tensor<T> inv_std_;  // [N, C] in kTrain; [C] stats come from running in kFrozen
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& gy);

 private:
  std::vector<unsigned char> mask_;
  std::vector<int> shape_;
};

// Logistic activation clamped to the open interval (0, 1).
template <typename T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& gy);

 private:
  Tensor<T> y_;
};

// 2x2 max pooling, stride 2.
template <typename T>
class MaxPool2d {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& gy);

 private:
  std::vector<int> argmax_;
  std::vector<int> in_shape_;
};

// Channel-wise concatenation of two NCHW tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void split_channels_backward(const Tensor<T>& g, int ca, Tensor<T>& ga, Tensor<T>& gb);

}  // namespace vmfnet
