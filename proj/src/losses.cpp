#include "vmfnet/losses.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace vmfnet {

namespace {
constexpr double kDiceEps = 1e-6;

// Entries must be exactly 0 or 1 with at most one active channel per
// position (a position may belong to none of the listed classes when no
// explicit background channel is present).
template <typename T>
void check_onehot(const Tensor<T>& truth) {
  const int c = truth.shape[0];
  const std::size_t hw = truth.numel() / static_cast<std::size_t>(c);
  for (std::size_t p = 0; p < hw; ++p) {
    int ones = 0;
    for (int ch = 0; ch < c; ++ch) {
      const T v = truth.data[static_cast<std::size_t>(ch) * hw + p];
      if (v == T(1))
        ++ones;
      else if (v != T(0))
        throw InvalidLabelError("dice_loss: truth is not one-hot (entry neither 0 nor 1)");
    }
    if (ones > 1) throw InvalidLabelError("dice_loss: truth is not one-hot (channel sum > 1)");
  }
}
}  // namespace

template <typename T>
T dice_loss(const Tensor<T>& pred, const Tensor<T>& truth) {
  check_same_shape(pred, truth, "dice_loss");
  if (pred.ndim() != 3) throw ShapeError("dice_loss: expected [C,H,W], got " + pred.shape_str());
  check_onehot(truth);
  const int c = pred.shape[0];
  const std::size_t hw = pred.numel() / static_cast<std::size_t>(c);
  double acc = 0;
  for (int ch = 0; ch < c; ++ch) {
    const T* p = pred.ptr() + static_cast<std::size_t>(ch) * hw;
    const T* t = truth.ptr() + static_cast<std::size_t>(ch) * hw;
    double inter = 0, psq = 0, tsq = 0;
    for (std::size_t q = 0; q < hw; ++q) {
      inter += static_cast<double>(p[q]) * t[q];
      psq += static_cast<double>(p[q]) * p[q];
      tsq += static_cast<double>(t[q]) * t[q];
    }
    acc += (2.0 * inter + kDiceEps) / (psq + tsq + kDiceEps);
  }
  return static_cast<T>(1.0 - acc / c);
}

template <typename T>
void dice_loss_backward(const Tensor<T>& pred, const Tensor<T>& truth, T scale,
                        Tensor<T>& grad_pred) {
  const int c = pred.shape[0];
  const std::size_t hw = pred.numel() / static_cast<std::size_t>(c);
  for (int ch = 0; ch < c; ++ch) {
    const T* p = pred.ptr() + static_cast<std::size_t>(ch) * hw;
    const T* t = truth.ptr() + static_cast<std::size_t>(ch) * hw;
    T* g = grad_pred.ptr() + static_cast<std::size_t>(ch) * hw;
    double inter = 0, psq = 0, tsq = 0;
    for (std::size_t q = 0; q < hw; ++q) {
      inter += static_cast<double>(p[q]) * t[q];
      psq += static_cast<double>(p[q]) * p[q];
      tsq += static_cast<double>(t[q]) * t[q];
    }
    const double num = 2.0 * inter + kDiceEps;
    const double den = psq + tsq + kDiceEps;
    const double coef = static_cast<double>(scale) / c;
    // d/dp of -num/den per channel mean
    for (std::size_t q = 0; q < hw; ++q)
      g[q] += static_cast<T>(coef * (2.0 * p[q] * num / (den * den) - 2.0 * t[q] / den));
  }
}

template <typename T>
T reconstruction_loss(const Tensor<T>& x, const Tensor<T>& xhat) {
  check_same_shape(x, xhat, "reconstruction_loss");
  double acc = 0;
  for (std::size_t q = 0; q < x.numel(); ++q)
    acc += std::abs(static_cast<double>(x.data[q]) - static_cast<double>(xhat.data[q]));
  return static_cast<T>(acc / static_cast<double>(x.numel()));
}

template <typename T>
void reconstruction_loss_backward(const Tensor<T>& x, const Tensor<T>& xhat, T scale,
                                  Tensor<T>& grad_xhat) {
  const T coef = scale / static_cast<T>(x.numel());
  for (std::size_t q = 0; q < x.numel(); ++q) {
    const T diff = xhat.data[q] - x.data[q];
    if (diff > T(0))
      grad_xhat.data[q] += coef;
    else if (diff < T(0))
      grad_xhat.data[q] -= coef;
  }
}

template <typename T>
Tensor<T> one_hot(const std::vector<std::uint8_t>& labels, int h, int w, int classes) {
  if (static_cast<std::size_t>(h) * w != labels.size())
    throw ShapeError("one_hot: label buffer does not match H*W");
  Tensor<T> out({classes, h, w});
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] >= classes) throw InvalidLabelError("one_hot: label exceeds class count");
    out.data[static_cast<std::size_t>(labels[p]) * labels.size() + p] = T(1);
  }
  return out;
}

#define VMFNET_INSTANTIATE(T)                                                            \
  template T dice_loss<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template void dice_loss_backward<T>(const Tensor<T>&, const Tensor<T>&, T, Tensor<T>&); \
  template T reconstruction_loss<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template void reconstruction_loss_backward<T>(const Tensor<T>&, const Tensor<T>&, T,   \
                                                Tensor<T>&);                             \
  template Tensor<T> one_hot<T>(const std::vector<std::uint8_t>&, int, int, int);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
