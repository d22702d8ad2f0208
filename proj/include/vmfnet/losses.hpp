#pragma once

#include "vmfnet/tensor.hpp"

namespace vmfnet {

// Milletari soft Dice loss on one sample: 1 - mean over channels of
// (2 sum(p t) + eps) / (sum(p^2) + sum(t^2) + eps), eps = 1e-6.
// `truth` must be one-hot across channels; anything else raises
// InvalidLabelError.
template <typename T>
T dice_loss(const Tensor<T>& pred /* [C,H,W] */, const Tensor<T>& truth);

// Gradient of `scale * dice_loss` with respect to pred, accumulated into
// grad_pred.
template <typename T>
void dice_loss_backward(const Tensor<T>& pred, const Tensor<T>& truth, T scale,
                        Tensor<T>& grad_pred);

// Mean absolute difference over all entries.
template <typename T>
T reconstruction_loss(const Tensor<T>& x, const Tensor<T>& xhat);

// Gradient of `scale * reconstruction_loss` with respect to xhat (subgradient
// 0 where the difference vanishes), accumulated into grad_xhat.
template <typename T>
void reconstruction_loss_backward(const Tensor<T>& x, const Tensor<T>& xhat, T scale,
                                  Tensor<T>& grad_xhat);

// One-hot encode an integer label mask [H,W] with values in {0..classes-1}
// into [classes, H, W].
template <typename T>
Tensor<T> one_hot(const std::vector<std::uint8_t>& labels, int h, int w, int classes);

}  // namespace vmfnet
