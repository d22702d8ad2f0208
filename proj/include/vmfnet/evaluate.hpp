#pragma once

#include "vmfnet/data.hpp"
#include "vmfnet/metrics.hpp"
#include "vmfnet/networks.hpp"

namespace vmfnet {

// Hard labels via per-pixel argmax over the sigmoid mask channels.
template <typename T>
std::vector<std::vector<std::uint8_t>> predict_labels(VmfNet<T>& model, const Tensor<T>& x);

// Builds the [S, C, H, W] batch of one subject's slices.
template <typename T>
Tensor<T> subject_batch(const Dataset& ds, int subject_index);

// Per-subject Dice (slices pooled as one volume) and per-class HD (mean over
// slices where defined), aggregated over the held-out subjects.
template <typename T>
MetricReport evaluate_model(VmfNet<T>& model, const Dataset& test_set,
                            HdVariant variant = HdVariant::kModified);

}  // namespace vmfnet
