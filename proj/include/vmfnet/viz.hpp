#pragma once

#include <filesystem>
#include <vector>

#include "vmfnet/networks.hpp"

namespace vmfnet {

// Writes, for one image: the input, its reconstruction, the predicted-mask
// overlay, and the top_k likelihood channels, each as an 8-bit grayscale PNG
// scaled to [0, 255]. File names:
//   00_input.png, 01_reconstruction.png, 02_mask.png,
//   channel_<rank>_kernel<j>.png  (rank 0 = most informative)
// "Most informative" ranks channels by mean activation inside the predicted
// foreground (whole image when no foreground is predicted).
template <typename T>
std::vector<std::filesystem::path> export_likelihood_maps(VmfNet<T>& model, const Tensor<T>& image,
                                                          const std::filesystem::path& out_dir,
                                                          int top_k = 8);

// Channel ranking and export on a bare likelihood field (exposed for tests
// and degenerate inputs). `foreground` may be empty for whole-image ranking.
template <typename T>
std::vector<int> rank_channels(const LikelihoodField<T>& lik, const std::vector<char>& foreground);

template <typename T>
std::vector<std::filesystem::path> export_channels(const LikelihoodField<T>& lik,
                                                   const std::vector<int>& order,
                                                   const std::filesystem::path& out_dir, int top_k);

}  // namespace vmfnet
