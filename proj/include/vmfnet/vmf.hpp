#pragma once

#include <cstdint>
#include <vector>

#include "vmfnet/rng.hpp"
#include "vmfnet/tensor.hpp"

namespace vmfnet {

// Channel normalization applied to the raw per-kernel activations. L1 turns
// them into a convex-combination weights vector (channel sums = 1); L2 scales
// the activation vector to unit Euclidean length. L1 is the default.
enum class VmfNorm { kL1, kL2 };

const char* vmf_norm_name(VmfNorm n);
VmfNorm vmf_norm_from_name(const std::string& s);

// H x W grid of D-dimensional unit feature vectors, stored [H, W, D]
// row-major so each position vector is contiguous.
template <typename T>
struct FeatureField {
  int h = 0, w = 0, d = 0;
  Tensor<T> data;

  int positions() const { return h * w; }
  void validate() const;
};

// J learnable unit-norm mean directions plus a fixed concentration.
template <typename T>
struct KernelBank {
  Tensor<T> mu;  // [J, D]
  T sigma = T(30);

  int kernels() const { return mu.shape.empty() ? 0 : mu.shape[0]; }
  int dim() const { return mu.shape.size() < 2 ? 0 : mu.shape[1]; }
  void validate_unit_rows(double tol = 1e-6) const;

  // J directions drawn i.i.d. standard normal then normalized: uniform on
  // the sphere, no preferred direction.
  static KernelBank random(int kernels, int dim, T sigma, Rng& rng);
};

// H x W x J nonnegative per-position activations, normalized per `norm`.
template <typename T>
struct LikelihoodField {
  int h = 0, w = 0, j = 0;
  Tensor<T> data;

  void validate(VmfNorm norm) const;
};

// Likelihood-weighted combination of the kernels, [H, W, D].
template <typename T>
struct RecomposedField {
  int h = 0, w = 0, d = 0;
  Tensor<T> data;
};

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

// Divide every position vector by max(norm, eps), eps = 1e-8. Zero vectors
// stay zero. Throws InvalidInputError on non-finite input.
template <typename T>
FeatureField<T> normalize_features(const Tensor<T>& raw /* [H, W, D] */);

// L2-normalize every kernel row. Rows with norm <= eps raise
// DegenerateKernelError. Applied inside every forward use of the bank so the
// unit constraint survives unconstrained optimization.
template <typename T>
KernelBank<T> project_kernels(const KernelBank<T>& bank);

// exp(sigma * mu_j . z_i) per position and kernel, channel-normalized.
// The vMF normalizer C(sigma) cancels and is never materialized. The
// per-position max of sigma * mu_j . z_i is subtracted before
// exponentiation. `bank` must already have unit rows.
template <typename T>
LikelihoodField<T> vmf_likelihoods(const FeatureField<T>& z, const KernelBank<T>& bank,
                                   VmfNorm norm = VmfNorm::kL1);

// -(HW)^-1 sum_i max_j mu_j . z_i, ties broken toward the lowest kernel
// index. Value in [-1, 1].
template <typename T>
T vmf_loss(const FeatureField<T>& z, const KernelBank<T>& bank);

// z~_i = sum_j l[i,j] mu_j.
template <typename T>
RecomposedField<T> recompose(const LikelihoodField<T>& lik, const KernelBank<T>& bank);

// ---------------------------------------------------------------------------
// Shared decomposition (one dot-product pass for likelihoods + cluster loss)
// ---------------------------------------------------------------------------

template <typename T>
struct VmfDecomposition {
  Tensor<T> dots;  // [HW, J], mu_j . z_i (unscaled)
  LikelihoodField<T> lik;
  std::vector<int> argmax;  // winning kernel per position, lowest index at ties
  T cluster_loss = T(0);    // -(HW)^-1 sum_i max_j dots
};

template <typename T>
VmfDecomposition<T> vmf_decompose(const FeatureField<T>& z, const KernelBank<T>& bank,
                                  VmfNorm norm);

// ---------------------------------------------------------------------------
// Backward passes. Gradients accumulate into the destination tensors
// (callers zero them first). `bank` is the projected (unit-row) bank.
// ---------------------------------------------------------------------------

// d(normalize_features)/d(raw): grad_raw += J_norm^T grad_z.
template <typename T>
void normalize_features_backward(const Tensor<T>& raw, const Tensor<T>& grad_z,
                                 Tensor<T>& grad_raw);

// d(project)/d(mu_raw): grad_raw += (I - u u^T) grad_u / ||row||.
template <typename T>
void project_kernels_backward(const Tensor<T>& mu_raw, const Tensor<T>& grad_unit,
                              Tensor<T>& grad_mu_raw);

// Backprop through the normalized likelihoods given the stored decomposition.
template <typename T>
void vmf_likelihoods_backward(const FeatureField<T>& z, const KernelBank<T>& bank,
                              const VmfDecomposition<T>& dec, const Tensor<T>& grad_lik,
                              VmfNorm norm, Tensor<T>& grad_z, Tensor<T>& grad_mu);

// Backprop through the cluster loss (the subgradient routes through the
// winning kernel of each position). `scale` multiplies the loss gradient.
template <typename T>
void vmf_loss_backward(const FeatureField<T>& z, const KernelBank<T>& bank,
                       const std::vector<int>& argmax, T scale, Tensor<T>& grad_z,
                       Tensor<T>& grad_mu);

// Backprop through the recomposition.
template <typename T>
void recompose_backward(const LikelihoodField<T>& lik, const KernelBank<T>& bank,
                        const Tensor<T>& grad_out, Tensor<T>& grad_lik, Tensor<T>& grad_mu);

}  // namespace vmfnet
