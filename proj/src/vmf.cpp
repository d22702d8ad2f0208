#include "vmfnet/vmf.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace vmfnet {

namespace {

constexpr double kNormEps = 1e-8;

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const MatRM<T>> as_mat(const Tensor<T>& t, int rows, int cols) {
  return Eigen::Map<const MatRM<T>>(t.ptr(), rows, cols);
}

template <typename T>
Eigen::Map<MatRM<T>> as_mat(Tensor<T>& t, int rows, int cols) {
  return Eigen::Map<MatRM<T>>(t.ptr(), rows, cols);
}

template <typename T>
void check_field_shape(const Tensor<T>& t, const char* what) {
  if (t.ndim() != 3) throw ShapeError(std::string(what) + ": expected rank-3 [H,W,D] tensor, got " + t.shape_str());
}

}  // namespace

const char* vmf_norm_name(VmfNorm n) { return n == VmfNorm::kL1 ? "l1" : "l2"; }

VmfNorm vmf_norm_from_name(const std::string& s) {
  if (s == "l1") return VmfNorm::kL1;
  if (s == "l2") return VmfNorm::kL2;
  throw ConfigError("unknown likelihood normalization '" + s + "' (expected l1 or l2)");
}

template <typename T>
void FeatureField<T>::validate() const {
  if (data.ndim() != 3 || data.shape[0] != h || data.shape[1] != w || data.shape[2] != d)
    throw ShapeError("FeatureField: inconsistent shape " + data.shape_str());
  const int hw = h * w;
  for (int i = 0; i < hw; ++i) {
    double sq = 0;
    const T* p = data.ptr() + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      if (!std::isfinite(static_cast<double>(p[c]))) throw InvalidInputError("FeatureField: non-finite entry");
      sq += static_cast<double>(p[c]) * static_cast<double>(p[c]);
    }
    const double n = std::sqrt(sq);
    if (n > kNormEps && std::abs(n - 1.0) > 1e-5)
      throw InvalidInputError("FeatureField: position norm " + std::to_string(n) + " not within 1e-5 of 1");
  }
}

template <typename T>
void KernelBank<T>::validate_unit_rows(double tol) const {
  const int j = kernels(), d = dim();
  for (int r = 0; r < j; ++r) {
    double sq = 0;
    for (int c = 0; c < d; ++c) sq += static_cast<double>(mu.at(r, c)) * static_cast<double>(mu.at(r, c));
    if (std::abs(std::sqrt(sq) - 1.0) > tol)
      throw InvalidInputError("KernelBank: row " + std::to_string(r) + " is not unit norm");
  }
}

template <typename T>
KernelBank<T> KernelBank<T>::random(int kernels, int dim, T sigma, Rng& rng) {
  if (kernels < 2) throw ConfigError("KernelBank: need at least 2 kernels");
  if (sigma <= T(0)) throw ConfigError("KernelBank: sigma must be positive");
  KernelBank<T> bank;
  bank.sigma = sigma;
  bank.mu = Tensor<T>({kernels, dim});
  rng.fill_normal(bank.mu, 1.0);
  return project_kernels(bank);
}

template <typename T>
void LikelihoodField<T>::validate(VmfNorm norm) const {
  if (data.ndim() != 3 || data.shape[0] != h || data.shape[1] != w || data.shape[2] != j)
    throw ShapeError("LikelihoodField: inconsistent shape " + data.shape_str());
  const int hw = h * w;
  for (int i = 0; i < hw; ++i) {
    const T* p = data.ptr() + static_cast<std::size_t>(i) * j;
    double sum = 0, sq = 0;
    for (int c = 0; c < j; ++c) {
      const double v = static_cast<double>(p[c]);
      if (v < 0.0 || v > 1.0) throw InvalidInputError("LikelihoodField: entry outside [0,1]");
      sum += v;
      sq += v * v;
    }
    const double total = norm == VmfNorm::kL1 ? sum : std::sqrt(sq);
    if (std::abs(total - 1.0) > 1e-5)
      throw InvalidInputError("LikelihoodField: position not normalized (got " + std::to_string(total) + ")");
  }
}

template <typename T>
FeatureField<T> normalize_features(const Tensor<T>& raw) {
  check_field_shape(raw, "normalize_features");
  if (!raw.all_finite()) throw InvalidInputError("normalize_features: non-finite input");
  FeatureField<T> out;
  out.h = raw.shape[0];
  out.w = raw.shape[1];
  out.d = raw.shape[2];
  out.data = Tensor<T>(raw.shape);
  const int hw = out.h * out.w, d = out.d;
  for (int i = 0; i < hw; ++i) {
    const T* src = raw.ptr() + static_cast<std::size_t>(i) * d;
    T* dst = out.data.ptr() + static_cast<std::size_t>(i) * d;
    T sq = T(0);
    for (int c = 0; c < d; ++c) sq += src[c] * src[c];
    const T n = std::max(std::sqrt(sq), T(kNormEps));
    for (int c = 0; c < d; ++c) dst[c] = src[c] / n;
  }
  return out;
}

template <typename T>
void normalize_features_backward(const Tensor<T>& raw, const Tensor<T>& grad_z, Tensor<T>& grad_raw) {
  check_same_shape(raw, grad_z, "normalize_features_backward");
  check_same_shape(raw, grad_raw, "normalize_features_backward");
  const int hw = raw.shape[0] * raw.shape[1], d = raw.shape[2];
  for (int i = 0; i < hw; ++i) {
    const T* x = raw.ptr() + static_cast<std::size_t>(i) * d;
    const T* g = grad_z.ptr() + static_cast<std::size_t>(i) * d;
    T* out = grad_raw.ptr() + static_cast<std::size_t>(i) * d;
    T sq = T(0);
    for (int c = 0; c < d; ++c) sq += x[c] * x[c];
    const T norm = std::sqrt(sq);
    if (norm > T(kNormEps)) {
      // z = x / n with n = ||x||: grad = (g - z (z.g)) / n
      T zg = T(0);
      for (int c = 0; c < d; ++c) zg += (x[c] / norm) * g[c];
      for (int c = 0; c < d; ++c) out[c] += (g[c] - (x[c] / norm) * zg) / norm;
    } else {
      // n clamps to eps: z = x / eps is linear
      for (int c = 0; c < d; ++c) out[c] += g[c] / T(kNormEps);
    }
  }
}

template <typename T>
KernelBank<T> project_kernels(const KernelBank<T>& bank) {
  KernelBank<T> out;
  out.sigma = bank.sigma;
  out.mu = Tensor<T>(bank.mu.shape);
  const int j = bank.kernels(), d = bank.dim();
  for (int r = 0; r < j; ++r) {
    T sq = T(0);
    for (int c = 0; c < d; ++c) sq += bank.mu.at(r, c) * bank.mu.at(r, c);
    const T n = std::sqrt(sq);
    if (!(n > T(kNormEps)))
      throw DegenerateKernelError("project_kernels: kernel row " + std::to_string(r) +
                                  " has norm <= eps (collapsed initialization?)");
    for (int c = 0; c < d; ++c) out.mu.at(r, c) = bank.mu.at(r, c) / n;
  }
  return out;
}

template <typename T>
void project_kernels_backward(const Tensor<T>& mu_raw, const Tensor<T>& grad_unit,
                              Tensor<T>& grad_mu_raw) {
  check_same_shape(mu_raw, grad_unit, "project_kernels_backward");
  const int j = mu_raw.shape[0], d = mu_raw.shape[1];
  for (int r = 0; r < j; ++r) {
    const T* x = mu_raw.ptr() + static_cast<std::size_t>(r) * d;
    const T* g = grad_unit.ptr() + static_cast<std::size_t>(r) * d;
    T* out = grad_mu_raw.ptr() + static_cast<std::size_t>(r) * d;
    T sq = T(0);
    for (int c = 0; c < d; ++c) sq += x[c] * x[c];
    const T norm = std::sqrt(sq);
    T ug = T(0);
    for (int c = 0; c < d; ++c) ug += (x[c] / norm) * g[c];
    for (int c = 0; c < d; ++c) out[c] += (g[c] - (x[c] / norm) * ug) / norm;
  }
}

template <typename T>
VmfDecomposition<T> vmf_decompose(const FeatureField<T>& z, const KernelBank<T>& bank,
                                  VmfNorm norm) {
  const int hw = z.positions(), d = z.d, j = bank.kernels();
  if (bank.dim() != d)
    throw ShapeError("vmf_decompose: feature dim " + std::to_string(d) + " != kernel dim " +
                     std::to_string(bank.dim()));
  VmfDecomposition<T> dec;
  dec.dots = Tensor<T>({hw, j});
  as_mat(dec.dots, hw, j).noalias() =
      as_mat(z.data, hw, d) * as_mat(bank.mu, j, d).transpose();

  dec.lik.h = z.h;
  dec.lik.w = z.w;
  dec.lik.j = j;
  dec.lik.data = Tensor<T>({z.h, z.w, j});
  dec.argmax.resize(hw);

  const T sigma = bank.sigma;
  double loss_acc = 0;
  for (int i = 0; i < hw; ++i) {
    const T* row = dec.dots.ptr() + static_cast<std::size_t>(i) * j;
    T* out = dec.lik.data.ptr() + static_cast<std::size_t>(i) * j;
    // ties break toward the lowest kernel index
    int best = 0;
    for (int k = 1; k < j; ++k)
      if (row[k] > row[best]) best = k;
    dec.argmax[i] = best;
    loss_acc += static_cast<double>(row[best]);

    const T shift = sigma * row[best];  // per-position max of the logits
    T total = T(0);
    for (int k = 0; k < j; ++k) {
      out[k] = std::exp(sigma * row[k] - shift);
      total += norm == VmfNorm::kL1 ? out[k] : out[k] * out[k];
    }
    const T denom = norm == VmfNorm::kL1 ? total : std::sqrt(total);
    for (int k = 0; k < j; ++k) out[k] /= denom;
  }
  dec.cluster_loss = static_cast<T>(-loss_acc / hw);
  return dec;
}

template <typename T>
LikelihoodField<T> vmf_likelihoods(const FeatureField<T>& z, const KernelBank<T>& bank,
                                   VmfNorm norm) {
  return vmf_decompose(z, bank, norm).lik;
}

template <typename T>
T vmf_loss(const FeatureField<T>& z, const KernelBank<T>& bank) {
  return vmf_decompose(z, bank, VmfNorm::kL1).cluster_loss;
}

template <typename T>
RecomposedField<T> recompose(const LikelihoodField<T>& lik, const KernelBank<T>& bank) {
  const int hw = lik.h * lik.w, j = lik.j, d = bank.dim();
  if (bank.kernels() != j)
    throw ShapeError("recompose: likelihood channels " + std::to_string(j) + " != kernel count " +
                     std::to_string(bank.kernels()));
  RecomposedField<T> out;
  out.h = lik.h;
  out.w = lik.w;
  out.d = d;
  out.data = Tensor<T>({lik.h, lik.w, d});
  as_mat(out.data, hw, d).noalias() = as_mat(lik.data, hw, j) * as_mat(bank.mu, j, d);
  return out;
}

template <typename T>
void vmf_likelihoods_backward(const FeatureField<T>& z, const KernelBank<T>& bank,
                              const VmfDecomposition<T>& dec, const Tensor<T>& grad_lik,
                              VmfNorm norm, Tensor<T>& grad_z, Tensor<T>& grad_mu) {
  const int hw = z.positions(), d = z.d, j = bank.kernels();
  check_same_shape(grad_lik, dec.lik.data, "vmf_likelihoods_backward");
  Tensor<T> grad_logits({hw, j});
  for (int i = 0; i < hw; ++i) {
    const T* l = dec.lik.data.ptr() + static_cast<std::size_t>(i) * j;
    const T* g = grad_lik.ptr() + static_cast<std::size_t>(i) * j;
    T* gl = grad_logits.ptr() + static_cast<std::size_t>(i) * j;
    T inner = T(0);
    for (int k = 0; k < j; ++k) inner += g[k] * l[k];
    if (norm == VmfNorm::kL1) {
      for (int k = 0; k < j; ++k) gl[k] = l[k] * (g[k] - inner);
    } else {
      for (int k = 0; k < j; ++k) gl[k] = l[k] * (g[k] - l[k] * inner);
    }
  }
  // logits = sigma * dots (the subtracted max is a constant w.r.t. each row)
  const T sigma = bank.sigma;
  for (auto& v : grad_logits.data) v *= sigma;
  as_mat(grad_z, hw, d).noalias() += as_mat(grad_logits, hw, j) * as_mat(bank.mu, j, d);
  as_mat(grad_mu, j, d).noalias() +=
      as_mat(grad_logits, hw, j).transpose() * as_mat(z.data, hw, d);
}

template <typename T>
void vmf_loss_backward(const FeatureField<T>& z, const KernelBank<T>& bank,
                       const std::vector<int>& argmax, T scale, Tensor<T>& grad_z,
                       Tensor<T>& grad_mu) {
  const int hw = z.positions(), d = z.d;
  const T coef = -scale / static_cast<T>(hw);
  for (int i = 0; i < hw; ++i) {
    const int k = argmax[static_cast<std::size_t>(i)];
    const T* zi = z.data.ptr() + static_cast<std::size_t>(i) * d;
    const T* mk = bank.mu.ptr() + static_cast<std::size_t>(k) * d;
    T* gz = grad_z.ptr() + static_cast<std::size_t>(i) * d;
    T* gm = grad_mu.ptr() + static_cast<std::size_t>(k) * d;
    for (int c = 0; c < d; ++c) {
      gz[c] += coef * mk[c];
      gm[c] += coef * zi[c];
    }
  }
}

template <typename T>
void recompose_backward(const LikelihoodField<T>& lik, const KernelBank<T>& bank,
                        const Tensor<T>& grad_out, Tensor<T>& grad_lik, Tensor<T>& grad_mu) {
  const int hw = lik.h * lik.w, j = lik.j, d = bank.dim();
  as_mat(grad_lik, hw, j).noalias() += as_mat(grad_out, hw, d) * as_mat(bank.mu, j, d).transpose();
  as_mat(grad_mu, j, d).noalias() += as_mat(lik.data, hw, j).transpose() * as_mat(grad_out, hw, d);
}

// Explicit instantiations.
#define VMFNET_INSTANTIATE(T)                                                                      \
  template struct FeatureField<T>;                                                                 \
  template struct KernelBank<T>;                                                                   \
  template struct LikelihoodField<T>;                                                              \
  template FeatureField<T> normalize_features<T>(const Tensor<T>&);                                \
  template void normalize_features_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);    \
  template KernelBank<T> project_kernels<T>(const KernelBank<T>&);                                 \
  template void project_kernels_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);       \
  template VmfDecomposition<T> vmf_decompose<T>(const FeatureField<T>&, const KernelBank<T>&,      \
                                                VmfNorm);                                          \
  template LikelihoodField<T> vmf_likelihoods<T>(const FeatureField<T>&, const KernelBank<T>&,     \
                                                 VmfNorm);                                         \
  template T vmf_loss<T>(const FeatureField<T>&, const KernelBank<T>&);                            \
  template RecomposedField<T> recompose<T>(const LikelihoodField<T>&, const KernelBank<T>&);       \
  template void vmf_likelihoods_backward<T>(const FeatureField<T>&, const KernelBank<T>&,          \
                                            const VmfDecomposition<T>&, const Tensor<T>&, VmfNorm, \
                                            Tensor<T>&, Tensor<T>&);                               \
  template void vmf_loss_backward<T>(const FeatureField<T>&, const KernelBank<T>&,                 \
                                     const std::vector<int>&, T, Tensor<T>&, Tensor<T>&);          \
  template void recompose_backward<T>(const LikelihoodField<T>&, const KernelBank<T>&,             \
                                      const Tensor<T>&, Tensor<T>&, Tensor<T>&);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
