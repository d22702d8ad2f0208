#include "vmfnet/networks.hpp"

#include <cstdio>

namespace vmfnet {

namespace {

// [C,H,W] -> [H,W,C]
template <typename T>
void chw_to_hwc(const T* src, int c, int h, int w, T* dst) {
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p) dst[static_cast<std::size_t>(p) * c + ch] = src[static_cast<std::size_t>(ch) * h * w + p];
}

// [H,W,C] -> [C,H,W]
template <typename T>
void hwc_to_chw(const T* src, int c, int h, int w, T* dst) {
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < h * w; ++p) dst[static_cast<std::size_t>(ch) * h * w + p] = src[static_cast<std::size_t>(p) * c + ch];
}

}  // namespace

void EncoderConfig::validate() const {
  if (depth < 1) throw ConfigError("encoder depth must be >= 1");
  if (base_channels < 1 || feature_dim < 1 || in_channels < 1)
    throw ConfigError("encoder channel counts must be positive");
  const int div = 1 << depth;
  if (input_h % div != 0 || input_w % div != 0)
    throw ConfigError("encoder input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " must be divisible by 2^depth = " + std::to_string(div));
}

void HeadConfig::validate() const {
  if (in_channels < 1 || hidden_channels < 1 || out_channels < 1)
    throw ConfigError("head channel counts must be positive");
}

void VmfNetConfig::validate() const {
  encoder.validate();
  task_head().validate();
  recon_head().validate();
  if (num_kernels < 2) throw ConfigError("need at least 2 vMF kernels");
  if (sigma <= 0) throw ConfigError("sigma must be positive");
  if (num_classes < 1) throw ConfigError("need at least one foreground class");
  if (encoder.feature_dim < num_kernels)
    std::fprintf(stderr, "[warn] feature_dim (%d) < kernel count (%d); kernels cannot be linearly independent\n",
                 encoder.feature_dim, num_kernels);
}

// ---------------------------------------------------------------------------
// DoubleConv
// ---------------------------------------------------------------------------

template <typename T>
DoubleConv<T>::DoubleConv(const std::string& name, int cin, int cout)
    : c1_(name + ".conv1", cin, cout, 3, 1),
      c2_(name + ".conv2", cout, cout, 3, 1),
      bn1_(name + ".bn1", cout),
      bn2_(name + ".bn2", cout) {}

template <typename T>
void DoubleConv<T>::init(Rng& rng) {
  c1_.init(rng);
  c2_.init(rng);
}

template <typename T>
Tensor<T> DoubleConv<T>::forward(const Tensor<T>& x, Mode mode) {
  auto y = r1_.forward(bn1_.forward(c1_.forward(x), mode));
  return r2_.forward(bn2_.forward(c2_.forward(y), mode));
}

template <typename T>
Tensor<T> DoubleConv<T>::backward(const Tensor<T>& gy) {
  auto g = c2_.backward(bn2_.backward(r2_.backward(gy)));
  return c1_.backward(bn1_.backward(r1_.backward(g)));
}

template <typename T>
void DoubleConv<T>::collect(ParamSet<T>& out) {
  c1_.collect(out);
  bn1_.collect(out);
  c2_.collect(out);
  bn2_.collect(out);
}

template <typename T>
void DoubleConv<T>::zero_grad() {
  c1_.zero_grad();
  bn1_.zero_grad();
  c2_.zero_grad();
  bn2_.zero_grad();
}

template <typename T>
std::size_t DoubleConv<T>::param_count(int cin, int cout) {
  const std::size_t conv1 = static_cast<std::size_t>(cout) * cin * 9 + cout;
  const std::size_t conv2 = static_cast<std::size_t>(cout) * cout * 9 + cout;
  return conv1 + conv2 + 4 * static_cast<std::size_t>(cout);  // two BN (gamma, beta) pairs
}

// ---------------------------------------------------------------------------
// UNetEncoder
// ---------------------------------------------------------------------------

template <typename T>
UNetEncoder<T>::UNetEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  int cin = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const int cout = cfg.base_channels << i;
    downs_.emplace_back("encoder.down" + std::to_string(i), cin, cout);
    pools_.emplace_back();
    skip_channels_.push_back(cout);
    cin = cout;
  }
  const int cbot = cfg.base_channels << cfg.depth;
  bottom_ = DoubleConv<T>("encoder.bottom", cin, cbot);
  int cur = cbot;
  for (int j = cfg.depth - 1; j >= 1; --j) {
    const int cout = cfg.base_channels << j;
    up_convs_.emplace_back("encoder.up" + std::to_string(j) + ".tconv", cur, cout);
    up_blocks_.emplace_back("encoder.up" + std::to_string(j) + ".block", cout * 2, cout);
    cur = cout;
  }
  feature_conv_ = Conv2d<T>("encoder.feature_conv", cur, cfg.feature_dim, 3, 1);
}

template <typename T>
void UNetEncoder<T>::init(Rng& rng) {
  for (auto& d : downs_) d.init(rng);
  bottom_.init(rng);
  for (std::size_t i = 0; i < up_convs_.size(); ++i) {
    up_convs_[i].init(rng);
    up_blocks_[i].init(rng);
  }
  feature_conv_.init(rng);
}

template <typename T>
Tensor<T> UNetEncoder<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.ndim() != 4 || x.shape[1] != cfg_.in_channels || x.shape[2] != cfg_.input_h ||
      x.shape[3] != cfg_.input_w)
    throw ShapeError("encoder: expected [N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.input_h) + "," + std::to_string(cfg_.input_w) + "], got " +
                     x.shape_str());
  std::vector<Tensor<T>> skips;
  Tensor<T> cur = x;
  for (int i = 0; i < cfg_.depth; ++i) {
    skips.push_back(downs_[static_cast<std::size_t>(i)].forward(cur, mode));
    cur = pools_[static_cast<std::size_t>(i)].forward(skips.back());
  }
  cur = bottom_.forward(cur, mode);
  for (std::size_t u = 0; u < up_convs_.size(); ++u) {
    cur = up_convs_[u].forward(cur);
    const auto& skip = skips[static_cast<std::size_t>(cfg_.depth) - 1 - u];
    cur = up_blocks_[u].forward(concat_channels(cur, skip), mode);
  }
  return feature_conv_.forward(cur);
}

template <typename T>
Tensor<T> UNetEncoder<T>::backward(const Tensor<T>& gy) {
  Tensor<T> g = feature_conv_.backward(gy);
  std::vector<Tensor<T>> skip_grads(static_cast<std::size_t>(cfg_.depth));
  for (std::size_t u = up_convs_.size(); u-- > 0;) {
    Tensor<T> gcat = up_blocks_[u].backward(g);
    Tensor<T> gup, gskip;
    split_channels_backward(gcat, up_convs_[u].w.shape[1] / 4, gup, gskip);
    skip_grads[static_cast<std::size_t>(cfg_.depth) - 1 - u] = std::move(gskip);
    g = up_convs_[u].backward(gup);
  }
  g = bottom_.backward(g);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    Tensor<T> gs = pools_[static_cast<std::size_t>(i)].backward(g);
    if (skip_grads[static_cast<std::size_t>(i)].numel() > 0) {
      for (std::size_t q = 0; q < gs.numel(); ++q)
        gs.data[q] += skip_grads[static_cast<std::size_t>(i)].data[q];
    }
    g = downs_[static_cast<std::size_t>(i)].backward(gs);
  }
  return g;
}

template <typename T>
void UNetEncoder<T>::collect(ParamSet<T>& out) {
  for (auto& d : downs_) d.collect(out);
  bottom_.collect(out);
  for (std::size_t i = 0; i < up_convs_.size(); ++i) {
    up_convs_[i].collect(out);
    up_blocks_[i].collect(out);
  }
  feature_conv_.collect(out);
}

template <typename T>
void UNetEncoder<T>::zero_grad() {
  for (auto& d : downs_) d.zero_grad();
  bottom_.zero_grad();
  for (std::size_t i = 0; i < up_convs_.size(); ++i) {
    up_convs_[i].zero_grad();
    up_blocks_[i].zero_grad();
  }
  feature_conv_.zero_grad();
}

template <typename T>
std::size_t UNetEncoder<T>::param_count(const EncoderConfig& cfg) {
  std::size_t total = 0;
  int cin = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const int cout = cfg.base_channels << i;
    total += DoubleConv<T>::param_count(cin, cout);
    cin = cout;
  }
  const int cbot = cfg.base_channels << cfg.depth;
  total += DoubleConv<T>::param_count(cin, cbot);
  int cur = cbot;
  for (int j = cfg.depth - 1; j >= 1; --j) {
    const int cout = cfg.base_channels << j;
    total += static_cast<std::size_t>(cur) * cout * 4 + cout;  // transposed conv
    total += DoubleConv<T>::param_count(cout * 2, cout);
    cur = cout;
  }
  total += static_cast<std::size_t>(cfg.feature_dim) * cur * 9 + cfg.feature_dim;
  return total;
}

// ---------------------------------------------------------------------------
// ConvHead
// ---------------------------------------------------------------------------

template <typename T>
ConvHead<T>::ConvHead(const std::string& name, const HeadConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  d1_ = DoubleConv<T>(name + ".block1", cfg.in_channels, cfg.hidden_channels);
  up_ = ConvTranspose2d<T>(name + ".up", cfg.hidden_channels, cfg.hidden_channels);
  d2_ = DoubleConv<T>(name + ".block2", cfg.hidden_channels, cfg.hidden_channels);
  out_conv_ = Conv2d<T>(name + ".out", cfg.hidden_channels, cfg.out_channels, 1, 0);
}

template <typename T>
void ConvHead<T>::init(Rng& rng) {
  d1_.init(rng);
  up_.init(rng);
  d2_.init(rng);
  out_conv_.init(rng);
}

template <typename T>
Tensor<T> ConvHead<T>::forward(const Tensor<T>& x, Mode mode) {
  auto y = d1_.forward(x, mode);
  y = up_.forward(y);
  y = d2_.forward(y, mode);
  return sig_.forward(out_conv_.forward(y));
}

template <typename T>
Tensor<T> ConvHead<T>::backward(const Tensor<T>& gy) {
  auto g = out_conv_.backward(sig_.backward(gy));
  g = d2_.backward(g);
  g = up_.backward(g);
  return d1_.backward(g);
}

template <typename T>
void ConvHead<T>::collect(ParamSet<T>& out) {
  d1_.collect(out);
  up_.collect(out);
  d2_.collect(out);
  out_conv_.collect(out);
}

template <typename T>
void ConvHead<T>::zero_grad() {
  d1_.zero_grad();
  up_.zero_grad();
  d2_.zero_grad();
  out_conv_.zero_grad();
}

template <typename T>
std::size_t ConvHead<T>::param_count(const HeadConfig& cfg) {
  std::size_t total = DoubleConv<T>::param_count(cfg.in_channels, cfg.hidden_channels);
  total += static_cast<std::size_t>(cfg.hidden_channels) * cfg.hidden_channels * 4 + cfg.hidden_channels;
  total += DoubleConv<T>::param_count(cfg.hidden_channels, cfg.hidden_channels);
  total += static_cast<std::size_t>(cfg.out_channels) * cfg.hidden_channels + cfg.out_channels;
  return total;
}

// ---------------------------------------------------------------------------
// VmfNet
// ---------------------------------------------------------------------------

template <typename T>
VmfNet<T>::VmfNet(const VmfNetConfig& cfg)
    : cfg_(cfg),
      encoder_(cfg.encoder),
      task_head_("task", cfg.task_head()),
      recon_head_("recon", cfg.recon_head()) {
  cfg.validate();
  bank_.sigma = static_cast<T>(cfg.sigma);
  bank_.mu = Tensor<T>({cfg.num_kernels, cfg.encoder.feature_dim});
  gmu_ = zeros_like(bank_.mu);
}

template <typename T>
void VmfNet<T>::init(std::uint64_t seed) {
  Rng enc_rng(Rng::derive(seed, 0x656e63));
  encoder_.init(enc_rng);
  Rng task_rng(Rng::derive(seed, 0x7461736b));
  task_head_.init(task_rng);
  Rng rec_rng(Rng::derive(seed, 0x7265636f));
  recon_head_.init(rec_rng);
  Rng mu_rng(Rng::derive(seed, 0x6d75));
  bank_ = KernelBank<T>::random(cfg_.num_kernels, cfg_.encoder.feature_dim,
                                static_cast<T>(cfg_.sigma), mu_rng);
}

template <typename T>
const typename VmfNet<T>::ForwardResult& VmfNet<T>::forward(const Tensor<T>& x, Mode mode) {
  const int n = x.shape[0];
  raw_feats_ = encoder_.forward(x, mode);
  const int d = cfg_.encoder.feature_dim;
  const int h = raw_feats_.shape[2], w = raw_feats_.shape[3];
  const int j = cfg_.num_kernels;

  unit_bank_ = project_kernels(bank_);
  fwd_.z.assign(static_cast<std::size_t>(n), {});
  fwd_.dec.assign(static_cast<std::size_t>(n), {});
  fwd_.recomposed.assign(static_cast<std::size_t>(n), {});
  raw_fields_.assign(static_cast<std::size_t>(n), {});

  Tensor<T> lik_nchw({n, j, h, w});
  Tensor<T> rec_nchw({n, d, h, w});
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Tensor<T> field({h, w, d});
    chw_to_hwc(raw_feats_.ptr() + static_cast<std::size_t>(i) * d * h * w, d, h, w, field.ptr());
    raw_fields_[static_cast<std::size_t>(i)] = field;
    fwd_.z[static_cast<std::size_t>(i)] = normalize_features(field);
    fwd_.dec[static_cast<std::size_t>(i)] =
        vmf_decompose(fwd_.z[static_cast<std::size_t>(i)], unit_bank_, cfg_.norm);
    fwd_.recomposed[static_cast<std::size_t>(i)] =
        recompose(fwd_.dec[static_cast<std::size_t>(i)].lik, unit_bank_);
    hwc_to_chw(fwd_.dec[static_cast<std::size_t>(i)].lik.data.ptr(), j, h, w,
               lik_nchw.ptr() + static_cast<std::size_t>(i) * j * h * w);
    hwc_to_chw(fwd_.recomposed[static_cast<std::size_t>(i)].data.ptr(), d, h, w,
               rec_nchw.ptr() + static_cast<std::size_t>(i) * d * h * w);
  }
  T vloss = T(0);
  for (int i = 0; i < n; ++i) vloss += fwd_.dec[static_cast<std::size_t>(i)].cluster_loss;
  fwd_.vmf_loss = vloss / static_cast<T>(n);

  fwd_.yhat = task_head_.forward(lik_nchw, mode);
  fwd_.xhat = recon_head_.forward(rec_nchw, mode);
  return fwd_;
}

template <typename T>
void VmfNet<T>::backward(const Tensor<T>& gyhat, const Tensor<T>& gxhat, T vmf_weight) {
  const int n = raw_feats_.shape[0];
  const int d = cfg_.encoder.feature_dim;
  const int h = raw_feats_.shape[2], w = raw_feats_.shape[3];
  const int j = cfg_.num_kernels;

  Tensor<T> glik_nchw, grec_nchw;
  if (gyhat.numel() > 0) glik_nchw = task_head_.backward(gyhat);
  if (gxhat.numel() > 0) grec_nchw = recon_head_.backward(gxhat);

  Tensor<T> graw({n, d, h, w});
  Tensor<T> gmu_unit_part({n, j, d});
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const auto& z = fwd_.z[static_cast<std::size_t>(i)];
    const auto& dec = fwd_.dec[static_cast<std::size_t>(i)];
    Tensor<T> gmu_unit({j, d});
    Tensor<T> grad_lik({h, w, j});
    if (glik_nchw.numel() > 0)
      chw_to_hwc(glik_nchw.ptr() + static_cast<std::size_t>(i) * j * h * w, j, h, w, grad_lik.ptr());
    if (grec_nchw.numel() > 0) {
      Tensor<T> grec_field({h, w, d});
      chw_to_hwc(grec_nchw.ptr() + static_cast<std::size_t>(i) * d * h * w, d, h, w, grec_field.ptr());
      recompose_backward(dec.lik, unit_bank_, grec_field, grad_lik, gmu_unit);
    }
    Tensor<T> grad_z({h, w, d});
    vmf_likelihoods_backward(z, unit_bank_, dec, grad_lik, cfg_.norm, grad_z, gmu_unit);
    if (vmf_weight != T(0))
      vmf_loss_backward(z, unit_bank_, dec.argmax, vmf_weight / static_cast<T>(n), grad_z, gmu_unit);
    Tensor<T> graw_field({h, w, d});
    normalize_features_backward(raw_fields_[static_cast<std::size_t>(i)], grad_z, graw_field);
    hwc_to_chw(graw_field.ptr(), d, h, w, graw.ptr() + static_cast<std::size_t>(i) * d * h * w);
    std::copy(gmu_unit.data.begin(), gmu_unit.data.end(),
              gmu_unit_part.data.begin() + static_cast<std::size_t>(i) * j * d);
  }
  Tensor<T> gmu_unit_total({j, d});
  for (int i = 0; i < n; ++i)
    for (std::size_t q = 0; q < gmu_unit_total.numel(); ++q)
      gmu_unit_total.data[q] += gmu_unit_part.data[static_cast<std::size_t>(i) * j * d + q];
  project_kernels_backward(bank_.mu, gmu_unit_total, gmu_);

  encoder_.backward(graw);
}

template <typename T>
ParamSet<T> VmfNet<T>::params() {
  ParamSet<T> out;
  encoder_.collect(out);
  out.push_back({"kernels.mu", &bank_.mu, &gmu_, true});
  task_head_.collect(out);
  recon_head_.collect(out);
  return out;
}

template <typename T>
void VmfNet<T>::zero_grad() {
  encoder_.zero_grad();
  task_head_.zero_grad();
  recon_head_.zero_grad();
  gmu_.zero();
}

template <typename T>
std::size_t VmfNet<T>::param_count() {
  std::size_t total = 0;
  for (auto& p : params())
    if (p.trainable) total += p.value->numel();
  return total;
}

template <typename T>
std::size_t VmfNet<T>::param_count(const VmfNetConfig& cfg) {
  std::size_t total = UNetEncoder<T>::param_count(cfg.encoder);
  total += static_cast<std::size_t>(cfg.num_kernels) * cfg.encoder.feature_dim;
  total += ConvHead<T>::param_count(cfg.task_head());
  total += ConvHead<T>::param_count(cfg.recon_head());
  return total;
}

#define VMFNET_INSTANTIATE(T)   \
  template class DoubleConv<T>; \
  template class UNetEncoder<T>; \
  template class ConvHead<T>;   \
  template class VmfNet<T>;

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
