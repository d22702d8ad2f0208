#include "vmfnet/layers.hpp"

#include <Eigen/Dense>
#ifdef _OPENMP
#include <omp.h>
#endif
#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <limits>

namespace vmfnet {

namespace {

#ifdef __GLIBC__
// The training loop allocates and frees multi-megabyte activation buffers
// every iteration; keep them on the heap instead of round-tripping through
// mmap (which returns kernel-zeroed pages each time).
[[maybe_unused]] const int malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return 0;
}();
#endif

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

// Unpack one sample [C,H,W] into rows of output positions [H'W', C*k*k].
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int pad, T* cols) {
  const int ho = h + 2 * pad - k + 1;
  const int wo = w + 2 * pad - k + 1;
  const int kk = k * k;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* row = cols + (static_cast<std::size_t>(oy) * wo + ox) * c * kk;
      for (int ci = 0; ci < c; ++ci) {
        const T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox + kx - pad;
            row[(ci * k + ky) * k + kx] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add column gradients back onto the input gradient.
template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int pad, T* gx) {
  const int ho = h + 2 * pad - k + 1;
  const int wo = w + 2 * pad - k + 1;
  const int kk = k * k;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const T* row = cols + (static_cast<std::size_t>(oy) * wo + ox) * c * kk;
      for (int ci = 0; ci < c; ++ci) {
        T* plane = gx + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox + kx - pad;
            if (ix < 0 || ix >= w) continue;
            plane[iy * w + ix] += row[(ci * k + ky) * k + kx];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, int cin, int cout, int ksize, int pad)
    : name_(std::move(name)), cin_(cin), cout_(cout), k_(ksize), pad_(pad) {
  w = Tensor<T>({cout, cin * ksize * ksize});
  b = Tensor<T>({cout});
  gw = zeros_like(w);
  gb = zeros_like(b);
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(cin_) * k_ * k_;
  rng.fill_normal(w, std::sqrt(2.0 / fan_in));
  b.zero();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.ndim() != 4 || x.shape[1] != cin_)
    throw ShapeError(name_ + ": expected [N," + std::to_string(cin_) + ",H,W], got " + x.shape_str());
  x_ = x;
  const int n = x.shape[0], h = x.shape[2], w_in = x.shape[3];
  const int ho = h + 2 * pad_ - k_ + 1, wo = w_in + 2 * pad_ - k_ + 1;
  const int kdim = cin_ * k_ * k_;
  Tensor<T> y({n, cout_, ho, wo});
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(ho) * wo * kdim);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      im2col(x.ptr() + static_cast<std::size_t>(i) * cin_ * h * w_in, cin_, h, w_in, k_, pad_,
             cols.data());
      MapM<T> yi(y.ptr() + static_cast<std::size_t>(i) * cout_ * ho * wo, cout_, ho * wo);
      MapCM<T> cm(cols.data(), ho * wo, kdim);
      MapCM<T> wm(w.ptr(), cout_, kdim);
      yi.noalias() = wm * cm.transpose();
      for (int co = 0; co < cout_; ++co) yi.row(co).array() += b[static_cast<std::size_t>(co)];
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& gy) {
  const int n = x_.shape[0], h = x_.shape[2], w_in = x_.shape[3];
  const int ho = gy.shape[2], wo = gy.shape[3];
  const int kdim = cin_ * k_ * k_;
  Tensor<T> gx(x_.shape);
  // per-sample partial weight grads, reduced in sample order for determinism
  Tensor<T> gw_part({n, cout_, kdim});
  Tensor<T> gb_part({n, cout_});
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(ho) * wo * kdim);
    std::vector<T> gcols(static_cast<std::size_t>(ho) * wo * kdim);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      im2col(x_.ptr() + static_cast<std::size_t>(i) * cin_ * h * w_in, cin_, h, w_in, k_, pad_,
             cols.data());
      MapCM<T> gyi(gy.ptr() + static_cast<std::size_t>(i) * cout_ * ho * wo, cout_, ho * wo);
      MapCM<T> cm(cols.data(), ho * wo, kdim);
      MapM<T> gwp(gw_part.ptr() + static_cast<std::size_t>(i) * cout_ * kdim, cout_, kdim);
      gwp.noalias() = gyi * cm;
      // plain fixed-order loop: Eigen's vectorized sum peels to the operand's
      // runtime alignment, which would make the reduction order vary run to run
      for (int co = 0; co < cout_; ++co) {
        const T* row = gy.ptr() + (static_cast<std::size_t>(i) * cout_ + co) * ho * wo;
        T acc = T(0);
        for (int p = 0; p < ho * wo; ++p) acc += row[p];
        gb_part.at(i, co) = acc;
      }
      MapM<T> gc(gcols.data(), ho * wo, kdim);
      MapCM<T> wm(w.ptr(), cout_, kdim);
      gc.noalias() = gyi.transpose() * wm;
      col2im(gcols.data(), cin_, h, w_in, k_, pad_,
             gx.ptr() + static_cast<std::size_t>(i) * cin_ * h * w_in);
    }
  }
  for (int i = 0; i < n; ++i) {
    MapM<T>(gw.ptr(), cout_, kdim) +=
        MapCM<T>(gw_part.ptr() + static_cast<std::size_t>(i) * cout_ * kdim, cout_, kdim);
    for (int co = 0; co < cout_; ++co) gb[static_cast<std::size_t>(co)] += gb_part.at(i, co);
  }
  return gx;
}

template <typename T>
void Conv2d<T>::collect(ParamSet<T>& out) {
  out.push_back({name_ + ".w", &w, &gw, true});
  out.push_back({name_ + ".b", &b, &gb, true});
}

template <typename T>
void Conv2d<T>::zero_grad() {
  gw.zero();
  gb.zero();
}

template <typename T>
std::size_t Conv2d<T>::param_count() const {
  return w.numel() + b.numel();
}

// ---------------------------------------------------------------------------
// ConvTranspose2d (kernel 2, stride 2)
// ---------------------------------------------------------------------------

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int cin, int cout)
    : name_(std::move(name)), cin_(cin), cout_(cout) {
  w = Tensor<T>({cin, cout * 4});
  b = Tensor<T>({cout});
  gw = zeros_like(w);
  gb = zeros_like(b);
}

template <typename T>
void ConvTranspose2d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(cin_);  // each output sees one input position
  rng.fill_normal(w, std::sqrt(2.0 / fan_in));
  b.zero();
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x) {
  if (x.ndim() != 4 || x.shape[1] != cin_)
    throw ShapeError(name_ + ": expected [N," + std::to_string(cin_) + ",H,W], got " + x.shape_str());
  x_ = x;
  const int n = x.shape[0], h = x.shape[2], w_in = x.shape[3];
  const int hw = h * w_in;
  Tensor<T> y({n, cout_, 2 * h, 2 * w_in});
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(cout_) * 4 * hw);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      MapCM<T> xi(x.ptr() + static_cast<std::size_t>(i) * cin_ * hw, cin_, hw);
      MapCM<T> wm(w.ptr(), cin_, cout_ * 4);
      MapM<T> cm(cols.data(), cout_ * 4, hw);
      cm.noalias() = wm.transpose() * xi;
      T* yi = y.ptr() + static_cast<std::size_t>(i) * cout_ * 4 * hw;
      for (int co = 0; co < cout_; ++co) {
        T* plane = yi + static_cast<std::size_t>(co) * 4 * hw;
        const T bias = b[static_cast<std::size_t>(co)];
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w_in; ++xx) {
            const std::size_t p = static_cast<std::size_t>(yy) * w_in + xx;
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw)
                plane[static_cast<std::size_t>(2 * yy + dh) * 2 * w_in + 2 * xx + dw] =
                    cols[(static_cast<std::size_t>(co * 2 + dh) * 2 + dw) * hw + p] + bias;
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& gy) {
  const int n = x_.shape[0], h = x_.shape[2], w_in = x_.shape[3];
  const int hw = h * w_in;
  Tensor<T> gx(x_.shape);
  Tensor<T> gw_part({n, cin_, cout_ * 4});
  Tensor<T> gb_part({n, cout_});
#pragma omp parallel
  {
    std::vector<T> gcols(static_cast<std::size_t>(cout_) * 4 * hw);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      const T* gyi = gy.ptr() + static_cast<std::size_t>(i) * cout_ * 4 * hw;
      for (int co = 0; co < cout_; ++co) {
        const T* plane = gyi + static_cast<std::size_t>(co) * 4 * hw;
        T bsum = T(0);
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w_in; ++xx) {
            const std::size_t p = static_cast<std::size_t>(yy) * w_in + xx;
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw)
                gcols[(static_cast<std::size_t>(co * 2 + dh) * 2 + dw) * hw + p] =
                    plane[static_cast<std::size_t>(2 * yy + dh) * 2 * w_in + 2 * xx + dw];
          }
        }
        for (std::size_t q = 0; q < static_cast<std::size_t>(4) * hw; ++q)
          bsum += plane[q];
        gb_part.at(i, co) = bsum;
      }
      MapCM<T> xi(x_.ptr() + static_cast<std::size_t>(i) * cin_ * hw, cin_, hw);
      MapCM<T> gc(gcols.data(), cout_ * 4, hw);
      MapM<T> gwp(gw_part.ptr() + static_cast<std::size_t>(i) * cin_ * cout_ * 4, cin_, cout_ * 4);
      gwp.noalias() = xi * gc.transpose();
      MapM<T> gxi(gx.ptr() + static_cast<std::size_t>(i) * cin_ * hw, cin_, hw);
      MapCM<T> wm(w.ptr(), cin_, cout_ * 4);
      gxi.noalias() = wm * gc;
    }
  }
  for (int i = 0; i < n; ++i) {
    MapM<T>(gw.ptr(), cin_, cout_ * 4) +=
        MapCM<T>(gw_part.ptr() + static_cast<std::size_t>(i) * cin_ * cout_ * 4, cin_, cout_ * 4);
    for (int co = 0; co < cout_; ++co) gb[static_cast<std::size_t>(co)] += gb_part.at(i, co);
  }
  return gx;
}

template <typename T>
void ConvTranspose2d<T>::collect(ParamSet<T>& out) {
  out.push_back({name_ + ".w", &w, &gw, true});
  out.push_back({name_ + ".b", &b, &gb, true});
}

template <typename T>
void ConvTranspose2d<T>::zero_grad() {
  gw.zero();
  gb.zero();
}

template <typename T>
std::size_t ConvTranspose2d<T>::param_count() const {
  return w.numel() + b.numel();
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels) : name_(std::move(name)), c_(channels) {
  gamma = Tensor<T>({channels});
  gamma.fill(T(1));
  beta = Tensor<T>({channels});
  ggamma = zeros_like(gamma);
  gbeta = zeros_like(beta);
  running_mean = Tensor<T>({channels});
  running_var = Tensor<T>({channels});
  running_var.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.ndim() != 4 || x.shape[1] != c_)
    throw ShapeError(name_ + ": expected [N," + std::to_string(c_) + ",H,W], got " + x.shape_str());
  mode_ = mode;
  const int n = x.shape[0], hw = x.shape[2] * x.shape[3];
  Tensor<T> y(x.shape);
  xhat_ = Tensor<T>(x.shape);
  if (mode == Mode::kTrain) {
    inv_std_ = Tensor<T>({n, c_});
    Tensor<T> means({n, c_}), vars({n, c_});
#pragma omp parallel for schedule(static) collapse(2)
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c_; ++ch) {
        const T* xp = x.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
        T* hp = xhat_.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
        T* yp = y.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
        T m = T(0);
        for (int p = 0; p < hw; ++p) m += xp[p];
        m /= static_cast<T>(hw);
        T v = T(0);
        for (int p = 0; p < hw; ++p) v += (xp[p] - m) * (xp[p] - m);
        v /= static_cast<T>(hw);
        const T is = T(1) / std::sqrt(v + eps);
        means.at(i, ch) = m;
        vars.at(i, ch) = v;
        inv_std_.at(i, ch) = is;
        const T g = gamma[static_cast<std::size_t>(ch)], be = beta[static_cast<std::size_t>(ch)];
        for (int p = 0; p < hw; ++p) {
          hp[p] = (xp[p] - m) * is;
          yp[p] = g * hp[p] + be;
        }
      }
    }
    for (int ch = 0; ch < c_; ++ch) {
      T ms = T(0), vs = T(0);
      for (int i = 0; i < n; ++i) {
        ms += means.at(i, ch);
        vs += vars.at(i, ch);
      }
      running_mean[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * running_mean[static_cast<std::size_t>(ch)] + momentum * ms / static_cast<T>(n);
      running_var[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * running_var[static_cast<std::size_t>(ch)] + momentum * vs / static_cast<T>(n);
    }
  } else {
#pragma omp parallel for schedule(static) collapse(2)
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c_; ++ch) {
        const T* xp = x.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
        T* hp = xhat_.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
        T* yp = y.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
        const T m = running_mean[static_cast<std::size_t>(ch)];
        const T is = T(1) / std::sqrt(running_var[static_cast<std::size_t>(ch)] + eps);
        const T g = gamma[static_cast<std::size_t>(ch)], be = beta[static_cast<std::size_t>(ch)];
        for (int p = 0; p < hw; ++p) {
          hp[p] = (xp[p] - m) * is;
          yp[p] = g * hp[p] + be;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& gy) {
  const int n = gy.shape[0], hw = gy.shape[2] * gy.shape[3];
  Tensor<T> gx(gy.shape);
  Tensor<T> gg_part({n, c_}), gb_part({n, c_});
#pragma omp parallel for schedule(static) collapse(2)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c_; ++ch) {
      const T* gp = gy.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
      const T* hp = xhat_.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
      T* op = gx.ptr() + (static_cast<std::size_t>(i) * c_ + ch) * hw;
      T sg = T(0), sgh = T(0);
      for (int p = 0; p < hw; ++p) {
        sg += gp[p];
        sgh += gp[p] * hp[p];
      }
      gg_part.at(i, ch) = sgh;
      gb_part.at(i, ch) = sg;
      const T g = gamma[static_cast<std::size_t>(ch)];
      if (mode_ == Mode::kTrain) {
        const T is = inv_std_.at(i, ch);
        const T inv_hw = T(1) / static_cast<T>(hw);
        for (int p = 0; p < hw; ++p)
          op[p] = g * is * (gp[p] - inv_hw * sg - hp[p] * inv_hw * sgh);
      } else {
        const T is = T(1) / std::sqrt(running_var[static_cast<std::size_t>(ch)] + eps);
        for (int p = 0; p < hw; ++p) op[p] = g * is * gp[p];
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c_; ++ch) {
      ggamma[static_cast<std::size_t>(ch)] += gg_part.at(i, ch);
      gbeta[static_cast<std::size_t>(ch)] += gb_part.at(i, ch);
    }
  }
  return gx;
}

template <typename T>
void BatchNorm2d<T>::collect(ParamSet<T>& out) {
  out.push_back({name_ + ".gamma", &gamma, &ggamma, true});
  out.push_back({name_ + ".beta", &beta, &gbeta, true});
  out.push_back({name_ + ".running_mean", &running_mean, nullptr, false});
  out.push_back({name_ + ".running_var", &running_var, nullptr, false});
}

template <typename T>
void BatchNorm2d<T>::zero_grad() {
  ggamma.zero();
  gbeta.zero();
}

// ---------------------------------------------------------------------------
// ReLU / Sigmoid / MaxPool2d / concat
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  shape_ = x.shape;
  mask_.resize(x.numel());
  Tensor<T> y(x.shape);
  const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const bool pos = x.data[static_cast<std::size_t>(i)] > T(0);
    mask_[static_cast<std::size_t>(i)] = pos;
    y.data[static_cast<std::size_t>(i)] = pos ? x.data[static_cast<std::size_t>(i)] : T(0);
  }
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape);
  const std::size_t n = gy.numel();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    gx.data[static_cast<std::size_t>(i)] =
        mask_[static_cast<std::size_t>(i)] ? gy.data[static_cast<std::size_t>(i)] : T(0);
  return gx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
  y_ = Tensor<T>(x.shape);
  const std::size_t n = x.numel();
  constexpr T lo = std::numeric_limits<T>::epsilon();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const T v = T(1) / (T(1) + std::exp(-x.data[static_cast<std::size_t>(i)]));
    y_.data[static_cast<std::size_t>(i)] = std::min(std::max(v, lo), hi);
  }
  return y_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape);
  const std::size_t n = gy.numel();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const T s = y_.data[static_cast<std::size_t>(i)];
    gx.data[static_cast<std::size_t>(i)] = gy.data[static_cast<std::size_t>(i)] * s * (T(1) - s);
  }
  return gx;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape;
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const int ho = h / 2, wo = w / 2;
  Tensor<T> y({n, c, ho, wo});
  argmax_.resize(y.numel());
#pragma omp parallel for schedule(static) collapse(2)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = x.ptr() + (static_cast<std::size_t>(i) * c + ch) * h * w;
      T* yp = y.ptr() + (static_cast<std::size_t>(i) * c + ch) * ho * wo;
      int* ap = argmax_.data() + (static_cast<std::size_t>(i) * c + ch) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          int best = (2 * oy) * w + 2 * ox;
          T bv = xp[best];
          const int cand[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox,
                               (2 * oy + 1) * w + 2 * ox + 1};
          for (int q : cand)
            if (xp[q] > bv) {
              bv = xp[q];
              best = q;
            }
          yp[oy * wo + ox] = bv;
          ap[oy * wo + ox] = best;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& gy) {
  const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  const int ho = h / 2, wo = w / 2;
  Tensor<T> gx(in_shape_);
#pragma omp parallel for schedule(static) collapse(2)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* gp = gy.ptr() + (static_cast<std::size_t>(i) * c + ch) * ho * wo;
      T* op = gx.ptr() + (static_cast<std::size_t>(i) * c + ch) * h * w;
      const int* ap = argmax_.data() + (static_cast<std::size_t>(i) * c + ch) * ho * wo;
      for (int p = 0; p < ho * wo; ++p) op[ap[p]] += gp[p];
    }
  }
  return gx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
    throw ShapeError("concat_channels: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  const int n = a.shape[0], ca = a.shape[1], cb = b.shape[1], hw = a.shape[2] * a.shape[3];
  Tensor<T> y({n, ca + cb, a.shape[2], a.shape[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + static_cast<std::size_t>(i) * ca * hw, static_cast<std::size_t>(ca) * hw,
                y.ptr() + static_cast<std::size_t>(i) * (ca + cb) * hw);
    std::copy_n(b.ptr() + static_cast<std::size_t>(i) * cb * hw, static_cast<std::size_t>(cb) * hw,
                y.ptr() + static_cast<std::size_t>(i) * (ca + cb) * hw + static_cast<std::size_t>(ca) * hw);
  }
  return y;
}

template <typename T>
void split_channels_backward(const Tensor<T>& g, int ca, Tensor<T>& ga, Tensor<T>& gb) {
  const int n = g.shape[0], c = g.shape[1], hw = g.shape[2] * g.shape[3];
  const int cb = c - ca;
  ga = Tensor<T>({n, ca, g.shape[2], g.shape[3]});
  gb = Tensor<T>({n, cb, g.shape[2], g.shape[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(g.ptr() + static_cast<std::size_t>(i) * c * hw, static_cast<std::size_t>(ca) * hw,
                ga.ptr() + static_cast<std::size_t>(i) * ca * hw);
    std::copy_n(g.ptr() + static_cast<std::size_t>(i) * c * hw + static_cast<std::size_t>(ca) * hw,
                static_cast<std::size_t>(cb) * hw, gb.ptr() + static_cast<std::size_t>(i) * cb * hw);
  }
}

#define VMFNET_INSTANTIATE(T)                                                               \
  template class Conv2d<T>;                                                                \
  template class ConvTranspose2d<T>;                                                       \
  template class BatchNorm2d<T>;                                                           \
  template class ReLU<T>;                                                                  \
  template class Sigmoid<T>;                                                               \
  template class MaxPool2d<T>;                                                             \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);               \
  template void split_channels_backward<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
