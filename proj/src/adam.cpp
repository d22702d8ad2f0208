#include "vmfnet/adam.hpp"

#include <cmath>

namespace vmfnet {

template <typename T>
Adam<T>::Adam(ParamSet<T> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params)
    if (p.trainable) params_.push_back(p);
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& p : params_) {
    m_.push_back(zeros_like(*p.value));
    v_.push_back(zeros_like(*p.value));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T corr1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const T corr2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    T* p = params_[i].value->ptr();
    const T* g = params_[i].grad->ptr();
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    const std::size_t n = params_[i].value->numel();
    for (std::size_t q = 0; q < n; ++q) {
      m[q] = b1 * m[q] + (T(1) - b1) * g[q];
      v[q] = b2 * v[q] + (T(1) - b2) * g[q] * g[q];
    }
    if (lr_ != 0.0) {
      for (std::size_t q = 0; q < n; ++q) {
        const T mhat = m[q] / corr1;
        const T vhat = v[q] / corr2;
        p[q] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
}

template <typename T>
std::vector<typename Adam<T>::Slot> Adam<T>::slots() {
  std::vector<Slot> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    out.push_back({params_[i].name, &m_[i], &v_[i]});
  return out;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace vmfnet
