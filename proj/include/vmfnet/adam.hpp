#pragma once

#include <string>
#include <vector>

#include "vmfnet/layers.hpp"
#include "vmfnet/tensor.hpp"

namespace vmfnet {

// Adam with bias correction. Holds references into the owning model's
// parameter set; the model must stay alive and unmoved.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamSet<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long long iteration() const { return t_; }
  void set_iteration(long long t) { t_ = t; }

  // Moment tensors exposed by parameter name for checkpointing.
  struct Slot {
    std::string name;
    Tensor<T>* m;
    Tensor<T>* v;
  };
  std::vector<Slot> slots();

 private:
  ParamSet<T> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
};

}  // namespace vmfnet
