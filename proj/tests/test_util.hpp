#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "vmfnet/rng.hpp"
#include "vmfnet/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / denom;
}

// Relative error with an absolute floor. The floor absorbs central-difference
// roundoff (about |f| * eps / step) for gradients that are analytically zero,
// e.g. conv biases cancelled by a following batch norm.
inline double grad_err(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

template <typename T>
vmfnet::Tensor<T> random_tensor(std::vector<int> shape, vmfnet::Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
  vmfnet::Tensor<T> t(std::move(shape));
  rng.fill_uniform(t, lo, hi);
  return t;
}

// Unique scratch directory under the build tree.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("vmfnet_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
