#include "vmfnet/viz.hpp"

#include <algorithm>
#include <cmath>

#include "vmfnet/evaluate.hpp"
#include "vmfnet/png_io.hpp"

namespace vmfnet {

namespace {

template <typename T>
GrayImage to_gray_scaled(const T* data, int h, int w, std::size_t stride) {
  GrayImage img;
  img.h = h;
  img.w = w;
  img.pixels.resize(static_cast<std::size_t>(h) * w);
  T lo = data[0], hi = data[0];
  for (int p = 0; p < h * w; ++p) {
    lo = std::min(lo, data[static_cast<std::size_t>(p) * stride]);
    hi = std::max(hi, data[static_cast<std::size_t>(p) * stride]);
  }
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  for (int p = 0; p < h * w; ++p) {
    const double v = range > 0 ? (data[static_cast<std::size_t>(p) * stride] - lo) / range : 0.0;
    img.pixels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace

template <typename T>
std::vector<int> rank_channels(const LikelihoodField<T>& lik, const std::vector<char>& foreground) {
  const int hw = lik.h * lik.w, j = lik.j;
  std::vector<double> score(static_cast<std::size_t>(j), 0.0);
  int fg_count = 0;
  for (char c : foreground) fg_count += c != 0;
  for (int p = 0; p < hw; ++p) {
    if (fg_count > 0 && !foreground[static_cast<std::size_t>(p)]) continue;
    for (int k = 0; k < j; ++k)
      score[static_cast<std::size_t>(k)] += static_cast<double>(lik.data.data[static_cast<std::size_t>(p) * j + k]);
  }
  std::vector<int> order(static_cast<std::size_t>(j));
  for (int k = 0; k < j; ++k) order[static_cast<std::size_t>(k)] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&score](int a, int b) { return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)]; });
  return order;
}

template <typename T>
std::vector<std::filesystem::path> export_channels(const LikelihoodField<T>& lik,
                                                   const std::vector<int>& order,
                                                   const std::filesystem::path& out_dir,
                                                   int top_k) {
  if (top_k > lik.j)
    throw ConfigError("viz: top_k (" + std::to_string(top_k) + ") exceeds channel count (" +
                      std::to_string(lik.j) + ")");
  std::vector<std::filesystem::path> files;
  for (int r = 0; r < top_k; ++r) {
    const int k = order[static_cast<std::size_t>(r)];
    char name[48];
    std::snprintf(name, sizeof(name), "channel_%02d_kernel%02d.png", r, k);
    const auto path = out_dir / name;
    write_gray_png(path, to_gray_scaled(lik.data.ptr() + k, lik.h, lik.w,
                                        static_cast<std::size_t>(lik.j)));
    files.push_back(path);
  }
  return files;
}

template <typename T>
std::vector<std::filesystem::path> export_likelihood_maps(VmfNet<T>& model, const Tensor<T>& image,
                                                          const std::filesystem::path& out_dir,
                                                          int top_k) {
  if (image.ndim() != 4 || image.shape[0] != 1)
    throw ShapeError("viz: expected a single [1,C,H,W] image, got " + image.shape_str());
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("viz: cannot create " + out_dir.string());

  const auto& fwd = model.forward(image, Mode::kEval);
  const auto labels = predict_labels(model, image)[0];
  const int h = image.shape[2], w = image.shape[3];

  std::vector<std::filesystem::path> files;
  files.push_back(out_dir / "00_input.png");
  write_gray_png(files.back(), to_gray_scaled(image.ptr(), h, w, 1));
  files.push_back(out_dir / "01_reconstruction.png");
  write_gray_png(files.back(), to_gray_scaled(fwd.xhat.ptr(), h, w, 1));

  // predicted labels blended over the input
  GrayImage overlay;
  overlay.h = h;
  overlay.w = w;
  overlay.pixels.resize(static_cast<std::size_t>(h) * w);
  const int classes = model.config().num_classes;
  for (int p = 0; p < h * w; ++p) {
    const double img_v = static_cast<double>(image.data[static_cast<std::size_t>(p)]);
    const double lab_v = static_cast<double>(labels[static_cast<std::size_t>(p)]) / classes;
    overlay.pixels[static_cast<std::size_t>(p)] =
        static_cast<std::uint8_t>(std::lround(std::clamp(0.5 * img_v + 0.5 * lab_v, 0.0, 1.0) * 255.0));
  }
  files.push_back(out_dir / "02_mask.png");
  write_gray_png(files.back(), overlay);

  // foreground mask at feature resolution from the prediction
  const auto& lik = fwd.dec[0].lik;
  std::vector<char> fg(static_cast<std::size_t>(lik.h) * lik.w, 0);
  for (int y = 0; y < lik.h; ++y)
    for (int x = 0; x < lik.w; ++x) {
      char v = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          v |= labels[static_cast<std::size_t>(2 * y + dy) * w + 2 * x + dx] != 0;
      fg[static_cast<std::size_t>(y) * lik.w + x] = v;
    }
  const auto order = rank_channels(lik, fg);
  for (auto& f : export_channels(lik, order, out_dir, top_k)) files.push_back(std::move(f));
  return files;
}

#define VMFNET_INSTANTIATE(T)                                                                     \
  template std::vector<int> rank_channels<T>(const LikelihoodField<T>&, const std::vector<char>&); \
  template std::vector<std::filesystem::path> export_channels<T>(                                 \
      const LikelihoodField<T>&, const std::vector<int>&, const std::filesystem::path&, int);     \
  template std::vector<std::filesystem::path> export_likelihood_maps<T>(                          \
      VmfNet<T>&, const Tensor<T>&, const std::filesystem::path&, int);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
