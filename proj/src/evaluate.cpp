#include "vmfnet/evaluate.hpp"

namespace vmfnet {

template <typename T>
std::vector<std::vector<std::uint8_t>> predict_labels(VmfNet<T>& model, const Tensor<T>& x) {
  const auto& fwd = model.forward(x, Mode::kEval);
  const int n = fwd.yhat.shape[0], c = fwd.yhat.shape[1];
  const int hw = fwd.yhat.shape[2] * fwd.yhat.shape[3];
  std::vector<std::vector<std::uint8_t>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& labels = out[static_cast<std::size_t>(i)];
    labels.resize(static_cast<std::size_t>(hw));
    const T* base = fwd.yhat.ptr() + static_cast<std::size_t>(i) * c * hw;
    for (int p = 0; p < hw; ++p) {
      int best = 0;
      T bv = base[p];
      for (int ch = 1; ch < c; ++ch) {
        const T v = base[static_cast<std::size_t>(ch) * hw + p];
        if (v > bv) {
          bv = v;
          best = ch;
        }
      }
      labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template <typename T>
Tensor<T> subject_batch(const Dataset& ds, int subject_index) {
  const Subject& subj = ds.subjects[static_cast<std::size_t>(subject_index)];
  const int s = static_cast<int>(subj.sample_indices.size());
  const Sample& first = ds.samples[static_cast<std::size_t>(subj.sample_indices[0])];
  Tensor<T> x({s, 1, first.h, first.w});
  for (int k = 0; k < s; ++k) {
    const Sample& sm = ds.samples[static_cast<std::size_t>(subj.sample_indices[static_cast<std::size_t>(k)])];
    T* dst = x.ptr() + static_cast<std::size_t>(k) * first.h * first.w;
    for (std::size_t p = 0; p < sm.image.size(); ++p) dst[p] = static_cast<T>(sm.image[p]) / T(255);
  }
  return x;
}

template <typename T>
MetricReport evaluate_model(VmfNet<T>& model, const Dataset& test_set, HdVariant variant) {
  const int classes = test_set.num_classes;
  std::vector<SubjectMetrics> rows;
  int both_empty = 0;
  for (std::size_t si = 0; si < test_set.subjects.size(); ++si) {
    const Subject& subj = test_set.subjects[si];
    const Tensor<T> x = subject_batch<T>(test_set, static_cast<int>(si));
    const auto preds = predict_labels(model, x);

    SubjectMetrics sm;
    sm.subject_id = subj.id;
    std::vector<DiceCounts> counts(static_cast<std::size_t>(classes));
    std::vector<double> hd_sum(static_cast<std::size_t>(classes), 0.0);
    std::vector<int> hd_n(static_cast<std::size_t>(classes), 0);
    for (std::size_t k = 0; k < subj.sample_indices.size(); ++k) {
      const Sample& sample =
          test_set.samples[static_cast<std::size_t>(subj.sample_indices[k])];
      if (!sample.has_mask())
        throw InvalidInputError("evaluate: subject " + subj.id + " lacks ground-truth masks");
      for (int c = 1; c <= classes; ++c) {
        counts[static_cast<std::size_t>(c - 1)].add(preds[k], sample.mask, c);
        const auto hd = hausdorff(preds[k], sample.mask, sample.h, sample.w, c, variant);
        if (hd) {
          hd_sum[static_cast<std::size_t>(c - 1)] += *hd;
          ++hd_n[static_cast<std::size_t>(c - 1)];
        }
      }
    }
    for (int c = 0; c < classes; ++c) {
      if (counts[static_cast<std::size_t>(c)].both_empty()) ++both_empty;
      sm.dice_pct.push_back(counts[static_cast<std::size_t>(c)].percentage());
      if (hd_n[static_cast<std::size_t>(c)] > 0)
        sm.hd.push_back(hd_sum[static_cast<std::size_t>(c)] / hd_n[static_cast<std::size_t>(c)]);
      else
        sm.hd.push_back(std::nullopt);
    }
    rows.push_back(std::move(sm));
  }
  return aggregate_metrics(std::move(rows), classes, variant, both_empty);
}

#define VMFNET_INSTANTIATE(T)                                                              \
  template std::vector<std::vector<std::uint8_t>> predict_labels<T>(VmfNet<T>&,           \
                                                                    const Tensor<T>&);    \
  template Tensor<T> subject_batch<T>(const Dataset&, int);                               \
  template MetricReport evaluate_model<T>(VmfNet<T>&, const Dataset&, HdVariant);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
