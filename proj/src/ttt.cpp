#include "vmfnet/ttt.hpp"

#include <cstring>
#include <sstream>

#include "vmfnet/adam.hpp"
#include "vmfnet/losses.hpp"

namespace vmfnet {

void TTTConfig::validate() const {
  if (iterations < 0) throw ConfigError("ttt iterations must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("ttt learning_rate must be > 0");
}

namespace {

// encoder (psi) and reconstructor (omega) adapt; task head (theta) and
// kernels (mu) stay frozen
template <typename T>
bool is_adaptable(const ParamRef<T>& p) {
  return p.trainable &&
         (p.name.rfind("encoder.", 0) == 0 || p.name.rfind("recon.", 0) == 0);
}

template <typename T>
std::vector<Tensor<T>> snapshot_values(const std::vector<ParamRef<T>*>& refs) {
  std::vector<Tensor<T>> out;
  out.reserve(refs.size());
  for (auto* r : refs) out.push_back(*r->value);
  return out;
}

template <typename T>
void restore_values(const std::vector<ParamRef<T>*>& refs, const std::vector<Tensor<T>>& snap) {
  for (std::size_t i = 0; i < refs.size(); ++i) *refs[i]->value = snap[i];
}

}  // namespace

template <typename T>
SubjectAdaptation adapt_subject(VmfNet<T>& model, const Dataset& ds, int subject_index,
                                const TTTConfig& cfg) {
  cfg.validate();
  const Subject& subj = ds.subjects[static_cast<std::size_t>(subject_index)];
  if (subj.sample_indices.empty())
    throw InvalidInputError("adapt_subject: subject " + subj.id + " has no images");

  auto params = model.params();
  std::vector<ParamRef<T>*> adaptable;
  ParamSet<T> adapt_set;
  for (auto& p : params)
    if (is_adaptable(p)) {
      adaptable.push_back(&p);
      adapt_set.push_back(p);
    }
  const auto original = snapshot_values(adaptable);

  Adam<T> opt(adapt_set, cfg.learning_rate);
  const Tensor<T> x = subject_batch<T>(ds, subject_index);

  SubjectAdaptation result;
  result.subject_id = subj.id;
  std::vector<std::vector<Tensor<T>>> snapshots;
  snapshots.push_back(original);

  // candidate t is the state after t steps; each loop turn evaluates the
  // current candidate, then takes the next step (statistics frozen)
  for (int t = 0; t <= cfg.iterations; ++t) {
    const auto& fwd = model.forward(x, Mode::kFrozen);
    result.candidate_errors.push_back(static_cast<double>(reconstruction_loss(x, fwd.xhat)));
    if (t == cfg.iterations) break;
    model.zero_grad();
    Tensor<T> gx(fwd.xhat.shape);
    reconstruction_loss_backward(x, fwd.xhat, T(1), gx);
    model.backward(Tensor<T>{}, gx, T(0));
    opt.step();
    snapshots.push_back(snapshot_values(adaptable));
  }

  result.baseline_error = result.candidate_errors[0];
  const int first = cfg.include_initial || cfg.iterations == 0 ? 0 : 1;
  int best = first;
  for (int t = first; t < static_cast<int>(result.candidate_errors.size()); ++t)
    if (result.candidate_errors[static_cast<std::size_t>(t)] <
        result.candidate_errors[static_cast<std::size_t>(best)])
      best = t;
  result.selected_step = best;
  result.selected_error = result.candidate_errors[static_cast<std::size_t>(best)];

  restore_values(adaptable, snapshots[static_cast<std::size_t>(best)]);
  result.predictions = predict_labels(model, x);

  restore_values(adaptable, original);
  return result;
}

template <typename T>
TTTEvaluation ttt_evaluate(VmfNet<T>& model, const Dataset& test_set, const TTTConfig& cfg,
                           HdVariant variant) {
  TTTEvaluation out;
  out.baseline = evaluate_model(model, test_set, variant);

  const int classes = test_set.num_classes;
  std::vector<SubjectMetrics> rows;
  int both_empty = 0;
  double rec_before = 0, rec_after = 0;
  for (std::size_t si = 0; si < test_set.subjects.size(); ++si) {
    SubjectAdaptation trace = adapt_subject(model, test_set, static_cast<int>(si), cfg);
    rec_before += trace.baseline_error;
    rec_after += trace.selected_error;

    const Subject& subj = test_set.subjects[si];
    SubjectMetrics sm;
    sm.subject_id = subj.id;
    std::vector<DiceCounts> counts(static_cast<std::size_t>(classes));
    std::vector<double> hd_sum(static_cast<std::size_t>(classes), 0.0);
    std::vector<int> hd_n(static_cast<std::size_t>(classes), 0);
    for (std::size_t k = 0; k < subj.sample_indices.size(); ++k) {
      const Sample& sample = test_set.samples[static_cast<std::size_t>(subj.sample_indices[k])];
      for (int c = 1; c <= classes; ++c) {
        counts[static_cast<std::size_t>(c - 1)].add(trace.predictions[k], sample.mask, c);
        const auto hd = hausdorff(trace.predictions[k], sample.mask, sample.h, sample.w, c, variant);
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
    out.traces.push_back(std::move(trace));
  }
  out.adapted = aggregate_metrics(std::move(rows), classes, variant, both_empty);
  if (!test_set.subjects.empty()) {
    rec_before /= static_cast<double>(test_set.subjects.size());
    rec_after /= static_cast<double>(test_set.subjects.size());
  }
  out.mean_rec_before = rec_before;
  out.mean_rec_after = rec_after;
  return out;
}

std::string TTTEvaluation::table() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os << "subject\trec_before\trec_after\tselected_step\tdice_before\tdice_after\n";
  for (std::size_t i = 0; i < traces.size(); ++i) {
    os.precision(6);
    os << traces[i].subject_id << "\t" << traces[i].baseline_error << "\t"
       << traces[i].selected_error << "\t" << traces[i].selected_step << "\t";
    os.precision(2);
    os << baseline.subjects[i].mean_dice() << "\t" << adapted.subjects[i].mean_dice() << "\n";
  }
  os.precision(6);
  os << "mean rec before " << mean_rec_before << ", after " << mean_rec_after << "\n";
  os.precision(2);
  os << "mean dice before " << baseline.mean_foreground_dice << ", after "
     << adapted.mean_foreground_dice << "\n";
  return os.str();
}

#define VMFNET_INSTANTIATE(T)                                                          \
  template SubjectAdaptation adapt_subject<T>(VmfNet<T>&, const Dataset&, int,         \
                                              const TTTConfig&);                       \
  template TTTEvaluation ttt_evaluate<T>(VmfNet<T>&, const Dataset&, const TTTConfig&, \
                                         HdVariant);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
