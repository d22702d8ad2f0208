#pragma once

#include <optional>

#include "vmfnet/evaluate.hpp"
#include "vmfnet/metrics.hpp"
#include "vmfnet/networks.hpp"

namespace vmfnet {

struct TTTConfig {
  int iterations = 15;          // adaptation steps per subject; 0 degenerates to baseline
  double learning_rate = 1e-6;
  bool include_initial = true;  // keep the unadapted state in the candidate set

  void validate() const;
};

// Per-subject adaptation: fine-tune encoder and reconstructor on the
// reconstruction loss with the kernels and the task head frozen, snapshot
// after every step, select the snapshot with the minimum mean reconstruction
// error on the subject, and predict with it. The resident model is restored
// to its pre-adaptation state before returning.
struct SubjectAdaptation {
  std::string subject_id;
  std::vector<double> candidate_errors;  // index 0 = initial state
  int selected_step = 0;
  double baseline_error = 0;
  double selected_error = 0;
  std::vector<std::vector<std::uint8_t>> predictions;  // per slice, adapted
};

template <typename T>
SubjectAdaptation adapt_subject(VmfNet<T>& model, const Dataset& ds, int subject_index,
                                const TTTConfig& cfg);

struct TTTEvaluation {
  MetricReport baseline;
  MetricReport adapted;
  std::vector<SubjectAdaptation> traces;
  double mean_rec_before = 0, mean_rec_after = 0;

  std::string table() const;
};

template <typename T>
TTTEvaluation ttt_evaluate(VmfNet<T>& model, const Dataset& test_set, const TTTConfig& cfg,
                           HdVariant variant = HdVariant::kModified);

}  // namespace vmfnet
