#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vmfnet/errors.hpp"

namespace vmfnet {

// Hard-label Dice as a percentage: 200 |P n T| / (|P| + |T|).
// Both sets empty -> 100 (callers count these occurrences).
double dice_score(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                  int class_id);

struct DiceCounts {
  long long inter = 0, pred = 0, truth = 0;

  void add(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& t, int class_id);
  bool both_empty() const { return pred == 0 && truth == 0; }
  double percentage() const {
    return both_empty() ? 100.0 : 200.0 * static_cast<double>(inter) / static_cast<double>(pred + truth);
  }
};

enum class HdVariant { kStandard, kModified };

const char* hd_variant_name(HdVariant v);
HdVariant hd_variant_from_name(const std::string& s);

// Boundary pixels of {label == class_id}: set pixels with a 4-neighbor of a
// different label (out-of-image counts as different).
std::vector<std::pair<int, int>> boundary_pixels(const std::uint8_t* labels, int h, int w,
                                                 int class_id);

// Hausdorff distance between boundary sets under Euclidean pixel distance.
// Standard: max of the two directed maxima. Modified (Dubuisson-Jain):
// max of the two directed mean distances. Returns nullopt when either
// boundary set is empty (undefined; excluded from aggregation and counted).
std::optional<double> hausdorff(const std::vector<std::uint8_t>& pred,
                                const std::vector<std::uint8_t>& truth, int h, int w, int class_id,
                                HdVariant variant = HdVariant::kModified);

struct SubjectMetrics {
  std::string subject_id;
  std::vector<double> dice_pct;               // per foreground class, slices pooled
  std::vector<std::optional<double>> hd;      // per foreground class, mean over defined slices
  double mean_dice() const;
  std::optional<double> mean_hd() const;
};

struct MetricReport {
  HdVariant variant = HdVariant::kModified;
  int num_classes = 0;
  std::vector<SubjectMetrics> subjects;
  std::vector<double> mean_dice, std_dice;  // per class, across subjects
  std::vector<double> mean_hd, std_hd;      // per class, across subjects with defined HD
  double mean_foreground_dice = 0;          // mean over subjects of per-subject class means
  std::optional<double> mean_foreground_hd;
  int undefined_hd_count = 0;   // subject-class pairs with no defined HD
  int both_empty_dice_count = 0;

  std::string table() const;  // human-readable summary
};

// Fills the aggregate fields from the per-subject breakdown.
MetricReport aggregate_metrics(std::vector<SubjectMetrics> subjects, int num_classes,
                               HdVariant variant, int both_empty_count);

}  // namespace vmfnet
