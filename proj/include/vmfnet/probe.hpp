#pragma once

#include <string>
#include <vector>

#include "vmfnet/data.hpp"
#include "vmfnet/networks.hpp"

namespace vmfnet {

enum class ProbeRepresentation { kImage, kFeatures, kLikelihoods };

const char* probe_representation_name(ProbeRepresentation r);
ProbeRepresentation probe_representation_from_name(const std::string& s);

struct ProbeConfig {
  int hidden = 32;
  int steps = 400;
  double learning_rate = 1e-2;
  // L2 shrinkage sized so that label-free inputs land on near-uniform
  // logits (test CE ~ ln(classes)) instead of confident noise
  double weight_decay = 0.3;
  double test_fraction = 0.3;   // held-out subjects per domain
  std::uint64_t seed = 0;
  bool shuffle_labels = false;  // chance-level sanity mode

  void validate() const;
};

struct ProbeResult {
  ProbeRepresentation representation;
  int classes = 0;
  int train_samples = 0, test_samples = 0;
  double train_ce = 0;
  double test_ce = 0;  // held-out mean cross-entropy; higher = better aligned
};

// Foreground-masked global-average-pooled vectors, one per sample.
// Masks must be available for every sample in `ds`.
template <typename T>
std::vector<std::vector<double>> probe_features(VmfNet<T>& model, const Dataset& ds,
                                                ProbeRepresentation rep);

// Trains a seeded two-layer perceptron to predict the source-domain id from
// the pooled representation; returns held-out mean cross-entropy.
template <typename T>
ProbeResult alignment_probe(VmfNet<T>& model, const Dataset& source_set, ProbeRepresentation rep,
                            const ProbeConfig& cfg);

// Core classifier on precomputed vectors (exposed for the chance-level
// oracle and unit tests). `labels` in [0, classes).
ProbeResult probe_on_vectors(const std::vector<std::vector<double>>& vectors,
                             const std::vector<int>& labels, const std::vector<int>& subject_of,
                             int classes, const ProbeConfig& cfg, ProbeRepresentation rep);

}  // namespace vmfnet
