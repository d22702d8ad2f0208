#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vmfnet/errors.hpp"

namespace vmfnet {

// Intensity/shape transform chain that makes one synthetic domain distinct
// (a stand-in for scanner-vendor shifts).
struct DomainSpec {
  std::string id;
  double gamma = 1.0;        // intensity exponent
  double contrast = 1.0;     // scale around mid-gray
  double brightness = 0.0;   // additive offset
  double bias_amplitude = 0.0;  // multiplicative low-frequency field
  double noise_sigma = 0.0;
  double blur_sigma = 0.0;   // gaussian psf, pixels; 0 = none
  double ecc_min = 1.0, ecc_max = 1.0;  // structure axis-ratio range

  void validate() const;
};

std::vector<DomainSpec> default_domains(int count);

struct GeneratorConfig {
  int num_domains = 4;
  int subjects_per_domain = 10;
  int slices_per_subject = 8;
  int image_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Foreground classes of the phantom: 1 inner disk, 2 surrounding ring,
// 3 adjacent crescent. 0 is background.
constexpr int kNumClasses = 3;

struct Sample {
  std::vector<std::uint8_t> image;  // H*W grayscale bytes
  std::vector<std::uint8_t> mask;   // H*W class labels; empty if absent
  int h = 0, w = 0;
  std::string domain_id;
  std::string subject_id;
  int slice_index = 0;
  bool labeled = false;  // whether the mask may be used for supervision

  bool has_mask() const { return !mask.empty(); }
};

struct Subject {
  std::string id;
  std::string domain_id;
  std::vector<int> sample_indices;
  bool labeled = false;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<Subject> subjects;
  std::vector<std::string> domain_ids;
  int image_size = 0;
  int num_classes = kNumClasses;

  bool has_domain(const std::string& id) const;
  std::vector<int> subjects_in_domain(const std::string& id) const;  // subject indices
  const Sample& sample(int subject, int slice) const {
    return samples[static_cast<std::size_t>(
        subjects[static_cast<std::size_t>(subject)].sample_indices[static_cast<std::size_t>(slice)])];
  }
};

// Renders the synthetic multi-domain dataset into `out_dir`:
// manifest.json plus domain_<id>/subject_<id>/slice_<k>.png and
// slice_<k>_mask.png. Byte-identical output for a fixed config.
void generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir);

// In-memory render of one sample (used by generate_dataset and tests).
struct RenderedSlice {
  std::vector<std::uint8_t> image;
  std::vector<std::uint8_t> mask;
};
RenderedSlice render_slice(const GeneratorConfig& cfg, const DomainSpec& domain, int domain_index,
                           int subject_index, int slice_index);

// Loads and validates a dataset directory: manifest consistency, per-file
// checksums, shapes and label ranges.
Dataset load_dataset(const std::filesystem::path& dir);

struct SplitResult {
  Dataset train;  // source domains, labeled flags assigned per subject
  Dataset test;   // every subject of the held-out domain
};

// test = holdout domain; train = the rest with the first
// ceil(fraction * N) subjects per domain labeled under a seeded shuffle.
SplitResult split_dataset(const Dataset& ds, const std::string& holdout_domain,
                          double labeled_fraction, std::uint64_t seed);

std::string manifest_format_version();

}  // namespace vmfnet
