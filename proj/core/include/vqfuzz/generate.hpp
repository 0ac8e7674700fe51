#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/types.h>

#include "vqfuzz/adversary.hpp"
#include "vqfuzz/data.hpp"
#include "vqfuzz/interpolate.hpp"

namespace vqfuzz {

// Trained and requested lambda must agree to within this tolerance.
inline constexpr double kLambdaTolerance = 1e-9;

void check_lambda_consistency(double requested, double trained);
// Reads `trained_lambda` from a model manifest (JSON). Throws MissingArtifact
// if the manifest is absent and LambdaMismatch if the values disagree.
void check_lambda_consistency(double requested, const std::filesystem::path& manifest);

struct GenerationConfig {
  double lambda = 0.2;
  std::int64_t originals_per_class = 1;
  std::int64_t perturbers_per_class = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

// One generated sample: the i-th original of class k blended with the j-th
// perturber of class k_prime.
struct AdversarialRecord {
  std::string original_id;
  std::int64_t source_class = 0;
  std::int64_t original_index = 0;
  std::string perturber_id;
  std::int64_t perturber_class = 0;
  std::int64_t perturber_index = 0;
  double lambda = 0.0;
  torch::Tensor pixels;  // (C, H, W) in [0,1]

  // "<k>_<i>__<k_prime>_<j>.png"
  std::string file_name() const;
};

struct AdversarialDataset {
  std::vector<AdversarialRecord> records;
  // Selected originals and their reconstructions, keyed by original id.
  std::map<std::string, LabeledImage> originals;
  std::map<std::string, torch::Tensor> reconstructions;
  GenerationConfig config;
  std::string model_checksum;
  bool use_quantizer = true;
};

// sum_k |orig_k| * sum_{k' != k} |pert_k'|
std::int64_t expected_record_count(const ClassSelection& originals, const ClassSelection& perturbers);

// Selects originals and perturbers per class, encodes each selected image
// once, and emits one record per (original, other-class perturber) pair in
// lexicographic (k, i, k', j) order.
AdversarialDataset generate_adversarial_dataset(AdversaryModel& model,
                                                const ClassPartition& partition,
                                                const GenerationConfig& config);

}  // namespace vqfuzz
