#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "vqfuzz/adversary.hpp"
#include "vqfuzz/classifier.hpp"
#include "vqfuzz/data.hpp"
#include "vqfuzz/generate.hpp"
#include "vqfuzz/metrics.hpp"
#include "vqfuzz/vqvae.hpp"

namespace vqfuzz {

struct DataSection {
  DatasetSpec spec{};
  std::filesystem::path dir = "data/mnist";
  // 0 keeps every training sample; otherwise the first N by id.
  std::int64_t train_limit = 0;
  std::int64_t test_limit = 0;
};

struct GenerateSection {
  std::optional<double> lambda;  // defaults to the adversary lambda
  std::int64_t originals_per_class = 1;
  std::int64_t perturbers_per_class = 3;
  Split split = Split::Test;
};

struct ClassifierSection {
  ClassifierArch arch = ClassifierArch::LeNet5;
  ClassifierTrainConfig train{};
  std::int64_t retrain_epochs = 10;
  std::int64_t retrain_samples = 1000;
  RetrainSelection retrain_selection = RetrainSelection::MisclassifiedFirst;
  std::int64_t random_control_count = 1000;
};

struct MetricsSection {
  LabelDiversityMode label_diversity = LabelDiversityMode::Misclassified;
  // "original" compares against the raw original, "reconstruction" against
  // the VQ-VAE reconstruction of it.
  std::string reference = "original";
  std::int64_t grid_pairs = 8;
};

struct RuntimeSection {
  std::uint64_t seed = 0;
  std::int64_t threads = 1;
};

// Every tunable of the pipeline. Files use [section] headers matching the
// struct names below and `key = value` lines; unknown sections and keys are
// rejected.
struct ExperimentConfig {
  DataSection data{};
  VqvaeArch vqvae{};
  PretrainConfig pretrain{};
  JointTrainingConfig adversary{};
  GenerateSection generate{};
  ClassifierSection classifier{};
  MetricsSection metrics{};
  RuntimeSection runtime{};

  // Throws InvalidConfig on the first inconsistent value.
  void validate() const;

  double generation_lambda() const { return generate.lambda.value_or(adversary.lambda); }

  // Stage configs with the run seed folded in.
  PretrainConfig pretrain_config() const;
  JointTrainingConfig joint_config() const;
  GenerationConfig generation_config() const;
  ClassifierTrainConfig classifier_config() const;
  ClassifierTrainConfig retrain_config() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key in a fixed order; parse_config(canonical_text(c)) == c.
std::string canonical_text(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

}  // namespace vqfuzz
