#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vqfuzz/classifier.hpp"
#include "vqfuzz/config.hpp"
#include "vqfuzz/metrics.hpp"

namespace vqfuzz::cli {

// Environment variable that replaces [data] dir.
inline constexpr const char* kDataDirEnv = "VQFUZZ_DATA_DIR";

enum class RetrainMode { FineTune, RandomControl };

struct CommandOptions {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;

  std::optional<double> lambda;
  bool no_quantizer = false;
  bool no_discriminators = false;
  RetrainMode mode = RetrainMode::FineTune;

  std::filesystem::path vqvae;       // adv-train input
  std::filesystem::path model;       // generate input (adversary directory)
  std::filesystem::path dataset;     // evaluate / retrain input (generated set)
  std::filesystem::path classifier;  // evaluate / retrain input
  std::vector<std::filesystem::path> inputs;  // report inputs
  std::string model_name;            // evaluate: label for the model column
};

// Config file (or defaults) with --seed and the data-dir environment
// override applied.
ExperimentConfig resolve_config(const CommandOptions& options);

// Loads one split honouring [data] limits.
std::vector<LabeledImage> load_split(const ExperimentConfig& config, Split split);

// Every command writes its artifacts plus manifest.json into options.out.
void cmd_pretrain(const CommandOptions& options, std::ostream& log);
void cmd_train_classifier(const CommandOptions& options, std::ostream& log);
void cmd_adv_train(const CommandOptions& options, std::ostream& log);
void cmd_generate(const CommandOptions& options, std::ostream& log);
void cmd_evaluate(const CommandOptions& options, std::ostream& log);
void cmd_retrain(const CommandOptions& options, std::ostream& log);
void cmd_report(const CommandOptions& options, std::ostream& log);

// Queries `model` on every record of a generated dataset directory.
std::vector<EvaluatedRecord> evaluate_generated(const std::filesystem::path& dataset_dir,
                                                const BlackBoxModel& model,
                                                const ExperimentConfig& config,
                                                const std::string& model_name);

// Parses argv, runs the command and maps errors to exit codes
// (0 ok, 2 config/validation, 3 lambda mismatch, 4 missing artifact, 1 other).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vqfuzz::cli
