#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

namespace vqfuzz {

// SSIM constants for a dynamic range of 1.0.
struct SsimParams {
  std::int64_t window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

// Mean of (a - b)^2 over all channels and pixels, accumulated in double.
double mse(const torch::Tensor& a, const torch::Tensor& b);

// Mean local SSIM over every fully contained Gaussian window, averaged over
// channels. Images smaller than the window use whole-image statistics.
// Inputs are (C, H, W).
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params = {});

// Batched forms over (N, C, H, W); one value per image.
std::vector<double> mse_batch(const torch::Tensor& a, const torch::Tensor& b);
std::vector<double> ssim_batch(const torch::Tensor& a, const torch::Tensor& b,
                               const SsimParams& params = {});

// A generated sample after the classifier has been queried.
struct EvaluatedRecord {
  std::string dataset;
  std::string model;
  double lambda = 0.0;
  std::string original_id;
  std::int64_t source_class = 0;
  std::int64_t predicted = 0;
  double mse = 0.0;
  double ssim = 1.0;

  bool misclassified() const { return predicted != source_class; }
};

enum class LabelDiversityMode { Misclassified, AllLabels };

const char* to_string(LabelDiversityMode mode) noexcept;
LabelDiversityMode parse_label_diversity_mode(const std::string& text);

// Fraction of records whose prediction differs from the source class.
double error_rate(std::span<const EvaluatedRecord> records);

// Fraction of distinct originals with at least one misclassified record.
double success_rate(std::span<const EvaluatedRecord> records);

// Distinct predicted labels among one original's records; in Misclassified
// mode the true class is excluded.
std::int64_t label_diversity(std::span<const EvaluatedRecord> records, std::int64_t true_class,
                             LabelDiversityMode mode = LabelDiversityMode::Misclassified);

// label_diversity averaged over originals.
double mean_label_diversity(std::span<const EvaluatedRecord> records,
                            LabelDiversityMode mode = LabelDiversityMode::Misclassified);

double improved_classification_accuracy(double before, double after);

struct MetricsRow {
  std::string dataset;
  std::string model;
  double lambda = 0.0;
  std::int64_t records = 0;
  std::int64_t originals = 0;
  // False for rows that only carry accuracy (the random control); their
  // mse..sr cells are written empty.
  bool sample_metrics = true;
  double mse = 0.0;
  double ssim = 0.0;
  double ld = 0.0;
  double er = 0.0;
  double sr = 0.0;
  std::optional<double> ica_before;
  std::optional<double> ica_after;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
};

// One row per (dataset, model, lambda), in first-appearance order.
MetricsReport build_report(std::span<const EvaluatedRecord> records,
                           LabelDiversityMode mode = LabelDiversityMode::Misclassified);

inline constexpr const char* kMetricsCsvHeader =
    "dataset,model,lambda,mse,ssim,ld,er,sr,ica_before,ica_after";

// Header plus one line per row; numbers use a fixed round-trippable format
// and absent ICA values are left empty.
void write_metrics_csv(std::ostream& out, const MetricsReport& report);
MetricsReport read_metrics_csv(std::istream& in);

// Shortest decimal that round-trips to the same double.
std::string format_number(double value);

}  // namespace vqfuzz
