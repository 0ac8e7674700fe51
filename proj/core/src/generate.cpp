#include "vqfuzz/generate.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vqfuzz/checkpoint.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/metrics.hpp"

namespace vqfuzz {

void check_lambda_consistency(double requested, double trained) {
  if (!(std::abs(requested - trained) <= kLambdaTolerance)) {
    fail(ErrorKind::LambdaMismatch, "requested lambda " + format_number(requested) +
                                        " does not match the model's trained lambda " +
                                        format_number(trained));
  }
}

void check_lambda_consistency(double requested, const std::filesystem::path& manifest) {
  if (!std::filesystem::exists(manifest))
    fail(ErrorKind::MissingArtifact, "missing model manifest " + manifest.string());
  std::ifstream in(manifest);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptData, "cannot parse manifest " + manifest.string() + ": " + e.what());
  }
  if (!doc.contains("trained_lambda") || !doc["trained_lambda"].is_number())
    fail(ErrorKind::MissingArtifact, "manifest " + manifest.string() + " records no trained_lambda");
  check_lambda_consistency(requested, doc["trained_lambda"].get<double>());
}

void GenerationConfig::validate() const {
  check_lambda_range(lambda);
  require(originals_per_class >= 0 && perturbers_per_class >= 0, ErrorKind::InvalidArgument,
          "selection counts must be non-negative");
}

std::string AdversarialRecord::file_name() const {
  return std::to_string(source_class) + "_" + std::to_string(original_index) + "__" +
         std::to_string(perturber_class) + "_" + std::to_string(perturber_index) + ".png";
}

std::int64_t expected_record_count(const ClassSelection& originals, const ClassSelection& perturbers) {
  std::int64_t total_perturbers = 0;
  for (const auto& [k, items] : perturbers) total_perturbers += static_cast<std::int64_t>(items.size());
  std::int64_t count = 0;
  for (const auto& [k, items] : originals) {
    std::int64_t own = 0;
    if (auto it = perturbers.find(k); it != perturbers.end())
      own = static_cast<std::int64_t>(it->second.size());
    count += static_cast<std::int64_t>(items.size()) * (total_perturbers - own);
  }
  return count;
}

namespace {

constexpr std::int64_t kDecodeChunk = 512;

// Quantizes (unless bypassed) and decodes a batch of latents in chunks.
torch::Tensor decode_latents(Vqvae& vqvae, const torch::Tensor& z, bool use_quantizer) {
  std::vector<torch::Tensor> parts;
  for (std::int64_t s = 0; s < z.size(0); s += kDecodeChunk) {
    auto chunk = z.narrow(0, s, std::min(kDecodeChunk, z.size(0) - s));
    auto input = use_quantizer ? vqvae->quantize(chunk).embedded : chunk;
    parts.push_back(vqvae->decode(input));
  }
  return torch::cat(parts);
}

}  // namespace

AdversarialDataset generate_adversarial_dataset(AdversaryModel& model,
                                                const ClassPartition& partition,
                                                const GenerationConfig& config) {
  config.validate();
  check_lambda_consistency(config.lambda, model.trained_lambda);
  require(partition.class_count >= 2, ErrorKind::InvalidArgument,
          "generation needs at least 2 classes");

  torch::NoGradGuard no_grad;
  auto& vqvae = model.vqvae;
  vqvae->eval();

  const auto originals =
      select_samples(partition, config.originals_per_class, config.seed, SelectionRole::Original);
  const auto perturbers =
      select_samples(partition, config.perturbers_per_class, config.seed, SelectionRole::Perturber);

  std::map<std::int64_t, torch::Tensor> z_orig;
  std::map<std::int64_t, torch::Tensor> z_other;
  for (const auto& [k, items] : originals)
    if (!items.empty()) z_orig[k] = vqvae->encode(stack_pixels(items));
  for (const auto& [k, items] : perturbers)
    if (!items.empty()) z_other[k] = vqvae->encode(stack_pixels(items));

  AdversarialDataset out;
  out.config = config;
  out.model_checksum = weights_checksum(*vqvae);
  out.use_quantizer = model.use_quantizer;
  out.records.reserve(static_cast<std::size_t>(expected_record_count(originals, perturbers)));

  for (const auto& [k, items] : originals) {
    if (items.empty()) continue;
    auto recon = decode_latents(vqvae, z_orig[k], model.use_quantizer);
    for (std::size_t i = 0; i < items.size(); ++i) {
      out.originals.emplace(items[i].id, items[i]);
      out.reconstructions.emplace(items[i].id, recon[static_cast<std::int64_t>(i)]);

      // All perturbers of the other classes for this original, in (k', j) order.
      std::vector<torch::Tensor> others;
      std::vector<std::pair<std::int64_t, std::size_t>> provenance;
      for (const auto& [kp, pitems] : perturbers) {
        if (kp == k || pitems.empty()) continue;
        others.push_back(z_other[kp]);
        for (std::size_t j = 0; j < pitems.size(); ++j) provenance.emplace_back(kp, j);
      }
      if (others.empty()) continue;
      auto z_pert = torch::cat(others);
      auto zo = z_orig[k][static_cast<std::int64_t>(i)].unsqueeze(0).expand_as(z_pert);
      auto z_adv = interpolate(zo, z_pert, config.lambda);
      auto images = decode_latents(vqvae, z_adv, model.use_quantizer);

      for (std::size_t r = 0; r < provenance.size(); ++r) {
        const auto [kp, j] = provenance[r];
        AdversarialRecord rec;
        rec.original_id = items[i].id;
        rec.source_class = k;
        rec.original_index = static_cast<std::int64_t>(i);
        rec.perturber_id = perturbers.at(kp)[j].id;
        rec.perturber_class = kp;
        rec.perturber_index = static_cast<std::int64_t>(j);
        rec.lambda = config.lambda;
        rec.pixels = images[static_cast<std::int64_t>(r)];
        out.records.push_back(std::move(rec));
      }
    }
  }
  return out;
}

}  // namespace vqfuzz
