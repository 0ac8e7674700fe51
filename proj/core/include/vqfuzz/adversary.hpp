#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "vqfuzz/data.hpp"
#include "vqfuzz/random.hpp"
#include "vqfuzz/vqvae.hpp"

namespace vqfuzz {

// Scores are kept in [eps, 1 - eps] so no logarithm sees 0 or 1.
inline constexpr double kScoreEpsilon = 1e-7;

double clamp_score(double score) noexcept;
torch::Tensor clamp_score(const torch::Tensor& scores);

// -[log s_orig + log(1 - s_adv)]; shared by the latent and the image discriminator.
double discriminator_loss_z(double score_orig, double score_adv);
double discriminator_loss_x(double score_orig, double score_adv);
// -log s_adv
double generator_loss_z(double score_adv);
double generator_loss_x(double score_adv);

// Batch versions: mean of the per-sample losses.
torch::Tensor discriminator_loss(const torch::Tensor& score_orig, const torch::Tensor& score_adv);
torch::Tensor generator_loss(const torch::Tensor& score_adv);

// Three fully connected layers from the flattened encoder output to one logit.
class LatentDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit LatentDiscriminatorImpl(const VqvaeArch& arch, std::int64_t hidden = 256);

  torch::Tensor logits(const torch::Tensor& z);
  // Probabilities in [eps, 1 - eps], shape (N).
  torch::Tensor score(const torch::Tensor& z);

 private:
  std::int64_t latent_dim_;
  std::int64_t latent_h_;
  std::int64_t latent_w_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
};
TORCH_MODULE(LatentDiscriminator);

// Five convolutions followed by two fully connected layers to one logit.
class ImageDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit ImageDiscriminatorImpl(const ImageShape& shape, std::int64_t width = 16);

  torch::Tensor logits(const torch::Tensor& x);
  torch::Tensor score(const torch::Tensor& x);

 private:
  ImageShape shape_;
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ImageDiscriminator);

struct JointTrainingConfig {
  double lambda = 0.2;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 128;
  double gan_weight_z = 0.1;
  double gan_weight_x = 0.1;
  double discriminator_lr = 1e-4;
  double generator_lr = 1e-4;
  double alpha = 0.25;
  double beta = 0.75;
  CodebookLossConvention convention = CodebookLossConvention::Paper;
  std::uint64_t seed = 0;
  // Ablations: without the quantizer the latent is decoded directly; without
  // discriminators both GAN weights are zero and no discriminator is updated.
  bool use_quantizer = true;
  bool use_discriminators = true;

  void validate() const;
  double effective_weight_z() const { return use_discriminators ? gan_weight_z : 0.0; }
  double effective_weight_x() const { return use_discriminators ? gan_weight_x : 0.0; }
};

// Generation-ready model: the jointly trained VQ-VAE, both discriminators and
// the lambda the model was trained for.
struct AdversaryModel {
  Vqvae vqvae{nullptr};
  LatentDiscriminator z_discriminator{nullptr};
  ImageDiscriminator x_discriminator{nullptr};
  double trained_lambda = 0.0;
  bool use_quantizer = true;
  bool use_discriminators = true;

  // Copies the VQ-VAE weights (the source is left untouched) and builds fresh
  // discriminators seeded by `seed`.
  static AdversaryModel create(const Vqvae& pretrained, double lambda, std::uint64_t seed,
                               bool use_quantizer = true, bool use_discriminators = true);
};

Vqvae clone_vqvae(const Vqvae& source);

struct JointBatch {
  torch::Tensor x_orig;
  torch::Tensor x_other;
  torch::Tensor y_orig;
  torch::Tensor y_other;
};

struct DiscriminatorStepStats {
  double loss_z = 0.0;
  double loss_x = 0.0;
};

struct GeneratorStepStats {
  VqvaeLossBreakdown vqvae;
  double gen_z = 0.0;
  double gen_x = 0.0;
  double total = 0.0;
};

struct JointEpochStats {
  std::int64_t epoch = 0;
  DiscriminatorStepStats discriminator;
  GeneratorStepStats generator;
};

// One discriminator update then one generator update per batch. The steps
// are public so the alternation can be inspected.
class JointTrainer {
 public:
  JointTrainer(AdversaryModel& model, std::span<const LabeledImage> data,
               const JointTrainingConfig& config);

  // Pairs each original with a perturber drawn uniformly from all samples of
  // other classes. Throws Internal if a pair ever shares a label.
  JointBatch make_batch(const torch::Tensor& original_indices, Rng& rng) const;

  DiscriminatorStepStats discriminator_step(const JointBatch& batch);
  GeneratorStepStats generator_step(const JointBatch& batch);

  // Discriminator losses on a batch without updating anything.
  DiscriminatorStepStats evaluate_discriminators(const JointBatch& batch);

  JointEpochStats run_epoch(std::int64_t epoch);

  std::int64_t size() const { return data_.size(0); }

 private:
  torch::Tensor adversarial_latent(const JointBatch& batch, torch::Tensor* z_orig);

  AdversaryModel& model_;
  JointTrainingConfig config_;
  torch::Tensor data_;
  torch::Tensor labels_;
  std::unique_ptr<torch::optim::Adam> generator_opt_;
  std::unique_ptr<torch::optim::Adam> z_disc_opt_;
  std::unique_ptr<torch::optim::Adam> x_disc_opt_;
};

using JointEpochCallback = std::function<void(const JointEpochStats&)>;

// Fine-tunes a copy of `pretrained` against both discriminators. Requires at
// least two distinct labels in `data`.
AdversaryModel joint_train(const Vqvae& pretrained, std::span<const LabeledImage> data,
                           const JointTrainingConfig& config,
                           const JointEpochCallback& on_epoch = {});

}  // namespace vqfuzz
