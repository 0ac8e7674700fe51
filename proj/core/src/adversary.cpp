#include "vqfuzz/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vqfuzz/error.hpp"
#include "vqfuzz/interpolate.hpp"

namespace nn = torch::nn;

namespace vqfuzz {

double clamp_score(double score) noexcept {
  return std::clamp(score, kScoreEpsilon, 1.0 - kScoreEpsilon);
}

torch::Tensor clamp_score(const torch::Tensor& scores) {
  return scores.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
}

double discriminator_loss_z(double score_orig, double score_adv) {
  return -(std::log(clamp_score(score_orig)) + std::log(1.0 - clamp_score(score_adv)));
}

double discriminator_loss_x(double score_orig, double score_adv) {
  return discriminator_loss_z(score_orig, score_adv);
}

double generator_loss_z(double score_adv) { return -std::log(clamp_score(score_adv)); }

double generator_loss_x(double score_adv) { return generator_loss_z(score_adv); }

torch::Tensor discriminator_loss(const torch::Tensor& score_orig, const torch::Tensor& score_adv) {
  require(score_orig.sizes() == score_adv.sizes(), ErrorKind::ShapeMismatch,
          "discriminator scores differ in shape");
  return -(torch::log(clamp_score(score_orig)) + torch::log(1.0 - clamp_score(score_adv))).mean();
}

torch::Tensor generator_loss(const torch::Tensor& score_adv) {
  return -torch::log(clamp_score(score_adv)).mean();
}

LatentDiscriminatorImpl::LatentDiscriminatorImpl(const VqvaeArch& arch, std::int64_t hidden)
    : latent_dim_(arch.embedding_dim),
      latent_h_(arch.latent_height()),
      latent_w_(arch.latent_width()) {
  const auto in = arch.latent_numel();
  fc1_ = register_module("fc1", nn::Linear(in, hidden));
  fc2_ = register_module("fc2", nn::Linear(hidden, std::max<std::int64_t>(hidden / 4, 1)));
  fc3_ = register_module("fc3", nn::Linear(std::max<std::int64_t>(hidden / 4, 1), 1));
}

torch::Tensor LatentDiscriminatorImpl::logits(const torch::Tensor& z) {
  require(z.dim() == 4 && z.size(1) == latent_dim_ && z.size(2) == latent_h_ && z.size(3) == latent_w_,
          ErrorKind::ShapeMismatch,
          "latent discriminator expects (N, " + std::to_string(latent_dim_) + ", " +
              std::to_string(latent_h_) + ", " + std::to_string(latent_w_) + "), got " +
              std::string(c10::str(z.sizes())));
  auto h = torch::leaky_relu(fc1_(z.flatten(1)), 0.2);
  h = torch::leaky_relu(fc2_(h), 0.2);
  return fc3_(h).squeeze(1);
}

torch::Tensor LatentDiscriminatorImpl::score(const torch::Tensor& z) {
  return clamp_score(torch::sigmoid(logits(z)));
}

ImageDiscriminatorImpl::ImageDiscriminatorImpl(const ImageShape& shape, std::int64_t width)
    : shape_(shape) {
  require(shape.height % 4 == 0 && shape.width % 4 == 0, ErrorKind::InvalidArgument,
          "image discriminator needs height and width divisible by 4");
  const auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  const auto w = width;
  convs_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(shape.channels, w, 3).padding(1)), lrelu(),
      nn::Conv2d(nn::Conv2dOptions(w, 2 * w, 4).stride(2).padding(1)), lrelu(),
      nn::Conv2d(nn::Conv2dOptions(2 * w, 2 * w, 3).padding(1)), lrelu(),
      nn::Conv2d(nn::Conv2dOptions(2 * w, 4 * w, 4).stride(2).padding(1)), lrelu(),
      nn::Conv2d(nn::Conv2dOptions(4 * w, 4 * w, 3).padding(1)), lrelu());
  register_module("convs", convs_);
  const auto flat = 4 * w * (shape.height / 4) * (shape.width / 4);
  fc1_ = register_module("fc1", nn::Linear(flat, 128));
  fc2_ = register_module("fc2", nn::Linear(128, 1));
}

torch::Tensor ImageDiscriminatorImpl::logits(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == shape_.channels && x.size(2) == shape_.height &&
              x.size(3) == shape_.width,
          ErrorKind::ShapeMismatch,
          "image discriminator expects (N, " + to_string(shape_) + "), got " +
              std::string(c10::str(x.sizes())));
  auto h = convs_->forward(x).flatten(1);
  h = torch::leaky_relu(fc1_(h), 0.2);
  return fc2_(h).squeeze(1);
}

torch::Tensor ImageDiscriminatorImpl::score(const torch::Tensor& x) {
  return clamp_score(torch::sigmoid(logits(x)));
}

void JointTrainingConfig::validate() const {
  check_lambda_range(lambda);
  require(epochs >= 0, ErrorKind::InvalidArgument, "joint-training epochs must be >= 0");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "joint-training batch_size must be >= 1");
  require(gan_weight_z >= 0.0 && gan_weight_x >= 0.0, ErrorKind::InvalidArgument,
          "GAN weights must be >= 0");
  require(discriminator_lr > 0.0 && generator_lr > 0.0, ErrorKind::InvalidArgument,
          "joint-training learning rates must be positive");
}

Vqvae clone_vqvae(const Vqvae& source) {
  Vqvae copy(source->arch());
  torch::NoGradGuard no_grad;
  auto src = source->named_parameters(true);
  for (auto& item : copy->named_parameters(true)) item.value().copy_(src[item.key()]);
  copy->state = source->state;
  return copy;
}

AdversaryModel AdversaryModel::create(const Vqvae& pretrained, double lambda, std::uint64_t seed,
                                      bool use_quantizer, bool use_discriminators) {
  check_lambda_range(lambda);
  AdversaryModel model;
  model.vqvae = clone_vqvae(pretrained);
  torch::manual_seed(derive_seed(seed, {0x6469736bULL}));
  model.z_discriminator = LatentDiscriminator(pretrained->arch());
  model.x_discriminator = ImageDiscriminator(pretrained->arch().image);
  model.trained_lambda = lambda;
  model.use_quantizer = use_quantizer;
  model.use_discriminators = use_discriminators;
  return model;
}

JointTrainer::JointTrainer(AdversaryModel& model, std::span<const LabeledImage> data,
                           const JointTrainingConfig& config)
    : model_(model), config_(config) {
  config_.validate();
  require(!data.empty(), ErrorKind::InvalidArgument, "joint training needs a non-empty dataset");
  data_ = stack_pixels(data);
  labels_ = stack_labels(data);
  std::set<std::int64_t> distinct;
  for (const auto& img : data) distinct.insert(img.label);
  require(distinct.size() >= 2, ErrorKind::InvalidArgument,
          "joint training needs samples from at least 2 classes");

  generator_opt_ = std::make_unique<torch::optim::Adam>(
      model_.vqvae->parameters(), torch::optim::AdamOptions(config_.generator_lr));
  z_disc_opt_ = std::make_unique<torch::optim::Adam>(
      model_.z_discriminator->parameters(), torch::optim::AdamOptions(config_.discriminator_lr));
  x_disc_opt_ = std::make_unique<torch::optim::Adam>(
      model_.x_discriminator->parameters(), torch::optim::AdamOptions(config_.discriminator_lr));
}

JointBatch JointTrainer::make_batch(const torch::Tensor& original_indices, Rng& rng) const {
  const auto n = original_indices.size(0);
  const auto total = static_cast<std::uint64_t>(data_.size(0));
  const auto* labels = labels_.data_ptr<std::int64_t>();
  const auto idx = original_indices.contiguous();
  const auto* orig = idx.data_ptr<std::int64_t>();
  std::vector<std::int64_t> other(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t j = 0;
    do {
      j = static_cast<std::int64_t>(rng.uniform_index(total));
    } while (labels[j] == labels[orig[i]]);
    other[static_cast<std::size_t>(i)] = j;
  }
  auto other_idx = torch::tensor(other, torch::kInt64);
  JointBatch batch{data_.index_select(0, idx), data_.index_select(0, other_idx),
                   labels_.index_select(0, idx), labels_.index_select(0, other_idx)};
  if (batch.y_orig.eq(batch.y_other).any().item<bool>())
    fail(ErrorKind::Internal, "joint-training batch paired samples of the same class");
  return batch;
}

torch::Tensor JointTrainer::adversarial_latent(const JointBatch& batch, torch::Tensor* z_orig) {
  auto zo = model_.vqvae->encode(batch.x_orig);
  auto zother = model_.vqvae->encode(batch.x_other);
  if (z_orig != nullptr) *z_orig = zo;
  return interpolate(zo, zother, config_.lambda);
}

DiscriminatorStepStats JointTrainer::evaluate_discriminators(const JointBatch& batch) {
  torch::NoGradGuard no_grad;
  torch::Tensor z_orig;
  auto z_adv = adversarial_latent(batch, &z_orig);
  auto x_adv = model_.vqvae->decode(model_.vqvae->decoder_input(z_adv, nullptr, config_.use_quantizer));
  DiscriminatorStepStats stats;
  stats.loss_z = discriminator_loss(model_.z_discriminator->score(z_orig),
                                    model_.z_discriminator->score(z_adv))
                     .item<double>();
  stats.loss_x = discriminator_loss(model_.x_discriminator->score(batch.x_orig),
                                    model_.x_discriminator->score(x_adv))
                     .item<double>();
  return stats;
}

DiscriminatorStepStats JointTrainer::discriminator_step(const JointBatch& batch) {
  torch::Tensor z_orig, z_adv, x_adv;
  {
    torch::NoGradGuard no_grad;
    z_adv = adversarial_latent(batch, &z_orig);
    x_adv = model_.vqvae->decode(model_.vqvae->decoder_input(z_adv, nullptr, config_.use_quantizer));
  }
  model_.z_discriminator->train();
  model_.x_discriminator->train();
  z_disc_opt_->zero_grad();
  x_disc_opt_->zero_grad();
  auto loss_z = discriminator_loss(model_.z_discriminator->score(z_orig),
                                   model_.z_discriminator->score(z_adv));
  auto loss_x = discriminator_loss(model_.x_discriminator->score(batch.x_orig),
                                   model_.x_discriminator->score(x_adv));
  DiscriminatorStepStats stats{loss_z.item<double>(), loss_x.item<double>()};
  if (!std::isfinite(stats.loss_z) || !std::isfinite(stats.loss_x))
    fail(ErrorKind::NonFinite, "non-finite discriminator loss");
  (loss_z + loss_x).backward();
  z_disc_opt_->step();
  x_disc_opt_->step();
  return stats;
}

GeneratorStepStats JointTrainer::generator_step(const JointBatch& batch) {
  model_.vqvae->train();
  generator_opt_->zero_grad();

  torch::Tensor z_orig;
  auto z_adv = adversarial_latent(batch, &z_orig);

  QuantizedLatent q_orig;
  auto recon = model_.vqvae->decode(model_.vqvae->decoder_input(z_orig, &q_orig, config_.use_quantizer));
  auto vq = vqvae_loss(batch.x_orig, recon, z_orig, q_orig.embedded, config_.alpha, config_.beta,
                       config_.convention);
  auto total = vq.total;

  GeneratorStepStats stats;
  const double wz = config_.effective_weight_z();
  const double wx = config_.effective_weight_x();
  if (config_.use_discriminators) {
    auto x_adv = model_.vqvae->decode(model_.vqvae->decoder_input(z_adv, nullptr, config_.use_quantizer));
    auto gz = generator_loss(model_.z_discriminator->score(z_adv));
    auto gx = generator_loss(model_.x_discriminator->score(x_adv));
    stats.gen_z = gz.item<double>();
    stats.gen_x = gx.item<double>();
    total = total + wz * gz + wx * gx;
  }
  stats.vqvae = vq.breakdown();
  stats.total = total.item<double>();
  if (!std::isfinite(stats.total))
    fail(ErrorKind::NonFinite, "non-finite generator loss (rec=" + std::to_string(stats.vqvae.rec) +
                                   ", gen_z=" + std::to_string(stats.gen_z) +
                                   ", gen_x=" + std::to_string(stats.gen_x) + ")");
  total.backward();
  generator_opt_->step();
  // Gradients that leaked into the discriminators are discarded, never applied.
  z_disc_opt_->zero_grad();
  x_disc_opt_->zero_grad();
  return stats;
}

JointEpochStats JointTrainer::run_epoch(std::int64_t epoch) {
  const auto n = data_.size(0);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  Rng rng(config_.seed, {0x6a6f696eULL, static_cast<std::uint64_t>(epoch)});
  rng.shuffle(std::span<std::int64_t>(order));
  const auto perm = torch::tensor(order, torch::kInt64);

  JointEpochStats stats;
  stats.epoch = epoch;
  stats.generator.vqvae.alpha = config_.alpha;
  stats.generator.vqvae.beta = config_.beta;
  for (std::int64_t start = 0; start < n; start += config_.batch_size) {
    const auto len = std::min(config_.batch_size, n - start);
    auto batch = make_batch(perm.narrow(0, start, len), rng);
    const double w = static_cast<double>(len) / static_cast<double>(n);
    if (config_.use_discriminators) {
      auto d = discriminator_step(batch);
      stats.discriminator.loss_z += w * d.loss_z;
      stats.discriminator.loss_x += w * d.loss_x;
    }
    auto g = generator_step(batch);
    stats.generator.vqvae.rec += w * g.vqvae.rec;
    stats.generator.vqvae.cb += w * g.vqvae.cb;
    stats.generator.vqvae.com += w * g.vqvae.com;
    stats.generator.vqvae.total += w * g.vqvae.total;
    stats.generator.gen_z += w * g.gen_z;
    stats.generator.gen_x += w * g.gen_x;
    stats.generator.total += w * g.total;
  }
  return stats;
}

AdversaryModel joint_train(const Vqvae& pretrained, std::span<const LabeledImage> data,
                           const JointTrainingConfig& config, const JointEpochCallback& on_epoch) {
  config.validate();
  auto model = AdversaryModel::create(pretrained, config.lambda, config.seed, config.use_quantizer,
                                      config.use_discriminators);
  JointTrainer trainer(model, data, config);
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto stats = trainer.run_epoch(epoch);
    if (on_epoch) on_epoch(stats);
  }
  model.vqvae->eval();
  model.z_discriminator->eval();
  model.x_discriminator->eval();
  return model;
}

}  // namespace vqfuzz
