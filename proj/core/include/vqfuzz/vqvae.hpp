#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vqfuzz/data.hpp"

namespace vqfuzz {

// Shapes of every array in the encoder / codebook / decoder stack follow from
// this descriptor. Latents are laid out (N, embedding_dim, H/4, W/4).
struct VqvaeArch {
  ImageShape image{};
  std::int64_t hidden_channels = 128;
  std::int64_t residual_channels = 32;
  std::int64_t residual_blocks = 2;
  std::int64_t embedding_dim = 64;
  std::int64_t num_codes = 512;

  std::int64_t latent_height() const { return image.height / 4; }
  std::int64_t latent_width() const { return image.width / 4; }
  std::int64_t latent_numel() const { return embedding_dim * latent_height() * latent_width(); }

  void validate() const;
  bool operator==(const VqvaeArch&) const = default;
};

// Nearest-codebook-entry assignment for every latent cell.
struct QuantizedLatent {
  torch::Tensor indices;   // int64, (N, h, w), each in [0, num_codes)
  torch::Tensor embedded;  // (N, d, h, w), embedded[n, :, i, j] == entries[indices[n, i, j]]
};

// Finds, for each cell of z (N, d, h, w), the entry of `entries` (K, d) with the
// smallest squared Euclidean distance; ties go to the lowest index. The result
// is exact: candidates found with a matrix-product distance are re-checked in
// double precision against the true squared distance. `embedded` is gathered
// from `entries`, so it carries the codebook gradient.
QuantizedLatent quantize(const torch::Tensor& z, const torch::Tensor& entries);

// Identity in the forward pass; routes the gradient at zq back to z.
torch::Tensor straight_through(const torch::Tensor& z, const torch::Tensor& zq);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t channels, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv3_{nullptr};
  torch::nn::Conv2d conv1_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const VqvaeArch& arch);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const VqvaeArch& arch);
  torch::Tensor forward(const torch::Tensor& zq);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Decoder);

class CodebookImpl : public torch::nn::Module {
 public:
  // Entries start uniform in [-1/num_codes, 1/num_codes].
  CodebookImpl(std::int64_t num_codes, std::int64_t dim);

  const torch::Tensor& entries() const { return entries_; }
  std::int64_t size() const { return entries_.size(0); }
  std::int64_t dim() const { return entries_.size(1); }

 private:
  torch::Tensor entries_;
};
TORCH_MODULE(Codebook);

struct VqvaeForward {
  torch::Tensor z;        // continuous latent
  QuantizedLatent q;      // quantized latent (q.embedded == z when the quantizer is bypassed)
  torch::Tensor x_recon;  // decoder output in [0,1]
};

struct TrainingState {
  std::int64_t epochs_completed = 0;
  double learning_rate = 0.0;
};

class VqvaeImpl : public torch::nn::Module {
 public:
  explicit VqvaeImpl(const VqvaeArch& arch);

  const VqvaeArch& arch() const { return arch_; }

  // x: (N, C, H, W). Throws ShapeMismatch when x does not match arch.image.
  torch::Tensor encode(const torch::Tensor& x);
  QuantizedLatent quantize(const torch::Tensor& z);
  // zq: (N, d, h, w). Output (N, C, H, W) in [0,1].
  torch::Tensor decode(const torch::Tensor& zq);

  // Full pass with the straight-through estimator between quantizer and
  // decoder. With use_quantizer == false the latent goes to the decoder as is.
  VqvaeForward forward(const torch::Tensor& x, bool use_quantizer = true);

  // Decoder input for a latent: straight-through quantized or identity.
  torch::Tensor decoder_input(const torch::Tensor& z, QuantizedLatent* q, bool use_quantizer);

  Encoder encoder{nullptr};
  Codebook codebook{nullptr};
  Decoder decoder{nullptr};
  TrainingState state;

 private:
  void check_latent_shape(const torch::Tensor& z) const;
  VqvaeArch arch_;
};
TORCH_MODULE(Vqvae);

// Placement of the stop-gradient in the codebook / commitment terms.
//   Paper:   cb = |z - sg(zq)|^2 (trains encoder), com = |sg(z) - zq|^2 (trains codebook)
//   Classic: cb = |sg(z) - zq|^2 (trains codebook), com = |z - sg(zq)|^2 (trains encoder)
enum class CodebookLossConvention { Paper, Classic };

const char* to_string(CodebookLossConvention convention) noexcept;
CodebookLossConvention parse_codebook_loss_convention(const std::string& text);

struct VqvaeLossBreakdown {
  double rec = 0.0;
  double cb = 0.0;
  double com = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

struct VqvaeLoss {
  torch::Tensor rec;
  torch::Tensor cb;
  torch::Tensor com;
  torch::Tensor total;
  double alpha = 0.0;
  double beta = 0.0;

  VqvaeLossBreakdown breakdown() const;
};

// total = rec + alpha * cb + beta * com. Each term is the squared L2 norm over
// the channel (or embedding) axis, averaged over samples and positions.
VqvaeLoss vqvae_loss(const torch::Tensor& x, const torch::Tensor& x_recon, const torch::Tensor& z,
                     const torch::Tensor& zq, double alpha, double beta,
                     CodebookLossConvention convention = CodebookLossConvention::Paper);

struct PretrainConfig {
  std::int64_t epochs = 50;
  std::int64_t batch_size = 128;
  double learning_rate = 1e-3;
  double lr_decay = 0.1;
  std::int64_t lr_decay_every = 20;
  double alpha = 0.25;
  double beta = 0.75;
  CodebookLossConvention convention = CodebookLossConvention::Paper;
  // Every this many steps, codebook entries that no latent cell selected
  // since the previous check are moved onto randomly chosen latents of the
  // current batch. 0 disables restarts.
  std::int64_t dead_code_restart_every = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// Step decay: base * decay^(epoch / every).
double learning_rate_for_epoch(std::int64_t epoch, double base, double decay, std::int64_t every);

struct EpochLoss {
  std::int64_t epoch = 0;
  double learning_rate = 0.0;
  VqvaeLossBreakdown mean;  // averaged over the epoch's batches
  std::int64_t codes_restarted = 0;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

// Builds a VQ-VAE from `arch` (seeded by config.seed) and trains it on
// `train`. Throws InvalidArgument for an empty set and NonFinite when a loss
// diverges.
Vqvae pretrain(std::span<const LabeledImage> train, const VqvaeArch& arch,
               const PretrainConfig& config, const EpochCallback& on_epoch = {},
               std::vector<EpochLoss>* history = nullptr);

// Step-level access to pretraining, used by pretrain() and by tests that
// inspect the model between steps.
class VqvaeTrainer {
 public:
  VqvaeTrainer(Vqvae model, const PretrainConfig& config);

  void set_learning_rate(double lr);
  VqvaeLossBreakdown step(const torch::Tensor& x);

  std::int64_t codes_restarted() const { return codes_restarted_; }

 private:
  void restart_dead_codes(const torch::Tensor& z);

  Vqvae model_;
  PretrainConfig config_;
  std::unique_ptr<torch::optim::Optimizer> optimizer_;
  torch::Tensor usage_;
  std::int64_t steps_since_check_ = 0;
  std::int64_t codes_restarted_ = 0;
};

}  // namespace vqfuzz
