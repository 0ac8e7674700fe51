#include "vqfuzz/vqvae.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "vqfuzz/error.hpp"
#include "vqfuzz/random.hpp"

namespace nn = torch::nn;

namespace vqfuzz {

void VqvaeArch::validate() const {
  require(image.channels > 0, ErrorKind::InvalidArgument, "image channels must be positive");
  require(image.height > 0 && image.height % 4 == 0 && image.width > 0 && image.width % 4 == 0,
          ErrorKind::InvalidArgument,
          "image height and width must be positive multiples of 4, got " + to_string(image));
  require(hidden_channels >= 2 && hidden_channels % 2 == 0, ErrorKind::InvalidArgument,
          "hidden_channels must be an even number >= 2");
  require(residual_channels >= 1, ErrorKind::InvalidArgument, "residual_channels must be >= 1");
  require(residual_blocks >= 0, ErrorKind::InvalidArgument, "residual_blocks must be >= 0");
  require(embedding_dim >= 1, ErrorKind::InvalidArgument, "embedding_dim must be >= 1");
  require(num_codes >= 1, ErrorKind::InvalidArgument, "num_codes must be >= 1");
}

QuantizedLatent quantize(const torch::Tensor& z, const torch::Tensor& entries) {
  require(entries.dim() == 2 && entries.size(0) >= 1, ErrorKind::InvalidArgument,
          "quantize needs a non-empty (K, d) codebook");
  require(z.dim() == 4, ErrorKind::ShapeMismatch, "quantize expects latents shaped (N, d, h, w)");
  const auto d = entries.size(1);
  require(z.size(1) == d, ErrorKind::ShapeMismatch,
          "latent dimension " + std::to_string(z.size(1)) + " does not match codebook dimension " +
              std::to_string(d));

  const auto n = z.size(0);
  const auto h = z.size(2);
  const auto w = z.size(3);
  const auto k_codes = entries.size(0);

  torch::Tensor indices;
  {
    torch::NoGradGuard no_grad;
    auto flat = z.detach().permute({0, 2, 3, 1}).reshape({-1, d}).contiguous();
    auto codes = entries.detach().to(flat.scalar_type()).contiguous();
    auto approx = (flat.pow(2).sum(1, true) - 2.0 * flat.matmul(codes.t()) +
                   codes.pow(2).sum(1).unsqueeze(0))
                      .to(torch::kFloat64)
                      .contiguous();
    auto flat64 = flat.to(torch::kFloat64).contiguous();
    auto codes64 = codes.to(torch::kFloat64).contiguous();

    const double unit = flat.scalar_type() == torch::kFloat64
                            ? std::numeric_limits<double>::epsilon()
                            : static_cast<double>(std::numeric_limits<float>::epsilon());
    const double max_code_norm = codes64.pow(2).sum(1).max().item<double>();

    const auto m_rows = flat64.size(0);
    indices = torch::empty({m_rows}, torch::kInt64);
    auto* idx = indices.data_ptr<std::int64_t>();
    const double* zrow = flat64.data_ptr<double>();
    const double* cptr = codes64.data_ptr<double>();
    const double* arow = approx.data_ptr<double>();

    for (std::int64_t m = 0; m < m_rows; ++m, zrow += d, arow += k_codes) {
      double z_norm = 0.0;
      for (std::int64_t j = 0; j < d; ++j) z_norm += zrow[j] * zrow[j];
      const double approx_min = *std::min_element(arow, arow + k_codes);
      // Bound on the rounding error of the expanded distance |z|^2 - 2 z.c + |c|^2.
      const double tol = 8.0 * static_cast<double>(d + 4) * unit *
                         (z_norm + max_code_norm + 2.0 * std::sqrt(z_norm * max_code_norm));
      const double cutoff = approx_min + 2.0 * tol + std::numeric_limits<double>::min();

      std::int64_t best = -1;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::int64_t k = 0; k < k_codes; ++k) {
        if (arow[k] > cutoff) continue;
        const double* c = cptr + k * d;
        double dist = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double diff = zrow[j] - c[j];
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      if (best < 0)
        fail(ErrorKind::NonFinite, "quantize found no finite codebook distance (latent row " +
                                       std::to_string(m) + ")");
      idx[m] = best;
    }
  }

  auto embedded = entries.index_select(0, indices)
                      .view({n, h, w, d})
                      .permute({0, 3, 1, 2})
                      .to(z.scalar_type());
  return QuantizedLatent{indices.view({n, h, w}), embedded};
}

torch::Tensor straight_through(const torch::Tensor& z, const torch::Tensor& zq) {
  return z + (zq - z).detach();
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels, std::int64_t hidden)
    : conv3_(nn::Conv2dOptions(channels, hidden, 3).padding(1)),
      conv1_(nn::Conv2dOptions(hidden, channels, 1)) {
  register_module("conv3", conv3_);
  register_module("conv1", conv1_);
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + conv1_(torch::relu(conv3_(torch::relu(x))));
}

EncoderImpl::EncoderImpl(const VqvaeArch& arch) {
  arch.validate();
  const auto hid = arch.hidden_channels;
  body_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(arch.image.channels, hid / 2, 4).stride(2).padding(1)),
      nn::ReLU(),
      nn::Conv2d(nn::Conv2dOptions(hid / 2, hid, 4).stride(2).padding(1)),
      nn::ReLU(),
      nn::Conv2d(nn::Conv2dOptions(hid, hid, 3).padding(1)));
  for (std::int64_t i = 0; i < arch.residual_blocks; ++i)
    body_->push_back(ResidualBlock(hid, arch.residual_channels));
  body_->push_back(nn::ReLU());
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(hid, arch.embedding_dim, 1)));
  register_module("body", body_);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

DecoderImpl::DecoderImpl(const VqvaeArch& arch) {
  arch.validate();
  const auto hid = arch.hidden_channels;
  body_ = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(arch.embedding_dim, hid, 3).padding(1)));
  for (std::int64_t i = 0; i < arch.residual_blocks; ++i)
    body_->push_back(ResidualBlock(hid, arch.residual_channels));
  body_->push_back(nn::ReLU());
  body_->push_back(
      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(hid, hid / 2, 4).stride(2).padding(1)));
  body_->push_back(nn::ReLU());
  body_->push_back(nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(hid / 2, arch.image.channels, 4).stride(2).padding(1)));
  register_module("body", body_);
}

namespace {

// Clamp to [0,1] whose backward pass keeps the gradient wherever a descent
// step would move a clipped value back towards the range, and drops it where
// the step would push the value further out.
struct RangeClamp : torch::autograd::Function<RangeClamp> {
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& raw) {
    ctx->save_for_backward({raw});
    return torch::clamp(raw, 0.0, 1.0);
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grads) {
    const auto raw = ctx->get_saved_variables()[0];
    const auto& grad = grads[0];
    const auto outward = ((raw < 0.0) & (grad > 0.0)) | ((raw > 1.0) & (grad < 0.0));
    return {grad.masked_fill(outward, 0.0)};
  }
};

}  // namespace

// Affine output centred at mid-grey followed by RangeClamp. A sigmoid head
// under MSE, or a plain clamp, saturates towards all-black within a few Adam
// steps on MNIST; a clamp with a plain pass-through gradient lets adversarial
// terms drive clipped background pixels without bound.
torch::Tensor DecoderImpl::forward(const torch::Tensor& zq) {
  return RangeClamp::apply(body_->forward(zq) + 0.5);
}

CodebookImpl::CodebookImpl(std::int64_t num_codes, std::int64_t dim) {
  require(num_codes >= 1 && dim >= 1, ErrorKind::InvalidArgument, "codebook must be non-empty");
  const double bound = 1.0 / static_cast<double>(num_codes);
  entries_ = register_parameter("entries", torch::empty({num_codes, dim}).uniform_(-bound, bound));
}

VqvaeImpl::VqvaeImpl(const VqvaeArch& arch) : arch_(arch) {
  arch_.validate();
  encoder = register_module("encoder", Encoder(arch_));
  codebook = register_module("codebook", Codebook(arch_.num_codes, arch_.embedding_dim));
  decoder = register_module("decoder", Decoder(arch_));
}

torch::Tensor VqvaeImpl::encode(const torch::Tensor& x) {
  const auto& s = arch_.image;
  require(x.dim() == 4 && x.size(1) == s.channels && x.size(2) == s.height && x.size(3) == s.width,
          ErrorKind::ShapeMismatch,
          "encoder expects (N, " + to_string(s) + ") input, got " +
              std::string(c10::str(x.sizes())));
  return encoder(x);
}

void VqvaeImpl::check_latent_shape(const torch::Tensor& z) const {
  require(z.dim() == 4 && z.size(1) == arch_.embedding_dim && z.size(2) == arch_.latent_height() &&
              z.size(3) == arch_.latent_width(),
          ErrorKind::ShapeMismatch,
          "latent must be (N, " + std::to_string(arch_.embedding_dim) + ", " +
              std::to_string(arch_.latent_height()) + ", " + std::to_string(arch_.latent_width()) +
              "), got " + std::string(c10::str(z.sizes())));
}

QuantizedLatent VqvaeImpl::quantize(const torch::Tensor& z) {
  check_latent_shape(z);
  return vqfuzz::quantize(z, codebook->entries());
}

torch::Tensor VqvaeImpl::decode(const torch::Tensor& zq) {
  check_latent_shape(zq);
  return decoder(zq);
}

torch::Tensor VqvaeImpl::decoder_input(const torch::Tensor& z, QuantizedLatent* q,
                                       bool use_quantizer) {
  if (!use_quantizer) {
    if (q != nullptr) *q = QuantizedLatent{torch::Tensor(), z};
    return z;
  }
  auto quantized = quantize(z);
  auto out = straight_through(z, quantized.embedded);
  if (q != nullptr) *q = std::move(quantized);
  return out;
}

VqvaeForward VqvaeImpl::forward(const torch::Tensor& x, bool use_quantizer) {
  VqvaeForward out;
  out.z = encode(x);
  auto dec_in = decoder_input(out.z, &out.q, use_quantizer);
  out.x_recon = decode(dec_in);
  return out;
}

const char* to_string(CodebookLossConvention convention) noexcept {
  return convention == CodebookLossConvention::Paper ? "paper" : "classic";
}

CodebookLossConvention parse_codebook_loss_convention(const std::string& text) {
  if (text == "paper") return CodebookLossConvention::Paper;
  if (text == "classic") return CodebookLossConvention::Classic;
  fail(ErrorKind::InvalidConfig,
       "codebook_loss_convention must be 'paper' or 'classic', got '" + text + "'");
}

VqvaeLossBreakdown VqvaeLoss::breakdown() const {
  VqvaeLossBreakdown b;
  b.rec = rec.item<double>();
  b.cb = cb.item<double>();
  b.com = com.item<double>();
  b.alpha = alpha;
  b.beta = beta;
  b.total = total.item<double>();
  return b;
}

VqvaeLoss vqvae_loss(const torch::Tensor& x, const torch::Tensor& x_recon, const torch::Tensor& z,
                     const torch::Tensor& zq, double alpha, double beta,
                     CodebookLossConvention convention) {
  require(x.sizes() == x_recon.sizes(), ErrorKind::ShapeMismatch,
          "reconstruction shape differs from input shape");
  require(z.sizes() == zq.sizes(), ErrorKind::ShapeMismatch,
          "quantized latent shape differs from latent shape");
  VqvaeLoss loss;
  loss.alpha = alpha;
  loss.beta = beta;
  // Squared norms over the channel / embedding axis, averaged over samples
  // and spatial positions.
  auto sq_norm = [](const torch::Tensor& d) { return d.pow(2).sum(1).mean(); };
  loss.rec = sq_norm(x - x_recon);
  if (convention == CodebookLossConvention::Paper) {
    loss.cb = sq_norm(z - zq.detach());
    loss.com = sq_norm(z.detach() - zq);
  } else {
    loss.cb = sq_norm(z.detach() - zq);
    loss.com = sq_norm(z - zq.detach());
  }
  loss.total = loss.rec + alpha * loss.cb + beta * loss.com;
  return loss;
}

void PretrainConfig::validate() const {
  require(epochs >= 0, ErrorKind::InvalidArgument, "epochs must be >= 0");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch_size must be >= 1");
  require(learning_rate > 0.0, ErrorKind::InvalidArgument, "learning_rate must be positive");
  require(lr_decay > 0.0, ErrorKind::InvalidArgument, "lr_decay must be positive");
  require(lr_decay_every >= 1, ErrorKind::InvalidArgument, "lr_decay_every must be >= 1");
  require(alpha >= 0.0 && beta >= 0.0, ErrorKind::InvalidArgument, "alpha and beta must be >= 0");
  require(dead_code_restart_every >= 0, ErrorKind::InvalidArgument,
          "dead_code_restart_every must be >= 0");
}

double learning_rate_for_epoch(std::int64_t epoch, double base, double decay, std::int64_t every) {
  require(epoch >= 0 && every >= 1, ErrorKind::InvalidArgument, "invalid learning-rate schedule");
  return base * std::pow(decay, static_cast<double>(epoch / every));
}

namespace {

void check_finite(const VqvaeLossBreakdown& b, const std::string& where) {
  if (!std::isfinite(b.total) || !std::isfinite(b.rec) || !std::isfinite(b.cb) ||
      !std::isfinite(b.com))
    fail(ErrorKind::NonFinite, "non-finite VQ-VAE loss at " + where + " (rec=" +
                                   std::to_string(b.rec) + ", cb=" + std::to_string(b.cb) +
                                   ", com=" + std::to_string(b.com) + ")");
}

}  // namespace

VqvaeTrainer::VqvaeTrainer(Vqvae model, const PretrainConfig& config)
    : model_(std::move(model)), config_(config) {
  config_.validate();
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(), torch::optim::AdamOptions(config_.learning_rate));
  usage_ = torch::zeros({model_->codebook->size()}, torch::kInt64);
}

void VqvaeTrainer::set_learning_rate(double lr) {
  for (auto& group : optimizer_->param_groups())
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

VqvaeLossBreakdown VqvaeTrainer::step(const torch::Tensor& x) {
  model_->train();
  optimizer_->zero_grad();
  auto fwd = model_->forward(x);
  auto loss = vqvae_loss(x, fwd.x_recon, fwd.z, fwd.q.embedded, config_.alpha, config_.beta,
                         config_.convention);
  auto b = loss.breakdown();
  check_finite(b, "training step");
  loss.total.backward();
  optimizer_->step();
  if (config_.dead_code_restart_every > 0) {
    usage_ += torch::bincount(fwd.q.indices.flatten(), {}, usage_.size(0));
    if (++steps_since_check_ >= config_.dead_code_restart_every) restart_dead_codes(fwd.z);
  }
  return b;
}

void VqvaeTrainer::restart_dead_codes(const torch::Tensor& z) {
  torch::NoGradGuard no_grad;
  const auto dead = (usage_ == 0).nonzero().flatten();
  if (dead.numel() > 0) {
    const auto d = model_->codebook->dim();
    const auto cells = z.detach().permute({0, 2, 3, 1}).reshape({-1, d});
    const auto pick = torch::randint(cells.size(0), {dead.numel()}, torch::kInt64);
    auto entries = model_->codebook->entries();
    entries.index_copy_(0, dead, cells.index_select(0, pick).to(entries.scalar_type()));
    codes_restarted_ += dead.numel();
  }
  usage_.zero_();
  steps_since_check_ = 0;
}

Vqvae pretrain(std::span<const LabeledImage> train, const VqvaeArch& arch,
               const PretrainConfig& config, const EpochCallback& on_epoch,
               std::vector<EpochLoss>* history) {
  require(!train.empty(), ErrorKind::InvalidArgument, "cannot pretrain on an empty dataset");
  config.validate();
  arch.validate();
  torch::manual_seed(config.seed);
  Vqvae model(arch);
  VqvaeTrainer trainer(model, config);

  const auto data = stack_pixels(train);
  const auto n = data.size(0);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        learning_rate_for_epoch(epoch, config.learning_rate, config.lr_decay, config.lr_decay_every);
    trainer.set_learning_rate(lr);
    std::iota(order.begin(), order.end(), std::int64_t{0});
    Rng rng(config.seed, {0x7072ULL, static_cast<std::uint64_t>(epoch)});
    rng.shuffle(std::span<std::int64_t>(order));
    const auto perm = torch::tensor(order, torch::kInt64);

    const auto restarted_before = trainer.codes_restarted();
    EpochLoss summary;
    summary.epoch = epoch;
    summary.learning_rate = lr;
    summary.mean.alpha = config.alpha;
    summary.mean.beta = config.beta;
    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const auto len = std::min(config.batch_size, n - start);
      auto batch = data.index_select(0, perm.narrow(0, start, len));
      const auto b = trainer.step(batch);
      const double wgt = static_cast<double>(len) / static_cast<double>(n);
      summary.mean.rec += wgt * b.rec;
      summary.mean.cb += wgt * b.cb;
      summary.mean.com += wgt * b.com;
      summary.mean.total += wgt * b.total;
    }
    summary.codes_restarted = trainer.codes_restarted() - restarted_before;
    check_finite(summary.mean, "epoch " + std::to_string(epoch));
    model->state.epochs_completed = epoch + 1;
    model->state.learning_rate = lr;
    if (history != nullptr) history->push_back(summary);
    if (on_epoch) on_epoch(summary);
  }
  model->eval();
  return model;
}

}  // namespace vqfuzz
