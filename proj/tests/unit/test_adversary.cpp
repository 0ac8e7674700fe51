#include <gtest/gtest.h>

#include <cmath>

#include "synthetic.hpp"
#include "vqfuzz/adversary.hpp"
#include "vqfuzz/checkpoint.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/model_store.hpp"

namespace vqfuzz {
namespace {

using testing::TempDir;

template <typename M>
std::int64_t count_layers(torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& m : module.modules(false))
    if (m->as<M>() != nullptr) ++n;
  return n;
}

struct Fixture {
  std::vector<LabeledImage> data = testing::synthetic_digits(6, 4, 10);
  Vqvae pretrained{nullptr};

  Fixture() {
    PretrainConfig config;
    config.epochs = 1;
    config.batch_size = 16;
    pretrained = pretrain(data, testing::tiny_arch(), config);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

TEST(Losses, DocumentedValues) {
  EXPECT_NEAR(discriminator_loss_z(0.5, 0.5), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(discriminator_loss_z(0.9, 0.1), -2.0 * std::log(0.9), 1e-12);
  EXPECT_NEAR(discriminator_loss_x(0.5, 0.5), 1.3862943611198906, 1e-12);
  EXPECT_NEAR(generator_loss_z(0.5), std::log(2.0), 1e-12);
  EXPECT_NEAR(generator_loss_x(0.25), std::log(4.0), 1e-12);
  EXPECT_GT(generator_loss_z(0.3), generator_loss_z(0.7));
  EXPECT_LT(discriminator_loss_z(1.0, 0.0), 1e-6);
  EXPECT_LT(generator_loss_x(1.0), 1e-6);
  EXPECT_TRUE(std::isfinite(discriminator_loss_x(0.0, 1.0)));
  EXPECT_TRUE(std::isfinite(generator_loss_z(0.0)));
}

TEST(Losses, SharedFormOnScoreGrid) {
  const double grid[] = {0.1, 0.25, 0.5, 0.75, 0.9};
  for (double a : grid) {
    EXPECT_EQ(generator_loss_z(a), generator_loss_x(a));
    for (double b : grid) {
      EXPECT_EQ(discriminator_loss_z(a, b), discriminator_loss_x(a, b));
      EXPECT_NEAR(discriminator_loss_z(a, b), -std::log(a) - std::log(1.0 - b), 1e-9);
    }
  }
}

TEST(Losses, BatchIsMeanOfSamples) {
  const auto orig = torch::tensor({0.1, 0.5, 0.9}, torch::kFloat64);
  const auto adv = torch::tensor({0.25, 0.75, 0.5}, torch::kFloat64);
  double expected = 0.0, gen = 0.0;
  for (int i = 0; i < 3; ++i) {
    expected += discriminator_loss_z(orig[i].item<double>(), adv[i].item<double>()) / 3.0;
    gen += generator_loss_z(adv[i].item<double>()) / 3.0;
  }
  EXPECT_NEAR(discriminator_loss(orig, adv).item<double>(), expected, 1e-12);
  EXPECT_NEAR(generator_loss(adv).item<double>(), gen, 1e-12);
  EXPECT_THROW(discriminator_loss(orig, adv.narrow(0, 0, 2)), Error);
}

TEST(Discriminators, ArchitectureContract) {
  const auto arch = testing::tiny_arch();
  LatentDiscriminator dz(arch);
  ImageDiscriminator dx(arch.image);
  EXPECT_EQ(count_layers<torch::nn::LinearImpl>(*dz), 3);
  EXPECT_EQ(count_layers<torch::nn::Conv2dImpl>(*dz), 0);
  EXPECT_EQ(count_layers<torch::nn::Conv2dImpl>(*dx), 5);
  EXPECT_EQ(count_layers<torch::nn::LinearImpl>(*dx), 2);
  const auto z = torch::randn({2, arch.embedding_dim, 7, 7});
  EXPECT_EQ(dz->logits(z).numel(), 2);
  EXPECT_THROW(dz->score(torch::randn({2, arch.embedding_dim + 1, 7, 7})), Error);
  EXPECT_THROW(dx->score(torch::rand({2, 1, 28, 27})), Error);
}

TEST(Discriminators, ScoresBoundedAndDeterministic) {
  torch::manual_seed(2);
  const auto arch = testing::tiny_arch();
  LatentDiscriminator dz(arch);
  ImageDiscriminator dx(arch.image);
  dz->eval();
  dx->eval();
  for (double scale : {1.0, 1e3, 1e6}) {
    const auto z = torch::randn({8, arch.embedding_dim, 7, 7}) * scale;
    const auto x = torch::rand({8, 1, 28, 28}) * scale;
    for (const auto& s : {dz->score(z), dx->score(x)}) {
      EXPECT_TRUE(torch::isfinite(s).all().item<bool>());
      EXPECT_GE(s.min().item<double>(), kScoreEpsilon * 0.99);
      EXPECT_LE(s.max().item<double>(), 1.0 - kScoreEpsilon * 0.99);
    }
    EXPECT_TRUE(torch::equal(dz->score(z), dz->score(z)));
    EXPECT_TRUE(torch::equal(dx->score(x), dx->score(x)));
  }
}

TEST(JointTraining, BatchesAreClassDisjoint) {
  auto& f = fixture();
  auto model = AdversaryModel::create(f.pretrained, 0.2, 0);
  JointTrainingConfig config;
  JointTrainer trainer(model, f.data, config);
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto idx = torch::randint(trainer.size(), {32}, torch::kInt64);
    const auto batch = trainer.make_batch(idx, rng);
    EXPECT_FALSE(batch.y_orig.eq(batch.y_other).any().item<bool>());
  }
}

TEST(JointTraining, StepsOnlyTouchTheirOwnParameters) {
  auto& f = fixture();
  auto model = AdversaryModel::create(f.pretrained, 0.3, 1);
  JointTrainer trainer(model, f.data, JointTrainingConfig{});
  Rng rng(1);
  const auto batch = trainer.make_batch(torch::arange(16), rng);

  const auto vq0 = weights_checksum(*model.vqvae);
  const auto dz0 = weights_checksum(*model.z_discriminator);
  const auto dx0 = weights_checksum(*model.x_discriminator);
  trainer.discriminator_step(batch);
  EXPECT_EQ(weights_checksum(*model.vqvae), vq0);
  const auto dz1 = weights_checksum(*model.z_discriminator);
  const auto dx1 = weights_checksum(*model.x_discriminator);
  EXPECT_NE(dz1, dz0);
  EXPECT_NE(dx1, dx0);
  trainer.generator_step(batch);
  EXPECT_NE(weights_checksum(*model.vqvae), vq0);
  EXPECT_EQ(weights_checksum(*model.z_discriminator), dz1);
  EXPECT_EQ(weights_checksum(*model.x_discriminator), dx1);
}

TEST(JointTraining, ZeroGanWeightsReduceToVqvaeStep) {
  auto& f = fixture();
  JointTrainingConfig config;
  config.gan_weight_z = 0.0;
  config.gan_weight_x = 0.0;
  auto model = AdversaryModel::create(f.pretrained, 0.2, 0);
  JointTrainer trainer(model, f.data, config);
  Rng rng(2);
  const auto batch = trainer.make_batch(torch::arange(20), rng);

  auto reference = clone_vqvae(f.pretrained);
  reference->train();
  torch::optim::Adam opt(reference->parameters(), torch::optim::AdamOptions(config.generator_lr));
  opt.zero_grad();
  auto fwd = reference->forward(batch.x_orig);
  vqvae_loss(batch.x_orig, fwd.x_recon, fwd.z, fwd.q.embedded, config.alpha, config.beta).total.backward();
  opt.step();

  trainer.generator_step(batch);
  auto got = model.vqvae->named_parameters();
  for (const auto& p : reference->named_parameters())
    EXPECT_TRUE(torch::allclose(got[p.key()], p.value(), 0.0, 1e-7)) << p.key();
}

TEST(JointTraining, FreshDiscriminatorLossNearTwoLnTwo) {
  auto& f = fixture();
  for (std::uint64_t seed : {0U, 1U, 2U}) {
    auto model = AdversaryModel::create(f.pretrained, 0.2, seed);
    JointTrainer trainer(model, f.data, JointTrainingConfig{});
    Rng rng(seed);
    const auto stats = trainer.evaluate_discriminators(trainer.make_batch(torch::arange(60), rng));
    EXPECT_NEAR(stats.loss_z, 2.0 * std::log(2.0), 0.3) << "seed " << seed;
    EXPECT_NEAR(stats.loss_x, 2.0 * std::log(2.0), 0.3) << "seed " << seed;
  }
}

TEST(JointTraining, RecordsLambdaAndLeavesSourceUntouched) {
  auto& f = fixture();
  const auto before = weights_checksum(*f.pretrained);
  for (double lambda : {0.0, 0.1, 0.37, 1.0}) {
    JointTrainingConfig config;
    config.lambda = lambda;
    config.epochs = 1;
    config.batch_size = 30;
    const auto model = joint_train(f.pretrained, f.data, config);
    EXPECT_EQ(model.trained_lambda, lambda);
  }
  EXPECT_EQ(weights_checksum(*f.pretrained), before);
}

TEST(JointTraining, RejectsSingleClassAndBadLambda) {
  auto& f = fixture();
  std::vector<LabeledImage> one_class(f.data.begin(), f.data.begin() + 6);
  EXPECT_THROW(joint_train(f.pretrained, one_class, JointTrainingConfig{}), Error);
  JointTrainingConfig config;
  config.lambda = 1.5;
  EXPECT_THROW(joint_train(f.pretrained, f.data, config), Error);
}

TEST(JointTraining, AblationsSkipTheirComponents) {
  auto& f = fixture();
  JointTrainingConfig config;
  config.epochs = 1;
  config.batch_size = 30;
  config.use_discriminators = false;
  const auto model = joint_train(f.pretrained, f.data, config);
  const auto fresh = AdversaryModel::create(f.pretrained, config.lambda, config.seed);
  EXPECT_EQ(weights_checksum(*model.z_discriminator), weights_checksum(*fresh.z_discriminator));
  EXPECT_EQ(weights_checksum(*model.x_discriminator), weights_checksum(*fresh.x_discriminator));
  EXPECT_FALSE(model.use_discriminators);

  config.use_discriminators = true;
  config.use_quantizer = false;
  std::vector<JointEpochStats> stats;
  const auto no_vq = joint_train(f.pretrained, f.data, config,
                                 [&](const JointEpochStats& s) { stats.push_back(s); });
  ASSERT_EQ(stats.size(), 1U);
  EXPECT_EQ(stats[0].generator.vqvae.cb, 0.0);
  EXPECT_EQ(stats[0].generator.vqvae.com, 0.0);
  EXPECT_FALSE(no_vq.use_quantizer);
}

TEST(JointTraining, SaveLoadRoundTrip) {
  auto& f = fixture();
  TempDir dir;
  JointTrainingConfig config;
  config.lambda = 0.3;
  config.epochs = 1;
  config.batch_size = 30;
  config.use_quantizer = false;
  const auto model = joint_train(f.pretrained, f.data, config);
  save_adversary(model, dir.path());
  const auto loaded = load_adversary(dir.path());
  EXPECT_EQ(loaded.trained_lambda, 0.3);
  EXPECT_FALSE(loaded.use_quantizer);
  EXPECT_TRUE(loaded.use_discriminators);
  EXPECT_EQ(weights_checksum(*loaded.vqvae), weights_checksum(*model.vqvae));
  EXPECT_EQ(weights_checksum(*loaded.z_discriminator), weights_checksum(*model.z_discriminator));
  EXPECT_EQ(weights_checksum(*loaded.x_discriminator), weights_checksum(*model.x_discriminator));
}

}  // namespace
}  // namespace vqfuzz
