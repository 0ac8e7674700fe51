#include <gtest/gtest.h>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "vqfuzz/checkpoint.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/model_store.hpp"
#include "vqfuzz/vqvae.hpp"

namespace vqfuzz {
namespace {

using testing::TempDir;

VqvaeArch arch_with(std::int64_t d, std::int64_t k) {
  auto a = testing::tiny_arch();
  a.embedding_dim = d;
  a.num_codes = k;
  return a;
}

TEST(Encode, MnistShapeIsSevenBySeven) {
  torch::manual_seed(0);
  Vqvae model(arch_with(6, 16));
  model->eval();
  const auto z = model->encode(torch::rand({3, 1, 28, 28}));
  EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{3, 6, 7, 7}));
}

TEST(Encode, ShapeMismatchIsRejected) {
  Vqvae model(testing::tiny_arch());
  try {
    model->encode(torch::rand({1, 1, 27, 28}));
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(model->decode(torch::rand({1, 3, 7, 7})), Error);
}

TEST(Encode, ZeroWeightsMapZeroImageToZeroLatent) {
  Vqvae model(testing::tiny_arch());
  {
    torch::NoGradGuard guard;
    for (auto& p : model->encoder->parameters()) p.zero_();
  }
  model->eval();
  const auto z = model->encode(torch::zeros({1, 1, 28, 28}));
  EXPECT_EQ(z.abs().max().item<float>(), 0.0F);
}

TEST(Encode, EvaluationModeIsBitwiseDeterministic) {
  torch::manual_seed(3);
  Vqvae model(testing::tiny_arch());
  model->eval();
  const auto x = torch::rand({4, 1, 28, 28});
  EXPECT_TRUE(torch::equal(model->encode(x), model->encode(x)));
}

TEST(Quantize, DocumentedCases) {
  const auto entries = torch::tensor({0.0, 0.0, 1.0, 1.0}).reshape({2, 2});
  auto cell = [&](double a, double b) {
    return quantize(torch::tensor({a, b}).reshape({1, 2, 1, 1}), entries);
  };
  auto q = cell(0.2, 0.1);
  EXPECT_EQ(q.indices.item<std::int64_t>(), 0);
  EXPECT_TRUE(torch::equal(q.embedded.flatten(), torch::tensor({0.0, 0.0}, torch::kFloat64)));
  q = cell(1.0, 1.0);
  EXPECT_EQ(q.indices.item<std::int64_t>(), 1);
  EXPECT_EQ((q.embedded.flatten() - torch::tensor({1.0, 1.0}, torch::kFloat64)).abs().max().item<double>(), 0.0);
  EXPECT_EQ(cell(0.5, 0.5).indices.item<std::int64_t>(), 0);
}

TEST(Quantize, DimensionMismatchAndEmptyCodebook) {
  EXPECT_THROW(quantize(torch::zeros({1, 3, 1, 1}), torch::zeros({4, 2})), Error);
  EXPECT_THROW(quantize(torch::zeros({1, 2, 1, 1}), torch::zeros({0, 2})), Error);
}

TEST(Quantize, MatchesExhaustiveSearch) {
  const auto r = testing::check_quantizer_oracle(500, 17);
  EXPECT_TRUE(r.ok) << r.detail;
  EXPECT_EQ(r.cases, 500);
}

TEST(Decode, OutputShapeAndRange) {
  torch::manual_seed(1);
  Vqvae model(arch_with(4, 16));
  model->eval();
  for (double scale : {0.1, 1.0, 10.0, 100.0}) {
    const auto x = model->decode(torch::randn({5, 4, 7, 7}) * scale);
    EXPECT_EQ(x.sizes(), (std::vector<std::int64_t>{5, 1, 28, 28}));
    EXPECT_GE(x.min().item<float>(), 0.0F);
    EXPECT_LE(x.max().item<float>(), 1.0F);
  }
  const auto img = torch::rand({2, 1, 28, 28});
  EXPECT_EQ(model->forward(img).x_recon.sizes(), img.sizes());
}

TEST(Loss, DocumentedCasesAndGrid) {
  const auto r = testing::check_loss_formulas();
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(Loss, IdentityOnRandomInputs) {
  torch::manual_seed(5);
  for (int t = 0; t < 50; ++t) {
    const auto x = torch::rand({2, 1, 8, 8});
    const auto z = torch::randn({2, 3, 2, 2});
    const double alpha = torch::rand({}).item<double>();
    const double beta = torch::rand({}).item<double>();
    for (auto conv : {CodebookLossConvention::Paper, CodebookLossConvention::Classic}) {
      const auto b = vqvae_loss(x, torch::rand({2, 1, 8, 8}), z, torch::randn({2, 3, 2, 2}), alpha,
                                beta, conv)
                         .breakdown();
      EXPECT_NEAR(b.total, b.rec + alpha * b.cb + beta * b.com, 1e-6);
      EXPECT_GE(b.rec, 0.0);
      EXPECT_GE(b.cb, 0.0);
      EXPECT_GE(b.com, 0.0);
    }
  }
}

TEST(Loss, GradientRouting) {
  auto z = torch::randn({1, 2, 1, 1}, torch::requires_grad());
  auto zq = torch::randn({1, 2, 1, 1}, torch::requires_grad());
  const auto x = torch::zeros({1, 1, 4, 4});
  auto run = [&](CodebookLossConvention conv, bool use_cb) {
    z.mutable_grad() = torch::Tensor();
    zq.mutable_grad() = torch::Tensor();
    auto loss = vqvae_loss(x, x, z, zq, 1.0, 1.0, conv);
    (use_cb ? loss.cb : loss.com).backward();
    return std::pair{z.grad().defined() && z.grad().abs().sum().item<double>() > 0,
                     zq.grad().defined() && zq.grad().abs().sum().item<double>() > 0};
  };
  EXPECT_EQ(run(CodebookLossConvention::Paper, true), std::pair(true, false));
  EXPECT_EQ(run(CodebookLossConvention::Paper, false), std::pair(false, true));
  EXPECT_EQ(run(CodebookLossConvention::Classic, true), std::pair(false, true));
  EXPECT_EQ(run(CodebookLossConvention::Classic, false), std::pair(true, false));
}

TEST(StraightThrough, AnalyticMatchesFiniteDifference) {
  for (std::uint64_t seed : {1U, 2U, 3U}) {
    const auto r = testing::check_straight_through_gradient(seed);
    EXPECT_TRUE(r.ok) << "seed " << seed << ": " << r.detail;
  }
}

TEST(StraightThrough, ForwardIsQuantizedValue) {
  const auto z = torch::randn({2, 3, 2, 2});
  const auto zq = torch::randn({2, 3, 2, 2});
  EXPECT_TRUE(torch::allclose(straight_through(z, zq), zq, 0.0, 1e-6));
}

TEST(Schedule, StepDecay) {
  EXPECT_DOUBLE_EQ(learning_rate_for_epoch(0, 1e-3, 0.1, 20), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_for_epoch(19, 1e-3, 0.1, 20), 1e-3);
  EXPECT_NEAR(learning_rate_for_epoch(25, 1e-3, 0.1, 20), 1e-4, 1e-18);
  EXPECT_NEAR(learning_rate_for_epoch(39, 1e-3, 0.1, 20), 1e-4, 1e-18);
  EXPECT_NEAR(learning_rate_for_epoch(49, 1e-3, 0.1, 20), 1e-5, 1e-19);
}

TEST(Pretrain, ZeroEpochsLeavesInitialization) {
  const auto data = testing::synthetic_digits(2, 0, 10);
  PretrainConfig config;
  config.epochs = 0;
  config.seed = 9;
  auto trained = pretrain(data, testing::tiny_arch(), config);
  torch::manual_seed(9);
  Vqvae fresh(testing::tiny_arch());
  EXPECT_EQ(weights_checksum(*trained), weights_checksum(*fresh));
  EXPECT_EQ(trained->state.epochs_completed, 0);
}

TEST(Pretrain, EmptyDatasetIsRejected) {
  std::vector<LabeledImage> none;
  EXPECT_THROW(pretrain(none, testing::tiny_arch(), PretrainConfig{}), Error);
}

TEST(Pretrain, CodebookConsistentAfterEveryStep) {
  torch::manual_seed(4);
  Vqvae model(testing::tiny_arch());
  PretrainConfig config;
  config.dead_code_restart_every = 3;
  VqvaeTrainer trainer(model, config);
  const auto data = stack_pixels(testing::synthetic_digits(4, 2, 10));
  for (int step = 0; step < 10; ++step) {
    trainer.step(data);
    torch::NoGradGuard guard;
    const auto q = model->quantize(model->encode(data));
    const auto gathered = model->codebook->entries().index_select(0, q.indices.flatten());
    const auto embedded = q.embedded.permute({0, 2, 3, 1}).reshape({-1, model->arch().embedding_dim});
    ASSERT_TRUE(torch::equal(gathered, embedded)) << "step " << step;
    ASSERT_GE(q.indices.min().item<std::int64_t>(), 0);
    ASSERT_LT(q.indices.max().item<std::int64_t>(), model->arch().num_codes);
  }
  EXPECT_GT(trainer.codes_restarted(), 0);
}

TEST(Pretrain, LossFallsForThreeSeeds) {
  const auto data = testing::synthetic_digits(20, 1, 10);
  for (std::uint64_t seed : {0U, 1U, 2U}) {
    PretrainConfig config;
    config.epochs = 6;
    config.batch_size = 32;
    config.seed = seed;
    std::vector<EpochLoss> history;
    pretrain(data, testing::tiny_arch(), config, {}, &history);
    ASSERT_EQ(history.size(), 6U);
    EXPECT_LT(history.back().mean.total, history.front().mean.total) << "seed " << seed;
    EXPECT_DOUBLE_EQ(history.front().learning_rate, 1e-3);
  }
}

TEST(Pretrain, SameSeedSameWeights) {
  const auto data = testing::synthetic_digits(5, 1, 10);
  PretrainConfig config;
  config.epochs = 2;
  config.batch_size = 16;
  auto a = pretrain(data, testing::tiny_arch(), config);
  auto b = pretrain(data, testing::tiny_arch(), config);
  EXPECT_EQ(weights_checksum(*a), weights_checksum(*b));
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  TempDir dir;
  const auto data = testing::synthetic_digits(3, 1, 10);
  PretrainConfig config;
  config.epochs = 1;
  auto model = pretrain(data, testing::tiny_arch(), config);
  save_vqvae(model, dir.path());
  auto loaded = load_vqvae(dir.path());
  EXPECT_EQ(loaded->arch(), model->arch());
  EXPECT_EQ(weights_checksum(*loaded), weights_checksum(*model));
  EXPECT_EQ(loaded->state.epochs_completed, 1);
  EXPECT_DOUBLE_EQ(loaded->state.learning_rate, model->state.learning_rate);
  loaded->eval();
  const auto x = stack_pixels(data);
  EXPECT_TRUE(torch::equal(loaded->forward(x).x_recon, model->forward(x).x_recon));
}

TEST(Checkpoint, MissingDirectory) {
  TempDir dir;
  try {
    load_vqvae(dir / "nothing");
    FAIL() << "expected an exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingArtifact);
  }
}

}  // namespace
}  // namespace vqfuzz
