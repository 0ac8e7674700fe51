#pragma once

// Independent reference implementations and randomized property checks. Each
// check returns a CheckResult so the same code backs the unit tests and the
// acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vqfuzz/metrics.hpp"
#include "vqfuzz/random.hpp"

namespace vqfuzz::testing {

struct CheckResult {
  bool ok = true;
  std::int64_t cases = 0;
  std::string detail;  // first failure, or a summary when ok

  void fail(const std::string& message) {
    if (ok) detail = message;
    ok = false;
  }
};

// Exhaustive nearest entry in double precision, ties to the lowest index.
// z: (N, d, h, w); entries: (K, d). Returns (N, h, w) int64.
torch::Tensor brute_force_nearest(const torch::Tensor& z, const torch::Tensor& entries);

// Random (latent, codebook) instances with K <= max_codes and d <= max_dim.
// Half of the instances use small integer grids so exact ties occur; some
// also duplicate codebook rows.
CheckResult check_quantizer_oracle(std::int64_t instances, std::uint64_t seed,
                                   std::int64_t max_codes = 32, std::int64_t max_dim = 8);

// VQ-VAE, discriminator and generator losses against closed forms on the
// residual grid and the score grid {0.1, 0.25, 0.5, 0.75, 0.9}.
CheckResult check_loss_formulas(double tolerance = 1e-9);

// Analytic gradient of the reconstruction loss w.r.t. encoder parameters on a
// tiny model with one latent cell, against central differences of the loss
// with the quantizer replaced by identity plus a detached residual.
CheckResult check_straight_through_gradient(std::uint64_t seed, double rel_tolerance = 1e-3);

// Endpoint, symmetry and record-count properties on random configurations.
CheckResult check_interpolation_properties(std::int64_t configurations, std::uint64_t seed);

// Double-loop MSE and SSIM. a, b: (C, H, W).
double naive_mse(const torch::Tensor& a, const torch::Tensor& b);
double naive_ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params = {});

// Random evaluated-record sets for metric property tests.
std::vector<EvaluatedRecord> random_records(Rng& rng, std::int64_t class_count = 10);

// Metric invariants on `cases` random inputs: oracle equivalence of mse/ssim on
// 8x8 images, count integrality, LD bounds and zero-equivalence, ER/SR
// implication, the SR = 1 / ER < 1 counterexample and purity.
CheckResult check_metric_properties(std::int64_t cases, std::uint64_t seed);

}  // namespace vqfuzz::testing
