#pragma once

#include <torch/types.h>

namespace vqfuzz {

// lambda * z_other + (1 - lambda) * z_orig, elementwise. lambda must lie in
// [0, 1] and both latents must have the same shape; lambda == 0 returns z_orig
// and lambda == 1 returns z_other exactly.
torch::Tensor interpolate(const torch::Tensor& z_orig, const torch::Tensor& z_other, double lambda);

void check_lambda_range(double lambda);

}  // namespace vqfuzz
