#include "vqfuzz/interpolate.hpp"

#include <cmath>

#include <torch/torch.h>

#include "vqfuzz/error.hpp"

namespace vqfuzz {

void check_lambda_range(double lambda) {
  require(std::isfinite(lambda) && lambda >= 0.0 && lambda <= 1.0, ErrorKind::InvalidArgument,
          "lambda must lie in [0, 1], got " + std::to_string(lambda));
}

torch::Tensor interpolate(const torch::Tensor& z_orig, const torch::Tensor& z_other, double lambda) {
  check_lambda_range(lambda);
  require(z_orig.sizes() == z_other.sizes(), ErrorKind::ShapeMismatch,
          "interpolated latents differ in shape: " + std::string(c10::str(z_orig.sizes())) +
              " vs " + std::string(c10::str(z_other.sizes())));
  // The endpoints are returned untouched so they hold bit-for-bit.
  if (lambda == 0.0) return z_orig * 1.0;
  if (lambda == 1.0) return z_other * 1.0;
  return lambda * z_other + (1.0 - lambda) * z_orig;
}

}  // namespace vqfuzz
