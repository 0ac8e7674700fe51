#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

namespace vqfuzz {

// Weights are stored in libtorch's zip-based tensor archive, keyed by the
// module's parameter and buffer names. Round trips are bit-exact.
void save_weights(const torch::nn::Module& module, const std::filesystem::path& path);

// Loads into an already-constructed module of the same architecture. Throws
// MissingArtifact when the file is absent and CorruptData on name or shape
// mismatches.
void load_weights(torch::nn::Module& module, const std::filesystem::path& path);

// SHA-256 over parameter and buffer names, shapes and raw values.
std::string weights_checksum(const torch::nn::Module& module);

}  // namespace vqfuzz
