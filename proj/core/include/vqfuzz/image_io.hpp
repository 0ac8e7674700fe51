#pragma once

#include <filesystem>

#include <torch/types.h>

namespace vqfuzz {

// Reads an 8-bit PNG as a float (C, H, W) tensor in [0,1]; channels is 1 (gray)
// or 3 (RGB) and the file is converted to that format if needed.
torch::Tensor read_png(const std::filesystem::path& path, std::int64_t channels);

// Writes a (C, H, W) tensor with values in [0,1] as an 8-bit PNG. Values are
// rounded to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const torch::Tensor& pixels);

// Tiles (N, C, H, W) images into a grid with `columns` tiles per row.
torch::Tensor tile_images(const torch::Tensor& images, std::int64_t columns);

}  // namespace vqfuzz
