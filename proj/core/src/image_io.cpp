#include "vqfuzz/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <vector>

#include <torch/torch.h>

#include "vqfuzz/error.hpp"

namespace vqfuzz {

torch::Tensor read_png(const std::filesystem::path& path, std::int64_t channels) {
  require(channels == 1 || channels == 3, ErrorKind::InvalidArgument,
          "PNG images must have 1 or 3 channels, requested " + std::to_string(channels));
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingArtifact, "no such image: " + path.string());

  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0)
    fail(ErrorKind::CorruptData, "cannot read PNG " + path.string() + ": " + image.message);

  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
    png_image_free(&image);
    fail(ErrorKind::CorruptData, "cannot decode PNG " + path.string() + ": " + image.message);
  }

  const auto h = static_cast<std::int64_t>(image.height);
  const auto w = static_cast<std::int64_t>(image.width);
  auto hwc = torch::from_blob(buffer.data(), {h, w, channels}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0F).contiguous();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& pixels) {
  require(pixels.dim() == 3, ErrorKind::ShapeMismatch, "write_png expects a (C, H, W) tensor");
  const auto c = pixels.size(0);
  require(c == 1 || c == 3, ErrorKind::ShapeMismatch, "write_png supports 1 or 3 channels");

  auto bytes = pixels.detach()
                   .to(torch::kFloat64)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();

  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(pixels.size(2));
  image.height = static_cast<png_uint_32>(pixels.size(1));
  image.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (png_image_write_to_file(&image, path.c_str(), 0, bytes.data_ptr<std::uint8_t>(), 0,
                              nullptr) == 0)
    fail(ErrorKind::Internal, "cannot write PNG " + path.string() + ": " + image.message);
}

torch::Tensor tile_images(const torch::Tensor& images, std::int64_t columns) {
  require(images.dim() == 4 && images.size(0) > 0, ErrorKind::ShapeMismatch,
          "tile_images expects a non-empty (N, C, H, W) tensor");
  require(columns > 0, ErrorKind::InvalidArgument, "tile_images needs at least one column");
  const auto n = images.size(0);
  const auto c = images.size(1);
  const auto h = images.size(2);
  const auto w = images.size(3);
  const auto cols = std::min(columns, n);
  const auto rows = (n + cols - 1) / cols;
  auto grid = torch::zeros({c, rows * h, cols * w}, images.options());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r = i / cols;
    const auto col = i % cols;
    grid.narrow(1, r * h, h).narrow(2, col * w, w).copy_(images[i]);
  }
  return grid;
}

}  // namespace vqfuzz
