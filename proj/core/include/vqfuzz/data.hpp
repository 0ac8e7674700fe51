#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

namespace vqfuzz {

struct ImageShape {
  std::int64_t channels = 1;
  std::int64_t height = 28;
  std::int64_t width = 28;

  std::int64_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

std::string to_string(const ImageShape& shape);

enum class Split { Train, Test };

const char* to_string(Split split) noexcept;
Split parse_split(const std::string& text);

// A pixel array in [0,1] laid out channels x height x width, plus its class.
struct LabeledImage {
  torch::Tensor pixels;  // float32, (C, H, W)
  std::int64_t label = 0;
  std::string id;
};

struct DatasetSpec {
  std::string name = "mnist";
  std::int64_t class_count = 10;
  ImageShape image_shape{};
  Split split = Split::Train;

  // Throws InvalidArgument when class_count < 2 or the shape is empty.
  void validate() const;
};

// Map from class id to the images carrying that label. Every class id in
// [0, K) has an entry, possibly empty.
struct ClassPartition {
  std::int64_t class_count = 0;
  std::map<std::int64_t, std::vector<LabeledImage>> subsets;

  std::size_t total_size() const;
};

enum class SelectionRole { Original, Perturber };

using ClassSelection = std::map<std::int64_t, std::vector<LabeledImage>>;

// Loads every sample of spec.split from `source`. Two layouts are recognised:
//   IDX:  <source>/{train,t10k}-{images-idx3,labels-idx1}-ubyte
//   PNG:  <source>[/<split>]/<class_id>/<file>.png
// Samples come back sorted by id with pixels scaled to [0,1].
std::vector<LabeledImage> load_dataset(const DatasetSpec& spec,
                                       const std::filesystem::path& source);

ClassPartition partition_by_class(std::span<const LabeledImage> images,
                                  std::int64_t class_count);

// Draws `per_class_count` samples without replacement from every class. The
// draw depends only on (partition, per_class_count, seed, role).
ClassSelection select_samples(const ClassPartition& partition, std::int64_t per_class_count,
                              std::uint64_t seed, SelectionRole role);

// Stacks pixels into a contiguous (N, C, H, W) float tensor.
torch::Tensor stack_pixels(std::span<const LabeledImage> images);
torch::Tensor stack_labels(std::span<const LabeledImage> images);

// Deterministic digest of pixels, labels and ids (hex SHA-256).
std::string dataset_checksum(std::span<const LabeledImage> images);

}  // namespace vqfuzz
