#include "vqfuzz/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <torch/torch.h>

#include "vqfuzz/digest.hpp"
#include "vqfuzz/error.hpp"
#include "vqfuzz/image_io.hpp"
#include "vqfuzz/random.hpp"

namespace fs = std::filesystem;

namespace vqfuzz {

std::string to_string(const ImageShape& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

const char* to_string(Split split) noexcept { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  fail(ErrorKind::InvalidConfig, "unknown split '" + text + "' (expected train or test)");
}

void DatasetSpec::validate() const {
  require(class_count >= 2, ErrorKind::InvalidArgument,
          "dataset '" + name + "' needs at least 2 classes, got " + std::to_string(class_count));
  require(image_shape.channels > 0 && image_shape.height > 0 && image_shape.width > 0,
          ErrorKind::InvalidArgument, "dataset image shape must be positive");
}

std::size_t ClassPartition::total_size() const {
  std::size_t n = 0;
  for (const auto& [k, items] : subsets) n += items.size();
  return n;
}

namespace {

std::uint32_t read_be32(std::istream& in, const fs::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    fail(ErrorKind::CorruptData, "truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

std::vector<LabeledImage> load_idx(const DatasetSpec& spec, const fs::path& images_path,
                                   const fs::path& labels_path) {
  require(spec.image_shape.channels == 1, ErrorKind::InvalidArgument,
          "IDX layout holds single-channel images; spec asks for " + to_string(spec.image_shape));
  if (!fs::exists(labels_path))
    fail(ErrorKind::MissingArtifact, "missing IDX label file " + labels_path.string());

  std::ifstream images(images_path, std::ios::binary);
  std::ifstream labels(labels_path, std::ios::binary);
  require(images.good() && labels.good(), ErrorKind::MissingArtifact,
          "cannot open IDX files under " + images_path.parent_path().string());

  if (read_be32(images, images_path) != 0x00000803)
    fail(ErrorKind::CorruptData, "bad magic number in " + images_path.string());
  const std::uint32_t count = read_be32(images, images_path);
  const std::uint32_t rows = read_be32(images, images_path);
  const std::uint32_t cols = read_be32(images, images_path);
  if (read_be32(labels, labels_path) != 0x00000801)
    fail(ErrorKind::CorruptData, "bad magic number in " + labels_path.string());
  const std::uint32_t label_count = read_be32(labels, labels_path);

  require(label_count == count, ErrorKind::CorruptData,
          "IDX image/label counts differ: " + std::to_string(count) + " vs " +
              std::to_string(label_count));
  require(rows == spec.image_shape.height && cols == spec.image_shape.width,
          ErrorKind::CorruptData,
          "IDX images are " + std::to_string(rows) + "x" + std::to_string(cols) +
              ", spec expects " + to_string(spec.image_shape));

  const auto n = static_cast<std::int64_t>(count);
  const std::int64_t pixels_per_image = std::int64_t{rows} * cols;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(n * pixels_per_image));
  if (!images.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    fail(ErrorKind::CorruptData, "truncated IDX image data in " + images_path.string());
  std::vector<std::uint8_t> raw_labels(static_cast<std::size_t>(n));
  if (!labels.read(reinterpret_cast<char*>(raw_labels.data()),
                   static_cast<std::streamsize>(raw_labels.size())))
    fail(ErrorKind::CorruptData, "truncated IDX label data in " + labels_path.string());

  auto all = torch::from_blob(raw.data(), {n, 1, std::int64_t{rows}, std::int64_t{cols}},
                              torch::kUInt8)
                 .to(torch::kFloat32)
                 .div_(255.0F);

  const int width = static_cast<int>(std::to_string(std::max<std::int64_t>(n - 1, 0)).size());
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(n));
  char id[64];
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = raw_labels[static_cast<std::size_t>(i)];
    if (label >= spec.class_count)
      fail(ErrorKind::CorruptData, "label " + std::to_string(label) + " of record " +
                                       std::to_string(i) + " is outside [0, " +
                                       std::to_string(spec.class_count) + ")");
    std::snprintf(id, sizeof id, "%s-%0*lld", to_string(spec.split), width,
                  static_cast<long long>(i));
    out.push_back(LabeledImage{all[i], label, id});
  }
  return out;
}

bool parse_class_dir(const std::string& name, std::int64_t& k) {
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return false;
  k = std::stoll(name);
  return true;
}

std::vector<LabeledImage> load_png_tree(const DatasetSpec& spec, const fs::path& root) {
  std::vector<std::pair<std::string, fs::path>> files;
  std::vector<std::int64_t> labels_of;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::int64_t k = 0;
    if (!parse_class_dir(entry.path().filename().string(), k)) continue;
    if (k >= spec.class_count)
      fail(ErrorKind::CorruptData, "class directory " + entry.path().string() +
                                       " is outside [0, " + std::to_string(spec.class_count) +
                                       ")");
    for (const auto& f : fs::directory_iterator(entry.path())) {
      if (!f.is_regular_file() || f.path().extension() != ".png") continue;
      files.emplace_back(entry.path().filename().string() + "/" + f.path().stem().string(),
                         f.path());
    }
  }
  if (files.empty()) fail(ErrorKind::MissingArtifact, "no PNG class directories under " + root.string());
  std::sort(files.begin(), files.end());

  std::vector<LabeledImage> out;
  out.reserve(files.size());
  for (const auto& [id, path] : files) {
    auto pixels = read_png(path, spec.image_shape.channels);
    if (pixels.size(1) != spec.image_shape.height || pixels.size(2) != spec.image_shape.width)
      fail(ErrorKind::CorruptData, path.string() + " is not " + to_string(spec.image_shape));
    const auto label = std::stoll(id.substr(0, id.find('/')));
    out.push_back(LabeledImage{std::move(pixels), label, id});
  }
  return out;
}

}  // namespace

std::vector<LabeledImage> load_dataset(const DatasetSpec& spec, const fs::path& source) {
  spec.validate();
  if (!fs::exists(source) || !fs::is_directory(source))
    fail(ErrorKind::MissingArtifact, "dataset source " + source.string() + " does not exist");

  const std::string prefix = spec.split == Split::Train ? "train" : "t10k";
  const fs::path idx_images = source / (prefix + "-images-idx3-ubyte");
  if (fs::exists(idx_images))
    return load_idx(spec, idx_images, source / (prefix + "-labels-idx1-ubyte"));

  const fs::path split_dir = source / to_string(spec.split);
  if (fs::is_directory(split_dir)) return load_png_tree(spec, split_dir);
  return load_png_tree(spec, source);
}

ClassPartition partition_by_class(std::span<const LabeledImage> images, std::int64_t class_count) {
  require(class_count >= 1, ErrorKind::InvalidArgument, "class count must be positive");
  ClassPartition partition;
  partition.class_count = class_count;
  for (std::int64_t k = 0; k < class_count; ++k) partition.subsets[k];
  for (const auto& img : images) {
    if (img.label < 0 || img.label >= class_count)
      fail(ErrorKind::InvalidArgument, "sample " + img.id + " has label " +
                                           std::to_string(img.label) + " outside [0, " +
                                           std::to_string(class_count) + ")");
    partition.subsets[img.label].push_back(img);
  }
  return partition;
}

ClassSelection select_samples(const ClassPartition& partition, std::int64_t per_class_count,
                              std::uint64_t seed, SelectionRole role) {
  require(per_class_count >= 0, ErrorKind::InvalidArgument, "per-class count must be non-negative");
  ClassSelection selection;
  const auto role_id = static_cast<std::uint64_t>(role == SelectionRole::Original ? 1 : 2);
  for (const auto& [k, items] : partition.subsets) {
    auto& chosen = selection[k];
    if (per_class_count == 0) continue;
    if (static_cast<std::int64_t>(items.size()) < per_class_count)
      fail(ErrorKind::InsufficientSamples,
           "class " + std::to_string(k) + " has " + std::to_string(items.size()) +
               " samples, " + std::to_string(per_class_count) + " requested");
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, {role_id, static_cast<std::uint64_t>(k)});
    rng.shuffle(std::span<std::size_t>(order));
    chosen.reserve(static_cast<std::size_t>(per_class_count));
    for (std::int64_t i = 0; i < per_class_count; ++i) chosen.push_back(items[order[static_cast<std::size_t>(i)]]);
  }
  return selection;
}

torch::Tensor stack_pixels(std::span<const LabeledImage> images) {
  require(!images.empty(), ErrorKind::InvalidArgument, "cannot stack an empty image list");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) parts.push_back(img.pixels);
  return torch::stack(parts);
}

torch::Tensor stack_labels(std::span<const LabeledImage> images) {
  auto labels = torch::empty({static_cast<std::int64_t>(images.size())}, torch::kInt64);
  auto acc = labels.accessor<std::int64_t, 1>();
  for (std::size_t i = 0; i < images.size(); ++i) acc[static_cast<std::int64_t>(i)] = images[i].label;
  return labels;
}

std::string dataset_checksum(std::span<const LabeledImage> images) {
  Digest digest;
  for (const auto& img : images) {
    digest.update(img.id);
    digest.update_value(img.label);
    auto px = img.pixels.contiguous();
    digest.update(std::as_bytes(std::span<const float>(px.data_ptr<float>(),
                                                       static_cast<std::size_t>(px.numel()))));
  }
  return digest.hex();
}

}  // namespace vqfuzz
