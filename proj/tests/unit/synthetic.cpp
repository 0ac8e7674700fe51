#include "synthetic.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

#include "vqfuzz/image_io.hpp"
#include "vqfuzz/random.hpp"

namespace vqfuzz::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  Rng rng(static_cast<std::uint64_t>(std::random_device{}()));
  for (;;) {
    path_ = fs::temp_directory_path() / ("vqfuzz-test-" + std::to_string(rng.next() % 1000000000));
    if (fs::create_directory(path_)) return;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<LabeledImage> synthetic_digits(std::int64_t per_class, std::uint64_t seed,
                                           std::int64_t class_count, const ImageShape& shape,
                                           const std::string& split) {
  Rng rng(seed);
  std::vector<LabeledImage> out;
  const std::int64_t side = 8;
  const std::int64_t cols = std::max<std::int64_t>(1, (shape.width - side) / 4 + 1);
  for (std::int64_t k = 0; k < class_count; ++k) {
    const std::int64_t top = std::min(shape.height - side, (k / cols) * 4);
    const std::int64_t left = std::min(shape.width - side, (k % cols) * 4);
    for (std::int64_t n = 0; n < per_class; ++n) {
      auto pixels = torch::empty({shape.channels, shape.height, shape.width});
      auto acc = pixels.accessor<float, 3>();
      for (std::int64_t c = 0; c < shape.channels; ++c)
        for (std::int64_t i = 0; i < shape.height; ++i)
          for (std::int64_t j = 0; j < shape.width; ++j) {
            const bool in_square = i >= top && i < top + side && j >= left && j < left + side;
            const double noise = 0.1 * rng.uniform_real();
            acc[c][i][j] = static_cast<float>(in_square ? 0.9 + noise : noise);
          }
      out.push_back(LabeledImage{pixels, k,
                                 split + "-" + std::to_string(k) + "-" + std::to_string(n)});
    }
  }
  return out;
}

void write_png_dataset(const fs::path& root, std::int64_t train_per_class,
                       std::int64_t test_per_class, std::uint64_t seed,
                       std::int64_t class_count) {
  const std::pair<const char*, std::int64_t> splits[] = {{"train", train_per_class},
                                                         {"test", test_per_class}};
  std::uint64_t stream = 0;
  for (const auto& [split, count] : splits) {
    const auto images = synthetic_digits(count, derive_seed(seed, {stream++}), class_count, {}, split);
    for (const auto& img : images) {
      const auto dir = root / split / std::to_string(img.label);
      fs::create_directories(dir);
      write_png(dir / (img.id.substr(img.id.rfind('-') + 1) + ".png"), img.pixels);
    }
  }
}

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                        static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

void write_idx(const fs::path& root, const std::string& prefix,
               const std::vector<LabeledImage>& images) {
  fs::create_directories(root);
  std::ofstream img(root / (prefix + "-images-idx3-ubyte"), std::ios::binary);
  std::ofstream lab(root / (prefix + "-labels-idx1-ubyte"), std::ios::binary);
  const auto& first = images.front().pixels;
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(images.size()));
  put_be32(img, static_cast<std::uint32_t>(first.size(1)));
  put_be32(img, static_cast<std::uint32_t>(first.size(2)));
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(images.size()));
  for (const auto& x : images) {
    auto bytes = x.pixels.mul(255.0F).round().clamp(0, 255).to(torch::kUInt8).contiguous();
    img.write(reinterpret_cast<const char*>(bytes.data_ptr<std::uint8_t>()), bytes.numel());
    const char label = static_cast<char>(x.label);
    lab.write(&label, 1);
  }
}

std::string tiny_config_text(const fs::path& data_dir) {
  std::ostringstream s;
  s << "[data]\n"
    << "dir = " << data_dir.string() << "\n"
    << "[vqvae]\n"
    << "hidden_channels = 8\nresidual_channels = 4\nresidual_blocks = 1\n"
    << "embedding_dim = 4\nnum_codes = 16\n"
    << "[pretrain]\n"
    << "epochs = 1\nbatch_size = 32\ndead_code_restart_every = 0\n"
    << "[adversary]\n"
    << "lambda = 0.2\nepochs = 1\nbatch_size = 32\n"
    << "[generate]\n"
    << "originals_per_class = 1\nperturbers_per_class = 3\n"
    << "[classifier]\n"
    << "epochs = 1\nbatch_size = 32\nretrain_epochs = 1\nretrain_samples = 20\n"
    << "random_control_count = 20\n"
    << "[runtime]\n"
    << "seed = 0\n";
  return s.str();
}

ExperimentConfig tiny_config(const fs::path& data_dir) {
  return parse_config(tiny_config_text(data_dir));
}

VqvaeArch tiny_arch() {
  VqvaeArch arch;
  arch.hidden_channels = 8;
  arch.residual_channels = 4;
  arch.residual_blocks = 1;
  arch.embedding_dim = 4;
  arch.num_codes = 16;
  return arch;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

}  // namespace vqfuzz::testing
