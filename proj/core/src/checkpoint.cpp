#include "vqfuzz/checkpoint.hpp"

#include "vqfuzz/digest.hpp"
#include "vqfuzz/error.hpp"

namespace vqfuzz {
namespace {

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true))
    out.emplace_back("param:" + item.key(), item.value());
  for (const auto& item : module.named_buffers(/*recurse=*/true))
    out.emplace_back("buffer:" + item.key(), item.value());
  return out;
}

}  // namespace

void save_weights(const torch::nn::Module& module, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& [name, tensor] : named_state(module)) archive.write(name, tensor.detach().cpu());
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorKind::Internal, "cannot write weights to " + path.string() + ": " + e.what_without_backtrace());
  }
}

void load_weights(torch::nn::Module& module, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingArtifact, "missing weights file " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorKind::CorruptData, "cannot read weights from " + path.string() + ": " + e.what_without_backtrace());
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, tensor] : named_state(module)) {
    torch::Tensor stored;
    if (!archive.try_read(name, stored))
      fail(ErrorKind::CorruptData, path.string() + " has no entry '" + name + "'");
    if (stored.sizes() != tensor.sizes())
      fail(ErrorKind::CorruptData, "entry '" + name + "' in " + path.string() + " has shape " +
                                       std::string(c10::str(stored.sizes())) + ", model expects " +
                                       std::string(c10::str(tensor.sizes())));
    tensor.copy_(stored);
  }
}

std::string weights_checksum(const torch::nn::Module& module) {
  Digest digest;
  for (const auto& [name, tensor] : named_state(module)) {
    digest.update(name);
    for (auto s : tensor.sizes()) digest.update_value(s);
    auto flat = tensor.detach().cpu().contiguous();
    const auto* bytes = static_cast<const std::byte*>(flat.data_ptr());
    digest.update(std::span<const std::byte>(bytes, flat.numel() * flat.element_size()));
  }
  return digest.hex();
}

}  // namespace vqfuzz
