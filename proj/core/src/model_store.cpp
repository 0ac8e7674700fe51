#include "vqfuzz/model_store.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "vqfuzz/checkpoint.hpp"
#include "vqfuzz/error.hpp"

namespace vqfuzz {

namespace fs = std::filesystem;

namespace {

nlohmann::json arch_to_json(const VqvaeArch& arch) {
  return {{"channels", arch.image.channels},
          {"height", arch.image.height},
          {"width", arch.image.width},
          {"hidden_channels", arch.hidden_channels},
          {"residual_channels", arch.residual_channels},
          {"residual_blocks", arch.residual_blocks},
          {"embedding_dim", arch.embedding_dim},
          {"num_codes", arch.num_codes}};
}

VqvaeArch arch_from_json(const nlohmann::json& j) {
  VqvaeArch arch;
  arch.image = {j.at("channels").get<std::int64_t>(), j.at("height").get<std::int64_t>(),
                j.at("width").get<std::int64_t>()};
  arch.hidden_channels = j.at("hidden_channels").get<std::int64_t>();
  arch.residual_channels = j.at("residual_channels").get<std::int64_t>();
  arch.residual_blocks = j.at("residual_blocks").get<std::int64_t>();
  arch.embedding_dim = j.at("embedding_dim").get<std::int64_t>();
  arch.num_codes = j.at("num_codes").get<std::int64_t>();
  arch.validate();
  return arch;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingArtifact, "missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptData, "cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Internal, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace

void save_vqvae(const Vqvae& model, const fs::path& dir) {
  fs::create_directories(dir);
  save_weights(*model, dir / "vqvae.pt");
  write_json(dir / "vqvae.json", {{"arch", arch_to_json(model->arch())},
                                  {"epochs_completed", model->state.epochs_completed},
                                  {"learning_rate", model->state.learning_rate}});
}

Vqvae load_vqvae(const fs::path& dir) {
  const auto meta = read_json(dir / "vqvae.json");
  try {
    Vqvae model(arch_from_json(meta.at("arch")));
    model->state.epochs_completed = meta.at("epochs_completed").get<std::int64_t>();
    model->state.learning_rate = meta.at("learning_rate").get<double>();
    load_weights(*model, dir / "vqvae.pt");
    model->eval();
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptData, "malformed " + (dir / "vqvae.json").string() + ": " + e.what());
  }
}

void save_adversary(const AdversaryModel& model, const fs::path& dir) {
  save_vqvae(model.vqvae, dir);
  save_weights(*model.z_discriminator, dir / "z_discriminator.pt");
  save_weights(*model.x_discriminator, dir / "x_discriminator.pt");
  write_json(dir / "adversary.json", {{"trained_lambda", model.trained_lambda},
                                      {"use_quantizer", model.use_quantizer},
                                      {"use_discriminators", model.use_discriminators}});
}

AdversaryModel load_adversary(const fs::path& dir) {
  const auto meta = read_json(dir / "adversary.json");
  try {
    AdversaryModel model;
    model.vqvae = load_vqvae(dir);
    model.trained_lambda = meta.at("trained_lambda").get<double>();
    model.use_quantizer = meta.at("use_quantizer").get<bool>();
    model.use_discriminators = meta.at("use_discriminators").get<bool>();
    model.z_discriminator = LatentDiscriminator(model.vqvae->arch());
    model.x_discriminator = ImageDiscriminator(model.vqvae->arch().image);
    load_weights(*model.z_discriminator, dir / "z_discriminator.pt");
    load_weights(*model.x_discriminator, dir / "x_discriminator.pt");
    model.z_discriminator->eval();
    model.x_discriminator->eval();
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptData, "malformed " + (dir / "adversary.json").string() + ": " + e.what());
  }
}

}  // namespace vqfuzz
