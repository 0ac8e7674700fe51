#pragma once

#include <filesystem>

#include "vqfuzz/adversary.hpp"
#include "vqfuzz/vqvae.hpp"

namespace vqfuzz {

// A VQ-VAE directory holds vqvae.pt and vqvae.json (architecture and training
// state). An adversary directory adds z_discriminator.pt, x_discriminator.pt
// and adversary.json (trained lambda and ablation flags).
void save_vqvae(const Vqvae& model, const std::filesystem::path& dir);
Vqvae load_vqvae(const std::filesystem::path& dir);

void save_adversary(const AdversaryModel& model, const std::filesystem::path& dir);
AdversaryModel load_adversary(const std::filesystem::path& dir);

}  // namespace vqfuzz
