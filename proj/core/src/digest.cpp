#include "vqfuzz/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "vqfuzz/error.hpp"

namespace vqfuzz {

struct Digest::State {
  EVP_MD_CTX* ctx = nullptr;
  bool finished = false;
  ~State() { EVP_MD_CTX_free(ctx); }
};

Digest::Digest() : state_(std::make_unique<State>()) {
  state_->ctx = EVP_MD_CTX_new();
  if (state_->ctx == nullptr || EVP_DigestInit_ex(state_->ctx, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::Internal, "failed to initialise SHA-256 context");
}

Digest::~Digest() = default;
Digest::Digest(Digest&&) noexcept = default;
Digest& Digest::operator=(Digest&&) noexcept = default;

Digest& Digest::update(std::span<const std::byte> bytes) {
  require(!state_->finished, ErrorKind::Internal, "digest already finalised");
  if (!bytes.empty()) EVP_DigestUpdate(state_->ctx, bytes.data(), bytes.size());
  return *this;
}

Digest& Digest::update(std::string_view text) {
  return update(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string Digest::hex() {
  require(!state_->finished, ErrorKind::Internal, "digest already finalised");
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(state_->ctx, out.data(), &len);
  state_->finished = true;
  std::string result;
  result.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", out[i]);
    result += buf;
  }
  return result;
}

std::string sha256_hex(std::string_view text) {
  Digest d;
  d.update(text);
  return d.hex();
}

}  // namespace vqfuzz
