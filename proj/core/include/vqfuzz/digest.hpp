#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace vqfuzz {

// Incremental SHA-256 over byte ranges; used for dataset, model and config
// checksums recorded in manifests.
class Digest {
 public:
  Digest();
  ~Digest();
  Digest(Digest&&) noexcept;
  Digest& operator=(Digest&&) noexcept;
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  Digest& update(std::span<const std::byte> bytes);
  Digest& update(std::string_view text);

  template <typename T>
  Digest& update_value(const T& value) {
    return update(std::as_bytes(std::span<const T>(&value, 1)));
  }

  // Returns the lowercase hex digest. The object cannot be updated afterwards.
  std::string hex();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

std::string sha256_hex(std::string_view text);

}  // namespace vqfuzz
