#pragma once

#include <filesystem>

namespace vqfuzz::cli {

// Exclusive advisory lock on <dir>/.vqfuzz.lock, held for the lifetime of
// the object. Creating it fails immediately if another process holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();

  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace vqfuzz::cli
