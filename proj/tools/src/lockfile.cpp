#include "vqfuzz/cli/lockfile.hpp"

#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "vqfuzz/error.hpp"

namespace vqfuzz::cli {

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".vqfuzz.lock") {
  std::filesystem::create_directories(dir);
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorKind::Internal, "cannot open " + path_.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    const int err = errno;
    ::close(fd_);
    fd_ = -1;
    if (err == EWOULDBLOCK)
      fail(ErrorKind::Internal, "output directory " + dir.string() + " is in use by another vqfuzz process");
    fail(ErrorKind::Internal, "cannot lock " + path_.string() + ": " + std::strerror(err));
  }
}

DirectoryLock::~DirectoryLock() {
  if (fd_ < 0) return;
  ::unlink(path_.c_str());
  ::flock(fd_, LOCK_UN);
  ::close(fd_);
}

}  // namespace vqfuzz::cli
