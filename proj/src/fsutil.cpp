#include "fsutil.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "dedupacq/error.hpp"

namespace dedupacq::fsutil {

namespace {

[[noreturn]] void fail(const std::string& what, const std::filesystem::path& path) {
  const int e = errno;
  throw Error(e == ENOSPC || e == EDQUOT ? ErrorCode::StorageError : ErrorCode::IoError,
              what + " '" + path.string() + "': " + std::strerror(e));
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }

 private:
  int fd_;
};

void write_all(int fd, std::span<const std::uint8_t> data, const std::filesystem::path& path) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("write failed", path);
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

void write_atomic(const std::filesystem::path& temp, const std::filesystem::path& target,
                  std::span<const std::uint8_t> data, bool durable) {
  try {
    Fd fd(::open(temp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (fd.get() < 0) fail("cannot create", temp);
    write_all(fd.get(), data, temp);
    if (durable && ::fsync(fd.get()) != 0) fail("fsync failed", temp);
    if (::close(fd.release()) != 0) fail("close failed", temp);
    if (::rename(temp.c_str(), target.c_str()) != 0) fail("rename failed", target);
  } catch (...) {
    ::unlink(temp.c_str());
    throw;
  }
  if (durable) fsync_dir(target.parent_path());
}

Bytes read_file(const std::filesystem::path& path) {
  Fd fd(::open(path.c_str(), O_RDONLY | O_CLOEXEC));
  if (fd.get() < 0) {
    if (errno == ENOENT) throw Error(ErrorCode::NotFound, "no such file '" + path.string() + "'");
    fail("cannot open", path);
  }
  struct stat st {};
  if (::fstat(fd.get(), &st) != 0) fail("stat failed", path);
  Bytes out(static_cast<std::size_t>(st.st_size));
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::read(fd.get(), out.data() + done, out.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("read failed", path);
    }
    if (n == 0) break;
    done += static_cast<std::size_t>(n);
  }
  out.resize(done);
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void append_line(const std::filesystem::path& path, const std::string& line, bool durable) {
  Fd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
  if (fd.get() < 0) fail("cannot open", path);
  const std::string text = line + "\n";
  write_all(fd.get(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), path);
  if (durable && ::fdatasync(fd.get()) != 0) fail("fsync failed", path);
}

void fsync_dir(const std::filesystem::path& dir) {
  Fd fd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC));
  if (fd.get() >= 0) ::fsync(fd.get());
}

}  // namespace dedupacq::fsutil
