#include "dedupacq/byte_source.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "dedupacq/error.hpp"

namespace dedupacq {

namespace {

std::string errno_text(const std::string& what, const std::string& path) {
  return what + " '" + path + "': " + std::strerror(errno);
}

void pread_full(int fd, std::uint64_t offset, std::span<std::uint8_t> out, const std::string& path) {
  std::size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::pread(fd, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::IoError, errno_text("read failed", path));
    }
    if (n == 0) throw Error(ErrorCode::IoError, "unexpected end of file in '" + path + "'");
    done += static_cast<std::size_t>(n);
  }
}

void pwrite_full(int fd, std::uint64_t offset, std::span<const std::uint8_t> data, const std::string& path) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(errno == ENOSPC ? ErrorCode::StorageError : ErrorCode::IoError,
                  errno_text("write failed", path));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

void check_range(std::uint64_t offset, std::uint64_t length, std::uint64_t size) {
  if (offset > size || length > size - offset) {
    throw Error(ErrorCode::OutOfBounds, "range (" + std::to_string(offset) + ", " +
                                            std::to_string(length) + ") exceeds size " +
                                            std::to_string(size));
  }
}

Bytes ByteSource::read(std::uint64_t offset, std::uint64_t length) const {
  check_range(offset, length, size());
  Bytes out(length);
  read_at(offset, out);
  return out;
}

void MemorySource::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size(), bytes_.size());
  std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
}

void MemorySource::write_at(std::uint64_t offset, std::span<const std::uint8_t> data) {
  check_range(offset, data.size(), bytes_.size());
  std::copy(data.begin(), data.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(offset));
}

void SparseImage::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size(), size_);
  std::uint64_t pos = offset;
  std::size_t done = 0;
  while (done < out.size()) {
    const std::uint64_t page = pos / kPageSize;
    const std::uint64_t within = pos % kPageSize;
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(kPageSize - within, out.size() - done));
    auto it = pages_.find(page);
    if (it == pages_.end()) {
      std::fill_n(out.data() + done, n, 0);
    } else {
      std::memcpy(out.data() + done, it->second.get() + within, n);
    }
    done += n;
    pos += n;
  }
}

void SparseImage::write_at(std::uint64_t offset, std::span<const std::uint8_t> data) {
  check_range(offset, data.size(), size_);
  std::uint64_t pos = offset;
  std::size_t done = 0;
  while (done < data.size()) {
    const std::uint64_t page = pos / kPageSize;
    const std::uint64_t within = pos % kPageSize;
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(kPageSize - within, data.size() - done));
    auto& slot = pages_[page];
    if (!slot) {
      slot = std::make_unique<std::uint8_t[]>(kPageSize);
      std::memset(slot.get(), 0, kPageSize);
    }
    std::memcpy(slot.get() + within, data.data() + done, n);
    done += n;
    pos += n;
  }
}

void SparseImage::save(const std::filesystem::path& path) const {
  FileImage out(path, size_);
  for (const auto& [page, data] : pages_) {
    const std::uint64_t offset = page * kPageSize;
    const std::uint64_t n = std::min(kPageSize, size_ - offset);
    out.write_at(offset, std::span<const std::uint8_t>(data.get(), n));
  }
}

FileSource::FileSource(const std::filesystem::path& path) : path_(path.string()) {
  fd_ = ::open(path_.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd_ < 0) throw Error(ErrorCode::IoError, errno_text("cannot open", path_));
  struct stat st {};
  if (::fstat(fd_, &st) != 0) {
    ::close(fd_);
    throw Error(ErrorCode::IoError, errno_text("cannot stat", path_));
  }
  size_ = static_cast<std::uint64_t>(st.st_size);
}

FileSource::~FileSource() {
  if (fd_ >= 0) ::close(fd_);
}

void FileSource::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size(), size_);
  pread_full(fd_, offset, out, path_);
}

FileImage::FileImage(const std::filesystem::path& path, std::uint64_t size)
    : size_(size), path_(path.string()) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorCode::IoError, errno_text("cannot create", path_));
  if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
    ::close(fd_);
    throw Error(ErrorCode::StorageError, errno_text("cannot size", path_));
  }
}

FileImage::~FileImage() {
  if (fd_ >= 0) ::close(fd_);
}

void FileImage::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size(), size_);
  pread_full(fd_, offset, out, path_);
}

void FileImage::write_at(std::uint64_t offset, std::span<const std::uint8_t> data) {
  check_range(offset, data.size(), size_);
  pwrite_full(fd_, offset, data, path_);
}

void FileImage::sync() {
  if (::fsync(fd_) != 0) throw Error(ErrorCode::IoError, errno_text("fsync failed", path_));
}

void ReadOnceCache::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size(), size());
  std::lock_guard lock(mutex_);
  std::uint64_t pos = offset;
  std::size_t done = 0;
  while (done < out.size()) {
    const std::uint64_t page = pos / kPageSize;
    const std::uint64_t within = pos % kPageSize;
    auto it = pages_.find(page);
    if (it == pages_.end()) {
      const std::uint64_t start = page * kPageSize;
      Bytes buf(static_cast<std::size_t>(std::min(kPageSize, size() - start)));
      device_.read_at(start, buf);
      it = pages_.emplace(page, std::move(buf)).first;
    }
    const std::size_t n = static_cast<std::size_t>(
        std::min<std::uint64_t>(it->second.size() - within, out.size() - done));
    std::memcpy(out.data() + done, it->second.data() + within, n);
    done += n;
    pos += n;
  }
}

void ReadOnceCache::stream_at(std::uint64_t offset, std::span<std::uint8_t> out) {
  check_range(offset, out.size(), size());
  std::lock_guard lock(mutex_);
  std::uint64_t pos = offset;
  std::size_t done = 0;
  while (done < out.size()) {
    const std::uint64_t page = pos / kPageSize;
    const std::uint64_t within = pos % kPageSize;
    auto it = pages_.find(page);
    if (it != pages_.end()) {
      const std::size_t n = static_cast<std::size_t>(
          std::min<std::uint64_t>(it->second.size() - within, out.size() - done));
      std::memcpy(out.data() + done, it->second.data() + within, n);
      if (within + n == it->second.size()) pages_.erase(it);
      done += n;
      pos += n;
      continue;
    }
    // Gather the run of uncached pages and read it from the device in one go.
    auto next = pages_.upper_bound(page);
    std::uint64_t run_end = offset + out.size();
    if (next != pages_.end()) run_end = std::min(run_end, next->first * kPageSize);
    const std::size_t n = static_cast<std::size_t>(run_end - pos);
    device_.read_at(pos, out.subspan(done, n));
    done += n;
    pos += n;
  }
}

std::size_t ReadOnceCache::cached_pages() const {
  std::lock_guard lock(mutex_);
  return pages_.size();
}

}  // namespace dedupacq
