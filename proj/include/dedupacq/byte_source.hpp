#pragma once

// Random-access byte sources and sinks. Every image, blob and fixture in the
// project is read through ByteSource so parsers never care whether bytes live
// in memory, in a sparse page map, or in a file.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dedupacq {

using Bytes = std::vector<std::uint8_t>;

// Implementations must allow concurrent read_at calls.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual std::uint64_t size() const = 0;
  // Fills `out` with bytes [offset, offset + out.size()). Throws OutOfBounds.
  virtual void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const = 0;

  Bytes read(std::uint64_t offset, std::uint64_t length) const;
};

class WritableImage : public ByteSource {
 public:
  virtual void write_at(std::uint64_t offset, std::span<const std::uint8_t> data) = 0;
};

void check_range(std::uint64_t offset, std::uint64_t length, std::uint64_t size);

class MemorySource final : public WritableImage {
 public:
  MemorySource() = default;
  explicit MemorySource(Bytes bytes) : bytes_(std::move(bytes)) {}
  explicit MemorySource(std::uint64_t size) : bytes_(size, 0) {}
  explicit MemorySource(std::string_view text) : bytes_(text.begin(), text.end()) {}

  std::uint64_t size() const override { return bytes_.size(); }
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override;
  void write_at(std::uint64_t offset, std::span<const std::uint8_t> data) override;

  const Bytes& bytes() const noexcept { return bytes_; }
  Bytes& bytes() noexcept { return bytes_; }

 private:
  Bytes bytes_;
};

// Fixed-size image whose untouched regions read as zeros. Only written pages
// consume memory, which keeps multi-hundred-MiB fixtures cheap to build.
// Concurrent reads are safe; writes need exclusive access.
class SparseImage final : public WritableImage {
 public:
  static constexpr std::uint64_t kPageSize = 64 * 1024;

  explicit SparseImage(std::uint64_t size) : size_(size) {}

  std::uint64_t size() const override { return size_; }
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override;
  void write_at(std::uint64_t offset, std::span<const std::uint8_t> data) override;

  std::size_t resident_pages() const noexcept { return pages_.size(); }
  // Writes the image to `path`, leaving holes for untouched pages.
  void save(const std::filesystem::path& path) const;

 private:
  std::uint64_t size_;
  std::map<std::uint64_t, std::unique_ptr<std::uint8_t[]>> pages_;
};

// pread-backed read-only view of a file.
class FileSource final : public ByteSource {
 public:
  explicit FileSource(const std::filesystem::path& path);
  ~FileSource() override;
  FileSource(const FileSource&) = delete;
  FileSource& operator=(const FileSource&) = delete;

  std::uint64_t size() const override { return size_; }
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override;

 private:
  int fd_ = -1;
  std::uint64_t size_ = 0;
  std::string path_;
};

// Read/write file of fixed size. Creating one truncates the file to `size`
// which yields a sparse zero-filled file on filesystems that support holes.
class FileImage final : public WritableImage {
 public:
  FileImage(const std::filesystem::path& path, std::uint64_t size);
  ~FileImage() override;
  FileImage(const FileImage&) = delete;
  FileImage& operator=(const FileImage&) = delete;

  std::uint64_t size() const override { return size_; }
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override;
  void write_at(std::uint64_t offset, std::span<const std::uint8_t> data) override;
  void sync();

 private:
  int fd_ = -1;
  std::uint64_t size_ = 0;
  std::string path_;
};

// Instrumented pass-through: counts every byte pulled from the inner source.
class CountingSource final : public ByteSource {
 public:
  explicit CountingSource(const ByteSource& inner) : inner_(inner) {}

  std::uint64_t size() const override { return inner_.size(); }
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override {
    inner_.read_at(offset, out);
    bytes_read_.fetch_add(out.size(), std::memory_order_relaxed);
  }
  std::uint64_t bytes_read() const noexcept { return bytes_read_.load(); }

 private:
  const ByteSource& inner_;
  mutable std::atomic<std::uint64_t> bytes_read_{0};
};

// Serves previously fetched ranges from memory so the underlying device is
// read at most once per byte. Metadata parsing goes through the cache; the
// sequential acquisition pass then consumes cached ranges instead of
// re-reading them. Cached ranges are kept at page granularity.
class ReadOnceCache final : public ByteSource {
 public:
  static constexpr std::uint64_t kPageSize = 4096;

  explicit ReadOnceCache(const ByteSource& device) : device_(device) {}

  std::uint64_t size() const override { return device_.size(); }
  // Caching read; used while parsing filesystem structures.
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override;

  // Non-caching read for the sequential pass. Cached pages are served from
  // memory and then dropped; everything else comes straight from the device.
  void stream_at(std::uint64_t offset, std::span<std::uint8_t> out);

  std::size_t cached_pages() const;

 private:
  const ByteSource& device_;
  mutable std::mutex mutex_;
  mutable std::map<std::uint64_t, Bytes> pages_;
};

}  // namespace dedupacq
