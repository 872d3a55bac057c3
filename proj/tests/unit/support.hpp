#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/digest.hpp"
#include "dedupacq/fixture.hpp"

namespace testsupport {

// Byte k of sha256("seed:i") concatenated for i = 0, 1, ... (matches the
// Python oracles).
inline dedupacq::Bytes sha_stream(std::uint64_t seed, std::size_t size) {
  dedupacq::Bytes out;
  out.reserve(size + 32);
  for (std::uint64_t i = 0; out.size() < size; ++i) {
    const auto d = dedupacq::content_hash(std::to_string(seed) + ":" + std::to_string(i));
    out.insert(out.end(), d.bytes().begin(), d.bytes().end());
  }
  out.resize(size);
  return out;
}

inline dedupacq::Bytes text_stream(std::uint64_t seed, std::size_t size) {
  std::string out;
  for (std::uint64_t i = 0; out.size() < size; ++i) {
    out += "line " + std::to_string(i) + " of document " + std::to_string(seed) + ": the quick brown fox\n";
  }
  out.resize(size);
  return dedupacq::Bytes(out.begin(), out.end());
}

inline std::filesystem::path golden_dir() { return DEDUPACQ_GOLDEN_DIR; }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "dedupacq-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline dedupacq::fixture::PartitionSpec fat16(std::uint64_t mib = 32) {
  dedupacq::fixture::PartitionSpec p;
  p.variant = dedupacq::fat::Variant::Fat16;
  p.size = mib << 20;
  return p;
}

inline dedupacq::fixture::PartitionSpec fat32(std::uint64_t mib = 40) {
  dedupacq::fixture::PartitionSpec p;
  p.variant = dedupacq::fat::Variant::Fat32;
  p.size = mib << 20;
  p.sectors_per_cluster = 1;
  return p;
}

inline dedupacq::fixture::FileSpec file(std::string path, std::uint64_t size, std::uint64_t seed = 1) {
  dedupacq::fixture::FileSpec f;
  f.path = std::move(path);
  f.size = size;
  f.seed = seed;
  return f;
}

inline dedupacq::fixture::FileSpec literal(std::string path, std::string content) {
  dedupacq::fixture::FileSpec f;
  f.path = std::move(path);
  f.size = content.size();
  f.content = std::move(content);
  return f;
}

}  // namespace testsupport
