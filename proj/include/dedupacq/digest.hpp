#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "dedupacq/byte_source.hpp"

namespace dedupacq {

// SHA-256 value; the content address of every artifact and image.
class Digest {
 public:
  static constexpr std::size_t kSize = 32;

  Digest() = default;
  explicit Digest(const std::array<std::uint8_t, kSize>& bytes) : bytes_(bytes) {}

  static Digest from_bytes(std::span<const std::uint8_t> raw);
  // Accepts exactly 64 hex characters (either case). Throws InvalidManifest.
  static Digest from_hex(std::string_view hex);

  std::string hex() const;
  const std::array<std::uint8_t, kSize>& bytes() const noexcept { return bytes_; }

  auto operator<=>(const Digest&) const = default;

 private:
  std::array<std::uint8_t, kSize> bytes_{};
};

class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(Sha256&&) noexcept;
  Sha256& operator=(Sha256&&) noexcept;

  void update(std::span<const std::uint8_t> data);
  Digest finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Digest content_hash(std::span<const std::uint8_t> data);
inline Digest content_hash(std::string_view text) {
  return content_hash(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}
// Streams [offset, offset + length) of `source` in bounded chunks.
Digest content_hash(const ByteSource& source, std::uint64_t offset, std::uint64_t length);
inline Digest content_hash(const ByteSource& source) { return content_hash(source, 0, source.size()); }

}  // namespace dedupacq

template <>
struct std::hash<dedupacq::Digest> {
  std::size_t operator()(const dedupacq::Digest& d) const noexcept {
    std::size_t h = 0;
    for (std::size_t i = 0; i < sizeof(std::size_t); ++i) h = (h << 8) | d.bytes()[i];
    return h;
  }
};
