#include "dedupacq/digest.hpp"

#include <openssl/evp.h>

#include <algorithm>

#include "dedupacq/error.hpp"

namespace dedupacq {

namespace {

constexpr char kHex[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

Digest Digest::from_bytes(std::span<const std::uint8_t> raw) {
  if (raw.size() != kSize) {
    throw Error(ErrorCode::InvalidManifest, "digest must be 32 bytes, got " + std::to_string(raw.size()));
  }
  std::array<std::uint8_t, kSize> b{};
  std::copy(raw.begin(), raw.end(), b.begin());
  return Digest(b);
}

Digest Digest::from_hex(std::string_view hex) {
  if (hex.size() != 2 * kSize) {
    throw Error(ErrorCode::InvalidManifest, "digest hex must be 64 characters: '" + std::string(hex) + "'");
  }
  std::array<std::uint8_t, kSize> b{};
  for (std::size_t i = 0; i < kSize; ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::InvalidManifest, "bad hex digit in digest '" + std::string(hex) + "'");
    b[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return Digest(b);
}

std::string Digest::hex() const {
  std::string out(2 * kSize, '0');
  for (std::size_t i = 0; i < kSize; ++i) {
    out[2 * i] = kHex[bytes_[i] >> 4];
    out[2 * i + 1] = kHex[bytes_[i] & 0xF];
  }
  return out;
}

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
  Impl() : ctx(EVP_MD_CTX_new()) {
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("EVP sha256 init failed");
    }
  }
  ~Impl() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {}
Sha256::~Sha256() = default;
Sha256::Sha256(Sha256&&) noexcept = default;
Sha256& Sha256::operator=(Sha256&&) noexcept = default;

void Sha256::update(std::span<const std::uint8_t> data) {
  if (!data.empty()) EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
}

Digest Sha256::finish() {
  std::array<std::uint8_t, Digest::kSize> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, out.data(), &len);
  EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr);
  return Digest(out);
}

Digest content_hash(std::span<const std::uint8_t> data) {
  Sha256 h;
  h.update(data);
  return h.finish();
}

Digest content_hash(const ByteSource& source, std::uint64_t offset, std::uint64_t length) {
  check_range(offset, length, source.size());
  constexpr std::uint64_t kChunk = 1 << 20;
  Bytes buf(static_cast<std::size_t>(std::min(kChunk, std::max<std::uint64_t>(length, 1))));
  Sha256 h;
  std::uint64_t done = 0;
  while (done < length) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(buf.size(), length - done));
    source.read_at(offset + done, std::span(buf.data(), n));
    h.update(std::span(buf.data(), n));
    done += n;
  }
  return h.finish();
}

}  // namespace dedupacq
