#pragma once

// Context-triggered piecewise hashing (the ssdeep construction) and the
// approximate-matching index built on top of it.
//
// A 7-byte rolling hash picks piece boundaries wherever
// rolling % block_size == block_size - 1. Each piece contributes one base64
// character taken from an FNV-style hash of the piece. Two signatures are
// kept, one at block_size and one at 2 * block_size, so digests of inputs
// whose sizes differ by up to 2x remain comparable.

#include <array>
#include <cstdint>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/digest.hpp"

namespace dedupacq {

struct FuzzyDigest {
  std::uint64_t block_size = 0;
  std::string sig1;  // at block_size, <= 64 chars
  std::string sig2;  // at 2 * block_size, <= 32 chars

  // "block_size:sig1:sig2"
  std::string text() const;
  static FuzzyDigest parse(std::string_view text);

  bool operator==(const FuzzyDigest&) const = default;
};

// Streaming hasher; memory use is constant in the input length.
class FuzzyHasher {
 public:
  static constexpr std::size_t kSignatureLength = 64;
  static constexpr std::uint64_t kMinBlockSize = 3;

  FuzzyHasher();

  void update(std::span<const std::uint8_t> data);
  // Throws EmptyInput when no bytes were hashed.
  FuzzyDigest finish() const;

  std::uint64_t total_size() const noexcept { return total_; }

 private:
  static constexpr int kMaxBlockHashes = 31;
  static constexpr std::size_t kWindow = 7;

  struct BlockHash {
    std::uint32_t h = 0;
    std::uint32_t half_h = 0;
    std::array<char, kSignatureLength> digest{};
    char half_digest = 0;
    std::size_t dlen = 0;
  };

  void step(std::uint8_t c);
  void try_fork();
  void try_reduce();
  std::uint32_t roll_sum() const noexcept { return h1_ + h2_ + h3_; }

  std::array<std::uint8_t, kWindow> window_{};
  std::uint32_t h1_ = 0, h2_ = 0, h3_ = 0;
  std::size_t wpos_ = 0;

  std::array<BlockHash, kMaxBlockHashes> bh_{};
  int bh_start_ = 0;
  int bh_end_ = 1;
  std::uint64_t total_ = 0;
};

FuzzyDigest fuzzy_hash(std::span<const std::uint8_t> data);
FuzzyDigest fuzzy_hash(const ByteSource& source, std::uint64_t offset, std::uint64_t length);

// ssdeep-compatible score in [0, 100]. Symmetric.
int similarity(const FuzzyDigest& a, const FuzzyDigest& b);

struct FuzzyMatch {
  Digest digest;
  int score = 0;
  bool operator==(const FuzzyMatch&) const = default;
};

// In-memory approximate-matching index keyed by content digest. Entries are
// bucketed by block size; a query only visits the three compatible buckets.
// Many concurrent readers, exclusive writers.
class FuzzyIndex {
 public:
  // Returns false if `digest` was already indexed.
  bool insert(const Digest& digest, const FuzzyDigest& fuzzy);
  std::optional<FuzzyDigest> find(const Digest& digest) const;
  std::size_t size() const;
  void clear();

  // All entries with a compatible block size scoring >= threshold
  // (1..100), descending by score then ascending by digest.
  std::vector<FuzzyMatch> near_matches(const FuzzyDigest& query, int threshold) const;

  std::vector<std::pair<Digest, FuzzyDigest>> entries() const;

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<Digest, FuzzyDigest> by_digest_;
  std::unordered_map<std::uint64_t, std::vector<Digest>> by_block_size_;
};

}  // namespace dedupacq
