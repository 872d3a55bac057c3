#include "dedupacq/ctph.hpp"

#include <algorithm>
#include <charconv>
#include <mutex>

#include "dedupacq/error.hpp"

namespace dedupacq {

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr std::uint32_t kHashPrime = 0x01000193;
constexpr std::uint32_t kHashInit = 0x28021967;
constexpr std::size_t kSigLen = FuzzyHasher::kSignatureLength;

constexpr std::uint64_t block_size_at(int i) { return FuzzyHasher::kMinBlockSize << i; }

constexpr std::uint32_t piece_hash(std::uint8_t c, std::uint32_t h) { return (h * kHashPrime) ^ c; }

}  // namespace

std::string FuzzyDigest::text() const {
  return std::to_string(block_size) + ":" + sig1 + ":" + sig2;
}

FuzzyDigest FuzzyDigest::parse(std::string_view text) {
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string_view::npos ? c1 : text.find(':', c1 + 1);
  if (c2 == std::string_view::npos) {
    throw Error(ErrorCode::InvalidManifest, "malformed fuzzy digest '" + std::string(text) + "'");
  }
  FuzzyDigest d;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + c1, d.block_size);
  if (ec != std::errc{} || ptr != text.data() + c1 || d.block_size < FuzzyHasher::kMinBlockSize) {
    throw Error(ErrorCode::InvalidManifest, "bad fuzzy block size in '" + std::string(text) + "'");
  }
  d.sig1 = std::string(text.substr(c1 + 1, c2 - c1 - 1));
  d.sig2 = std::string(text.substr(c2 + 1));
  auto valid = [](const std::string& s) {
    return s.size() <= kSigLen && std::all_of(s.begin(), s.end(), [](char ch) {
             return std::string_view(kB64).find(ch) != std::string_view::npos;
           });
  };
  if (!valid(d.sig1) || !valid(d.sig2)) {
    throw Error(ErrorCode::InvalidManifest, "bad fuzzy signature in '" + std::string(text) + "'");
  }
  return d;
}

FuzzyHasher::FuzzyHasher() {
  bh_[0].h = kHashInit;
  bh_[0].half_h = kHashInit;
}

void FuzzyHasher::try_fork() {
  if (bh_end_ >= kMaxBlockHashes) return;
  const BlockHash& prev = bh_[bh_end_ - 1];
  BlockHash& next = bh_[bh_end_];
  next.h = prev.h;
  next.half_h = prev.half_h;
  next.digest[0] = 0;
  next.half_digest = 0;
  next.dlen = 0;
  ++bh_end_;
}

// Drops the smallest block size once it can no longer be selected.
void FuzzyHasher::try_reduce() {
  if (bh_end_ - bh_start_ < 2) return;
  if (block_size_at(bh_start_) * kSigLen >= total_) return;
  if (bh_[bh_start_ + 1].dlen < kSigLen / 2) return;
  ++bh_start_;
}

void FuzzyHasher::step(std::uint8_t c) {
  h2_ -= h1_;
  h2_ += static_cast<std::uint32_t>(kWindow) * c;
  h1_ += c;
  h1_ -= window_[wpos_];
  window_[wpos_] = c;
  wpos_ = (wpos_ + 1) % kWindow;
  h3_ <<= 5;
  h3_ ^= c;

  const std::uint32_t h = roll_sum();
  for (int i = bh_start_; i < bh_end_; ++i) {
    bh_[i].h = piece_hash(c, bh_[i].h);
    bh_[i].half_h = piece_hash(c, bh_[i].half_h);
  }
  for (int i = bh_start_; i < bh_end_; ++i) {
    const std::uint64_t bs = block_size_at(i);
    if (h % bs != bs - 1) break;
    BlockHash& b = bh_[i];
    if (b.dlen == 0) try_fork();
    b.digest[b.dlen] = kB64[b.h % 64];
    b.half_digest = kB64[b.half_h % 64];
    if (b.dlen < kSigLen - 1) {
      b.digest[++b.dlen] = 0;
      b.h = kHashInit;
      if (b.dlen < kSigLen / 2) {
        b.half_h = kHashInit;
        b.half_digest = 0;
      }
    } else {
      try_reduce();
    }
  }
}

void FuzzyHasher::update(std::span<const std::uint8_t> data) {
  for (std::uint8_t c : data) {
    ++total_;
    step(c);
  }
}

FuzzyDigest FuzzyHasher::finish() const {
  if (total_ == 0) throw Error(ErrorCode::EmptyInput, "fuzzy hash of empty input");

  int bi = bh_start_;
  while (block_size_at(bi) * kSigLen < total_) ++bi;
  if (bi >= bh_end_) bi = bh_end_ - 1;
  while (bi > bh_start_ && bh_[bi].dlen < kSigLen / 2) --bi;

  const std::uint32_t h = roll_sum();
  FuzzyDigest out;
  out.block_size = block_size_at(bi);

  const BlockHash& first = bh_[bi];
  out.sig1.assign(first.digest.data(), first.dlen);
  if (h != 0) {
    out.sig1.push_back(kB64[first.h % 64]);
  } else if (first.dlen < kSigLen && first.digest[first.dlen] != 0) {
    out.sig1.push_back(first.digest[first.dlen]);
  }

  if (bi < bh_end_ - 1) {
    const BlockHash& second = bh_[bi + 1];
    const std::size_t n = std::min(second.dlen, kSigLen / 2 - 1);
    out.sig2.assign(second.digest.data(), n);
    if (h != 0) {
      out.sig2.push_back(kB64[second.half_h % 64]);
    } else if (second.half_digest != 0) {
      out.sig2.push_back(second.half_digest);
    }
  } else if (h != 0) {
    out.sig2.push_back(kB64[first.h % 64]);
  }
  return out;
}

FuzzyDigest fuzzy_hash(std::span<const std::uint8_t> data) {
  FuzzyHasher hasher;
  hasher.update(data);
  return hasher.finish();
}

FuzzyDigest fuzzy_hash(const ByteSource& source, std::uint64_t offset, std::uint64_t length) {
  check_range(offset, length, source.size());
  constexpr std::uint64_t kChunk = 1 << 20;
  Bytes buf(static_cast<std::size_t>(std::min(kChunk, std::max<std::uint64_t>(length, 1))));
  FuzzyHasher hasher;
  std::uint64_t done = 0;
  while (done < length) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(buf.size(), length - done));
    source.read_at(offset + done, std::span(buf.data(), n));
    hasher.update(std::span(buf.data(), n));
    done += n;
  }
  return hasher.finish();
}

namespace {

// Runs of more than three identical characters carry little information
// and are collapsed before comparison.
std::string eliminate_sequences(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i >= 3 && s[i] == s[i - 1] && s[i] == s[i - 2] && s[i] == s[i - 3]) continue;
    out.push_back(s[i]);
  }
  return out;
}

bool has_common_substring(const std::string& a, const std::string& b) {
  constexpr std::size_t kWindow = 7;
  if (a.size() < kWindow || b.size() < kWindow) return false;
  for (std::size_t i = 0; i + kWindow <= a.size(); ++i) {
    const std::string_view wa(a.data() + i, kWindow);
    for (std::size_t j = 0; j + kWindow <= b.size(); ++j) {
      if (wa == std::string_view(b.data() + j, kWindow)) return true;
    }
  }
  return false;
}

// Levenshtein distance with insert/delete cost 1 and substitution cost 2.
std::uint32_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::uint32_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<std::uint32_t>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<std::uint32_t>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::uint32_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 2);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

int score_strings(const std::string& a, const std::string& b, std::uint64_t block_size) {
  constexpr std::uint64_t kWindow = 7;
  if (a.size() > kSigLen || b.size() > kSigLen) return 0;
  if (!has_common_substring(a, b)) return 0;
  std::uint64_t score = edit_distance(a, b);
  score = score * kSigLen / (a.size() + b.size());
  score = 100 * score / kSigLen;
  if (score >= 100) return 0;
  score = 100 - score;
  // Small block sizes get capped so short signatures cannot claim a strong match.
  if (block_size >= (99 + kWindow) / kWindow * FuzzyHasher::kMinBlockSize) return static_cast<int>(score);
  const std::uint64_t cap = block_size / FuzzyHasher::kMinBlockSize * std::min(a.size(), b.size());
  return static_cast<int>(std::min(score, cap));
}

}  // namespace

int similarity(const FuzzyDigest& a, const FuzzyDigest& b) {
  const std::uint64_t bs1 = a.block_size;
  const std::uint64_t bs2 = b.block_size;
  if (bs1 != bs2 && bs1 * 2 != bs2 && bs2 * 2 != bs1) return 0;

  const std::string a1 = eliminate_sequences(a.sig1);
  const std::string a2 = eliminate_sequences(a.sig2);
  const std::string b1 = eliminate_sequences(b.sig1);
  const std::string b2 = eliminate_sequences(b.sig2);

  if (bs1 == bs2 && a1 == b1 && a2 == b2) return 100;
  if (bs1 == bs2) return std::max(score_strings(a1, b1, bs1), score_strings(a2, b2, bs1 * 2));
  if (bs1 * 2 == bs2) return score_strings(b1, a2, bs2);
  return score_strings(a1, b2, bs1);
}

bool FuzzyIndex::insert(const Digest& digest, const FuzzyDigest& fuzzy) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] = by_digest_.emplace(digest, fuzzy);
  if (inserted) by_block_size_[fuzzy.block_size].push_back(digest);
  return inserted;
}

std::optional<FuzzyDigest> FuzzyIndex::find(const Digest& digest) const {
  std::shared_lock lock(mutex_);
  auto it = by_digest_.find(digest);
  if (it == by_digest_.end()) return std::nullopt;
  return it->second;
}

std::size_t FuzzyIndex::size() const {
  std::shared_lock lock(mutex_);
  return by_digest_.size();
}

void FuzzyIndex::clear() {
  std::unique_lock lock(mutex_);
  by_digest_.clear();
  by_block_size_.clear();
}

std::vector<FuzzyMatch> FuzzyIndex::near_matches(const FuzzyDigest& query, int threshold) const {
  std::vector<FuzzyMatch> out;
  std::shared_lock lock(mutex_);
  const std::uint64_t bs = query.block_size;
  std::vector<std::uint64_t> buckets{bs, bs * 2};
  if (bs % 2 == 0) buckets.push_back(bs / 2);
  for (std::uint64_t b : buckets) {
    auto it = by_block_size_.find(b);
    if (it == by_block_size_.end()) continue;
    for (const Digest& d : it->second) {
      const int score = similarity(query, by_digest_.at(d));
      if (score >= threshold) out.push_back({d, score});
    }
  }
  std::sort(out.begin(), out.end(), [](const FuzzyMatch& x, const FuzzyMatch& y) {
    return x.score != y.score ? x.score > y.score : x.digest < y.digest;
  });
  return out;
}

std::vector<std::pair<Digest, FuzzyDigest>> FuzzyIndex::entries() const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<Digest, FuzzyDigest>> out(by_digest_.begin(), by_digest_.end());
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  return out;
}

}  // namespace dedupacq
