#pragma once

// Random DFD1 messages for round-trip and fuzz tests.

#include <random>

#include "dedupacq/protocol.hpp"

namespace testsupport {

inline dedupacq::Digest random_digest(std::mt19937_64& rng) {
  std::array<std::uint8_t, 32> b{};
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return dedupacq::Digest(b);
}

inline dedupacq::Bytes random_bytes(std::mt19937_64& rng, std::size_t max_len) {
  dedupacq::Bytes b(rng() % (max_len + 1));
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
  const auto b = random_bytes(rng, max_len);
  return std::string(b.begin(), b.end());
}

inline dedupacq::proto::Message random_message(std::mt19937_64& rng) {
  using namespace dedupacq::proto;
  switch (rng() % 15) {
    case 0: return Hello{static_cast<std::uint16_t>(rng())};
    case 1: return HelloAck{static_cast<std::uint16_t>(rng())};
    case 2: {
      Check c;
      const std::size_t n = rng() % 2 ? rng() % 8 : rng() % 513;
      for (std::size_t i = 0; i < n; ++i) c.digests.push_back(random_digest(rng));
      return c;
    }
    case 3: return CheckResp{random_bytes(rng, 64)};
    case 4: return Put{random_digest(rng), random_bytes(rng, 512)};
    case 5: return PutAck{static_cast<PutResult>(rng() % 3)};
    case 6: return ManifestCommit{random_text(rng, 300)};
    case 7: return ManifestAck{random_digest(rng)};
    case 8: return Get{random_digest(rng)};
    case 9: return Data{random_bytes(rng, 512)};
    case 10: return GetManifest{random_digest(rng)};
    case 11: return ManifestDoc{random_text(rng, 300)};
    case 12: return StatsReq{};
    case 13: return StatsResp{{rng(), rng(), rng(), rng()}};
    default: return ErrorMsg{static_cast<std::uint16_t>(rng()), random_text(rng, 100)};
  }
}

}  // namespace testsupport
