#include <gtest/gtest.h>

#include "dedupacq/digest.hpp"
#include "dedupacq/error.hpp"
#include "support.hpp"

using namespace dedupacq;

TEST(Digest, EmptyInputMatchesPublishedVector) {
  EXPECT_EQ(content_hash(std::string_view{}).hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Digest, PublishedVectors) {
  EXPECT_EQ(content_hash("abc").hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(content_hash("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").hex(),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Digest, StreamingMatchesOneShot) {
  const Bytes data = testsupport::sha_stream(5, 3'000'001);
  Sha256 h;
  for (std::size_t off = 0; off < data.size(); off += 7919) {
    h.update(std::span(data).subspan(off, std::min<std::size_t>(7919, data.size() - off)));
  }
  EXPECT_EQ(h.finish(), content_hash(data));
  MemorySource src(data);
  EXPECT_EQ(content_hash(src), content_hash(data));
  EXPECT_EQ(content_hash(src, 10, 100), content_hash(std::span(data).subspan(10, 100)));
}

TEST(Digest, SameContentDifferentNamesSameDigest) {
  EXPECT_EQ(content_hash("payload"), content_hash(std::string("payload")));
}

TEST(Digest, HexRoundTripAndCase) {
  const Digest d = content_hash("x");
  EXPECT_EQ(Digest::from_hex(d.hex()), d);
  std::string upper = d.hex();
  for (char& c : upper) c = static_cast<char>(std::toupper(c));
  EXPECT_EQ(Digest::from_hex(upper), d);
  EXPECT_EQ(d.hex().size(), 64u);
  for (char c : d.hex()) EXPECT_TRUE(std::isdigit(c) || (c >= 'a' && c <= 'f'));
}

TEST(Digest, RejectsMalformedHex) {
  EXPECT_THROW(Digest::from_hex("abc"), Error);
  EXPECT_THROW(Digest::from_hex(std::string(64, 'g')), Error);
}
