#include <gtest/gtest.h>

#include <random>

#include "dedupacq/error.hpp"
#include "dedupacq/image_model.hpp"
#include "support.hpp"

using namespace dedupacq;

namespace {

Artifact region(ArtifactKind kind, std::vector<Extent> extents, std::string label = {}) {
  Artifact a;
  a.kind = kind;
  a.extents = ExtentList(std::move(extents));
  a.label = std::move(label);
  return a;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

Manifest sample_manifest() {
  Manifest m;
  m.case_id = "case-7";
  m.investigator_id = "inv";
  m.disk_id = "disk \"A\"";
  m.acquired_at = 1500000000;
  m.image_size = 8192;
  m.image_digest = content_hash("image");
  Artifact f = region(ArtifactKind::FileData, {{4096, 100}, {1000, 24}});
  f.digest = content_hash("f");
  f.path = "/DIR/é.txt";
  f.times = FileTimes{1483228800, 1483228802};
  f.partition = 0;
  f.fuzzy = FuzzyDigest{3, "abc", "ab"};
  Artifact s = region(ArtifactKind::FileSlack, {{4196, 3996}}, "p0:slack:/DIR/é.txt");
  s.partition = 0;
  Artifact u = region(ArtifactKind::Unallocated, {{0, 1000}, {1024, 3072}}, "p0:unallocated");
  u.piece = PieceInfo{1, 3};
  m.artifacts = {u, f, s};
  return m;
}

}  // namespace

TEST(Coverage, SingleFullExtentIsOk) {
  const std::vector<Artifact> a{region(ArtifactKind::Unallocated, {{0, 1024}})};
  EXPECT_TRUE(coverage_check(a, 1024).ok());
}

TEST(Coverage, ReportsGap) {
  const std::vector<Artifact> a{region(ArtifactKind::Unallocated, {{0, 512}})};
  const auto r = coverage_check(a, 1024);
  ASSERT_EQ(r.gaps.size(), 1u);
  EXPECT_EQ(r.gaps[0], (Extent{512, 512}));
  EXPECT_TRUE(r.overlaps.empty());
}

TEST(Coverage, ReportsOverlapsAndOutOfBounds) {
  const std::vector<Artifact> a{region(ArtifactKind::Unallocated, {{0, 600}}),
                                region(ArtifactKind::FileData, {{500, 524}}),
                                region(ArtifactKind::FileData, {{1000, 100}})};
  const auto r = coverage_check(a, 1024);
  ASSERT_EQ(r.overlaps.size(), 2u);
  EXPECT_EQ(r.overlaps[0], (Extent{500, 100}));
  EXPECT_EQ(r.overlaps[1], (Extent{1000, 24}));
  ASSERT_EQ(r.out_of_bounds.size(), 1u);
  EXPECT_EQ(r.out_of_bounds[0], (Extent{1024, 76}));
  EXPECT_FALSE(r.describe().empty());
}

TEST(Coverage, RandomTilingsAgreeWithBitmap) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::uint64_t size = rng() % 5000 + 1;
    std::vector<Artifact> arts;
    std::vector<int> hits(size, 0);
    for (int k = 0; k < 6; ++k) {
      const std::uint64_t off = rng() % (size + 20);
      const std::uint64_t len = rng() % 900 + 1;
      arts.push_back(region(ArtifactKind::Unallocated, {{off, len}}));
      for (std::uint64_t i = off; i < off + len && i < size; ++i) ++hits[i];
    }
    bool exact = true;
    for (int h : hits) exact &= h == 1;
    for (const auto& a : arts) exact &= a.extents.max_end() <= size;
    EXPECT_EQ(coverage_check(arts, size).ok(), exact);
  }
}

TEST(ExtentListTest, Validation) {
  EXPECT_EQ(code_of([] { ExtentList({{0, 0}}); }), ErrorCode::InvalidManifest);
  EXPECT_EQ(code_of([] { ExtentList({{0, 10}, {5, 10}}); }), ErrorCode::InvalidManifest);
  EXPECT_EQ(code_of([] { ExtentList({{~0ull - 2, 10}}); }), ErrorCode::InvalidManifest);
  ExtentList l;
  l.append({0, 10});
  l.append({10, 5});
  l.append({100, 5});
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l.total_length(), 20u);
  EXPECT_EQ(l.max_end(), 105u);
}

TEST(ExtentListTest, SplitPreservesBytes) {
  const ExtentList l({{0, 10}, {20, 25}, {100, 7}});
  const auto pieces = l.split(16);
  ASSERT_EQ(pieces.size(), 3u);
  EXPECT_EQ(pieces[0].extents(), (std::vector<Extent>{{0, 10}, {20, 6}}));
  EXPECT_EQ(pieces[1].extents(), (std::vector<Extent>{{26, 16}}));
  EXPECT_EQ(pieces[2].extents(), (std::vector<Extent>{{42, 3}, {100, 7}}));
}

TEST(ExtentBytes, ConcatenatesInListOrder) {
  const MemorySource img(std::string_view("ABCDEF"));
  const Bytes got = extent_bytes(img, ExtentList({{0, 2}, {4, 2}}));
  EXPECT_EQ(std::string(got.begin(), got.end()), "ABEF");
  const Bytes rev = extent_bytes(img, ExtentList({{4, 2}, {0, 2}}));
  EXPECT_EQ(std::string(rev.begin(), rev.end()), "EFAB");
}

TEST(ExtentBytes, ZerosIdentity) {
  const MemorySource img(std::uint64_t{1} << 20);
  const Bytes got = extent_bytes(img, ExtentList({{0, 1 << 20}}));
  EXPECT_EQ(got.size(), 1u << 20);
  EXPECT_TRUE(std::all_of(got.begin(), got.end(), [](auto b) { return b == 0; }));
}

TEST(ExtentBytes, OutOfBoundsNamesExtent) {
  const MemorySource img(std::string_view("ABCDEF"));
  try {
    extent_bytes(img, ExtentList({{0, 2}, {4, 3}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
  }
}

TEST(ManifestJson, DeterministicAndRoundTrips) {
  Manifest m = sample_manifest();
  const std::string a = manifest_canonical_bytes(m);
  EXPECT_EQ(a, manifest_canonical_bytes(m));
  Manifest back = parse_manifest(a);
  EXPECT_EQ(back.manifest_id, manifest_id_of(m));
  EXPECT_EQ(back.manifest_id, content_hash(a).hex());
  sort_canonical(m.artifacts);
  m.manifest_id = back.manifest_id;
  EXPECT_EQ(back, m);
}

TEST(ManifestJson, ArtifactOrderDoesNotMatter) {
  Manifest m = sample_manifest();
  Manifest n = m;
  std::reverse(n.artifacts.begin(), n.artifacts.end());
  EXPECT_EQ(manifest_canonical_bytes(m), manifest_canonical_bytes(n));
}

TEST(ManifestJson, KeysSortedNoWhitespaceLowercaseHex) {
  const std::string a = manifest_canonical_bytes(sample_manifest());
  EXPECT_EQ(a.find('\n'), std::string::npos);
  EXPECT_EQ(a.find(": "), std::string::npos);
  EXPECT_LT(a.find("\"acquired_at\""), a.find("\"artifacts\""));
  EXPECT_LT(a.find("\"artifacts\""), a.find("\"case_id\""));
  EXPECT_NE(a.find(content_hash("image").hex()), std::string::npos);
  EXPECT_NE(a.find("\"acquired_at\":\"2017-07-14T02:40:00Z\""), std::string::npos);
}

TEST(ManifestJson, CoverageFailureRejected) {
  Manifest m = sample_manifest();
  m.image_size = 9000;
  EXPECT_EQ(code_of([&] { manifest_canonical_bytes(m); }), ErrorCode::InvalidManifest);
}

TEST(ManifestJson, MalformedInputRejected) {
  EXPECT_EQ(code_of([] { parse_manifest("{"); }), ErrorCode::InvalidManifest);
  EXPECT_EQ(code_of([] { parse_manifest("{}"); }), ErrorCode::InvalidManifest);
}

TEST(Utc, FormatAndParse) {
  EXPECT_EQ(format_utc(1483228800), "2017-01-01T00:00:00Z");
  EXPECT_EQ(parse_utc("2017-01-01T00:00:00Z"), 1483228800);
}
