#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "dedupacq/acquisition.hpp"
#include "dedupacq/fixture.hpp"
#include "dedupacq/reconstruction.hpp"
#include "support.hpp"

using namespace dedupacq;
using testsupport::TempDir;
namespace fx = dedupacq::fixture;
namespace fs = std::filesystem;

namespace {

EvidenceStore::Options fast() {
  EvidenceStore::Options o;
  o.durable = false;
  return o;
}

AcquisitionConfig config(const std::string& disk = "disk") {
  AcquisitionConfig c;
  c.case_id = "case";
  c.investigator_id = "inv";
  c.disk_id = disk;
  c.acquired_at = 1500000000;
  c.hash_workers = 2;
  return c;
}

fx::FixtureSpec two_partitions() {
  fx::FixtureSpec s;
  auto a = testsupport::fat16(12);
  a.sectors_per_cluster = 4;
  a.fill_seed = 5;
  a.files.push_back(testsupport::literal("/A.TXT", "alpha file contents\n"));
  a.files.push_back(testsupport::file("/SUB/BIG.BIN", 150000, 3));
  auto frag = testsupport::file("/SUB/FRAG.BIN", 40000, 4);
  frag.fragmented = true;
  a.files.push_back(frag);
  a.files.push_back(testsupport::file("/GONE.BIN", 9000, 6));
  a.deletes = {"/GONE.BIN"};
  auto b = testsupport::fat32(40);
  b.start_lba = 2048 + (14 << 11);
  b.files.push_back(testsupport::literal("/A.TXT", "beta partition copy\n"));
  b.files.push_back(testsupport::file("/X.BIN", 70000, 8));
  s.partitions = {a, b};
  s.image_size = (b.start_lba << 9) + b.size + 3 * 4096;  // trailing gap
  return s;
}

Bytes file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

struct Acquired {
  fx::BuiltImage built;
  TempDir dir;
  std::unique_ptr<EvidenceStore> store;
  std::unique_ptr<LocalRepository> repo;
  AcquisitionReport report;
  Manifest manifest;

  explicit Acquired(const fx::FixtureSpec& spec) : built(fx::build_in_memory(spec)) {
    store = std::make_unique<EvidenceStore>(dir.path() / "store", fast());
    repo = std::make_unique<LocalRepository>(*store);
    report = acquire(*built.image, *repo, config());
    manifest = store->get_manifest(report.manifest_id);
  }
  Bytes original() const { return built.image->read(0, built.image->size()); }
};

}  // namespace

TEST(Reconstruction, RoundTripIsByteIdentical) {
  Acquired a(two_partitions());
  const fs::path out = a.dir / "out" / "rebuilt.dd";
  const auto r = reconstruct(*a.repo, a.report.manifest_id, out);
  EXPECT_TRUE(r.verified);
  EXPECT_EQ(r.computed, a.report.image_digest);
  EXPECT_EQ(r.bytes_written, a.built.image->size());
  EXPECT_EQ(r.artifacts_placed, a.manifest.artifacts.size());
  EXPECT_EQ(file_bytes(out), a.original());
  // No staging leftovers.
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(out.parent_path())) entries += (void(e), 1);
  EXPECT_EQ(entries, 1u);
}

TEST(Reconstruction, PlacementOrderAndStagingModeDoNotMatter) {
  Acquired a(two_partitions());
  const Bytes original = a.original();
  for (std::uint64_t seed : {1, 2, 3}) {
    ReconstructOptions o;
    o.shuffle_seed = seed;
    o.sparse = seed % 2 == 0;
    o.fetch_workers = seed;
    const fs::path out = a.dir / ("r" + std::to_string(seed) + ".dd");
    reconstruct(*a.repo, a.manifest, out, o);
    EXPECT_EQ(file_bytes(out), original) << seed;
  }
}

TEST(Reconstruction, AllZeroVolume) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(8);
  p.sectors_per_cluster = 2;
  s.partitions.push_back(p);
  Acquired a(s);
  const fs::path out = a.dir / "zero.dd";
  EXPECT_TRUE(reconstruct(*a.repo, a.report.manifest_id, out).verified);
  EXPECT_EQ(file_bytes(out), a.original());
}

TEST(Reconstruction, MissingBlobLeavesNoOutput) {
  Acquired a(two_partitions());
  const Digest victim = a.manifest.artifacts[3].digest;
  fs::remove(a.store->blob_path(victim));
  // Reopen so the index reflects the deletion.
  a.repo.reset();
  a.store = std::make_unique<EvidenceStore>(a.dir.path() / "store", fast());
  // index.log still lists it; a fresh store that trusts only existing files
  // drops it on replay.
  a.repo = std::make_unique<LocalRepository>(*a.store);
  const fs::path out = a.dir / "never.dd";
  try {
    reconstruct(*a.repo, a.report.manifest_id, out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DanglingDigest);
    EXPECT_EQ(e.details(), std::vector<std::string>{victim.hex()});
  }
  EXPECT_FALSE(fs::exists(out));
  for (const auto& e : fs::directory_iterator(a.dir.path())) EXPECT_EQ(e.path().filename().string().find(".partial"), std::string::npos);
}

TEST(Reconstruction, CorruptBlobIsCaught) {
  Acquired a(two_partitions());
  const Artifact* big = nullptr;
  for (const auto& art : a.manifest.artifacts) {
    if (art.path == "/SUB/BIG.BIN") big = &art;
  }
  ASSERT_NE(big, nullptr);
  {
    std::fstream f(a.store->blob_path(big->digest), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  const fs::path out = a.dir / "bad.dd";
  try {
    reconstruct(*a.repo, a.report.manifest_id, out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VerificationFailed);
  }
  EXPECT_FALSE(fs::exists(out));
}

TEST(Reconstruction, VerifyImage) {
  Acquired a(two_partitions());
  MemorySource copy(a.original());
  VerifyResult v = verify_image(copy, a.manifest, 10, 1);
  EXPECT_TRUE(v.passed());
  EXPECT_EQ(v.sampled.size(), 10u);

  copy.bytes()[copy.size() / 2] ^= 0x40;
  v = verify_image(copy, a.manifest);
  EXPECT_TRUE(v.size_ok);
  EXPECT_FALSE(v.digest_ok);
  EXPECT_FALSE(v.passed());
  EXPECT_EQ(v.expected, a.manifest.image_digest);

  MemorySource shorter(a.built.image->read(0, copy.size() - 512));
  v = verify_image(shorter, a.manifest, a.manifest.artifacts.size());
  EXPECT_FALSE(v.size_ok);
  EXPECT_FALSE(v.failed_artifacts().empty());
}

// Sampling n of N artifacts without replacement finds a single corrupted
// artifact with probability n/N, which is at least 1 - (1 - 1/N)^n.
TEST(Reconstruction, SpotCheckLocalizesCorruption) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(4);
  p.sectors_per_cluster = 1;
  p.fill_seed = 9;
  for (int i = 0; i < 12; ++i) p.files.push_back(testsupport::file("/F" + std::to_string(i), 3000 + 500 * i, 40 + i));
  s.partitions.push_back(p);
  Acquired a(s);
  const std::size_t N = a.manifest.artifacts.size();
  const std::size_t n = 8;
  const double floor = 1.0 - std::pow(1.0 - 1.0 / static_cast<double>(N), static_cast<double>(n));

  std::mt19937_64 rng(123);
  const Bytes original = a.original();
  int found = 0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) {
    const std::size_t victim = rng() % N;
    const Artifact& art = a.manifest.artifacts[victim];
    const Extent& e = art.extents.extents()[rng() % art.extents.size()];
    MemorySource img(original);
    img.bytes()[e.offset + rng() % e.length] ^= 0xFF;
    const VerifyResult v = verify_image(img, a.manifest, n, rng());
    EXPECT_FALSE(v.digest_ok);
    const auto failed = v.failed_artifacts();
    EXPECT_LE(failed.size(), 1u);
    if (!failed.empty()) {
      EXPECT_EQ(failed[0], victim);
      ++found;
    }
  }
  const double rate = static_cast<double>(found) / trials;
  // Three standard deviations of slack around the analytic floor.
  const double sd = std::sqrt(floor * (1 - floor) / trials);
  EXPECT_GE(rate, floor - 3 * sd) << "N=" << N << " n=" << n;
}

TEST(Reconstruction, ExtractByPath) {
  Acquired a(two_partitions());
  const fs::path out = a.dir / "big.bin";
  const auto r = extract_artifact(*a.repo, a.manifest, {std::string("/SUB/BIG.BIN"), std::nullopt}, out);
  EXPECT_EQ(r.bytes_written, 150000u);
  EXPECT_EQ(file_bytes(out), fx::generate_content(150000, 3));

  try {
    extract_artifact(*a.repo, a.manifest, {std::string("/NOPE.TXT"), std::nullopt}, a.dir / "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotFound);
  }
  EXPECT_FALSE(fs::exists(a.dir / "x"));
}

TEST(Reconstruction, ExtractAmbiguousAcrossPartitions) {
  Acquired a(two_partitions());
  try {
    extract_artifact(*a.repo, a.manifest, {std::string("/A.TXT"), std::nullopt}, a.dir / "a.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Ambiguous);
    EXPECT_EQ(e.details(), (std::vector<std::string>{"p0:/A.TXT", "p1:/A.TXT"}));
  }
  extract_artifact(*a.repo, a.manifest, {std::string("p1:/A.TXT"), std::nullopt}, a.dir / "a.txt");
  const Bytes got = file_bytes(a.dir / "a.txt");
  EXPECT_EQ(std::string(got.begin(), got.end()), "beta partition copy\n");
}

TEST(Reconstruction, ExtractSplitFileConcatenatesPieces) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(16);
  p.files.push_back(testsupport::file("/HUGE.BIN", 300000, 12));
  s.partitions.push_back(p);
  auto built = fx::build_in_memory(s);
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  AcquisitionConfig c = config();
  c.max_artifact_size = 64 * 1024;
  const auto rep = acquire(*built.image, repo, c);
  const Manifest m = store.get_manifest(rep.manifest_id);
  const auto r = extract_artifact(repo, m, {std::string("/HUGE.BIN"), std::nullopt}, dir / "huge");
  EXPECT_EQ(r.pieces.size(), 5u);
  EXPECT_EQ(file_bytes(dir / "huge"), fx::generate_content(300000, 12));
}

TEST(Reconstruction, ExtractByDigestListsEveryPlacement) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(32);
  for (int i = 0; i < 89; ++i) p.files.push_back(testsupport::file("/D/C" + std::to_string(i) + ".DLL", 6000, 89));
  s.partitions.push_back(p);
  Acquired a(s);
  const Digest d = content_hash(fx::generate_content(6000, 89));
  const auto r = extract_artifact(*a.repo, a.manifest, {std::nullopt, d}, a.dir / "dll");
  EXPECT_EQ(r.placements.size(), 89u);
  EXPECT_EQ(r.pieces, std::vector<Digest>{d});
  EXPECT_EQ(file_bytes(a.dir / "dll"), fx::generate_content(6000, 89));
}
