#include <gtest/gtest.h>

#include <map>
#include <set>

#include "dedupacq/acquisition.hpp"
#include "dedupacq/fixture.hpp"
#include "support.hpp"

using namespace dedupacq;
using testsupport::TempDir;
namespace fx = dedupacq::fixture;

namespace {

EvidenceStore::Options fast() {
  EvidenceStore::Options o;
  o.durable = false;
  return o;
}

AcquisitionConfig config(const std::string& disk = "disk-1") {
  AcquisitionConfig c;
  c.case_id = "case-7";
  c.investigator_id = "inv-3";
  c.disk_id = disk;
  c.acquired_at = 1500000000;
  c.hash_workers = 2;
  return c;
}

fx::FixtureSpec mixed_spec(std::uint64_t seed = 1) {
  fx::FixtureSpec s;
  s.seed = seed;
  auto p = testsupport::fat16(24);
  p.fill_seed = seed + 100;
  for (int i = 0; i < 30; ++i) p.files.push_back(testsupport::file("/DOCS/F" + std::to_string(i) + ".BIN", 1000 + i * 3001, seed * 1000 + i));
  auto frag = testsupport::file("/FRAG.DAT", 90000, seed + 7);
  frag.fragmented = true;
  p.files.push_back(frag);
  p.files.push_back(testsupport::literal("/README.TXT", "hello forensic world\n"));
  p.deletes = {"/DOCS/F3.BIN", "/DOCS/F17.BIN"};
  s.partitions.push_back(p);
  return s;
}

std::set<Digest> digest_set(const std::vector<Artifact>& arts) {
  std::set<Digest> out;
  for (const auto& a : arts) out.insert(a.digest);
  return out;
}

}  // namespace

TEST(Acquisition, ConfigValidation) {
  AcquisitionConfig c = config();
  c.check_batch = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.check_batch = 513;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = config();
  c.hash_workers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(config().validate());
}

TEST(Acquisition, InitialThenRepeat) {
  const auto built = fx::build_in_memory(mixed_spec());
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);

  const AcquisitionReport first = acquire(*built.image, repo, config());
  EXPECT_EQ(first.image_size, built.image->size());
  EXPECT_EQ(first.image_digest, content_hash(*built.image));
  EXPECT_EQ(first.bytes_read, first.image_size);
  EXPECT_EQ(first.duplicate_count + first.unique_uploaded_count, first.artifact_count);
  EXPECT_EQ(first.unique_uploaded_count, store.stats().unique_artifacts);
  EXPECT_EQ(first.payload_bytes_transferred, store.stats().physical_bytes);

  const Manifest m = store.get_manifest(first.manifest_id);
  EXPECT_EQ(m.artifacts.size(), first.artifact_count);
  EXPECT_EQ(m.image_digest, first.image_digest);
  EXPECT_EQ(m.case_id, "case-7");
  EXPECT_TRUE(coverage_check(m.artifacts, m.image_size).ok());
  // Empty store: only intra-image repeats count as duplicates.
  EXPECT_EQ(first.unique_uploaded_count, digest_set(m.artifacts).size());

  const AcquisitionReport again = acquire(*built.image, repo, config());
  EXPECT_EQ(again.payload_bytes_transferred, 0u);
  EXPECT_EQ(again.unique_uploaded_count, 0u);
  EXPECT_EQ(again.duplicate_ratio(), 1.0);
  EXPECT_EQ(again.bytes_read, again.image_size);
  EXPECT_EQ(again.manifest_id, first.manifest_id);  // same metadata, same canonical bytes
  EXPECT_TRUE(store.audit().ok());
}

TEST(Acquisition, FuzzyDigestsOnLargeFiles) {
  const auto built = fx::build_in_memory(mixed_spec());
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  const auto rep = acquire(*built.image, repo, config());
  const Manifest m = store.get_manifest(rep.manifest_id);
  std::size_t with = 0;
  for (const auto& a : m.artifacts) {
    const bool expect = a.kind == ArtifactKind::FileData && a.logical_size() >= 4096;
    EXPECT_EQ(a.fuzzy.has_value(), expect) << a.label;
    with += a.fuzzy.has_value();
  }
  EXPECT_GT(with, 10u);

  AcquisitionConfig off = config("other");
  off.compute_fuzzy = false;
  const auto rep2 = acquire(*built.image, repo, off);
  for (const auto& a : store.get_manifest(rep2.manifest_id).artifacts) EXPECT_FALSE(a.fuzzy.has_value());
}

TEST(Acquisition, IntraImageDuplicatesUploadOnce) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(16);
  for (int i = 0; i < 5; ++i) p.files.push_back(testsupport::file("/COPY" + std::to_string(i) + ".BIN", 20000, 42));
  s.partitions.push_back(p);
  const auto built = fx::build_in_memory(s);
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  const auto rep = acquire(*built.image, repo, config());
  const Digest d = built.truth.files[0].digest;
  std::size_t puts_of_d = 0;
  const Manifest m = store.get_manifest(rep.manifest_id);
  for (const auto& a : m.artifacts) puts_of_d += a.digest == d;
  EXPECT_EQ(puts_of_d, 5u);
  EXPECT_EQ(store.query_duplicates(d).size(), 5u);
  EXPECT_GE(rep.duplicate_count, 4u);
  EXPECT_EQ(rep.unique_uploaded_count, digest_set(m.artifacts).size());
}

TEST(Acquisition, EightyNineCopiesInHistogram) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(32);
  for (int i = 0; i < 89; ++i) p.files.push_back(testsupport::file("/DUP/C" + std::to_string(i) + ".DLL", 5000, 89));
  for (int i = 0; i < 10; ++i) p.files.push_back(testsupport::file("/U" + std::to_string(i) + ".BIN", 7000, 500 + i));
  s.partitions.push_back(p);
  const auto built = fx::build_in_memory(s);
  const Digest dup = built.truth.files[0].digest;

  const InspectReport ins = inspect(*built.image, config());
  ASSERT_FALSE(ins.histogram.empty());
  EXPECT_EQ(ins.histogram[0].digest, dup);
  EXPECT_EQ(ins.histogram[0].count, 89u);
  EXPECT_EQ(ins.histogram[0].where, "/DUP/C0.DLL");
  EXPECT_EQ(ins.bytes_read, ins.image_size);

  // Brute-force group-by over ground-truth file bytes.
  std::map<Digest, std::uint64_t> truth_groups;
  for (const auto& f : built.truth.files) ++truth_groups[f.digest];
  for (const auto& g : ins.histogram) {
    if (g.kind != ArtifactKind::FileData) continue;
    EXPECT_EQ(truth_groups.at(g.digest), g.count);
  }

  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  const auto rep = acquire(*built.image, repo, config());
  EXPECT_EQ(rep.histogram[0].count, 89u);
  EXPECT_EQ(store.query_duplicates(dup).size(), 89u);
}

TEST(Acquisition, HistogramOrdering) {
  std::vector<Artifact> arts;
  auto add = [&](const std::string& content, int times) {
    for (int i = 0; i < times; ++i) {
      Artifact a;
      a.digest = content_hash(content);
      a.label = content;
      arts.push_back(a);
    }
  };
  add("x", 2);
  add("y", 3);
  add("z", 2);
  add("w", 1);
  const auto h = duplicate_histogram(arts);
  ASSERT_EQ(h.size(), 3u);
  EXPECT_EQ(h[0].count, 3u);
  const bool x_first = content_hash("x").hex() < content_hash("z").hex();
  EXPECT_EQ(h[1].where, x_first ? "x" : "z");
  EXPECT_EQ(h[2].where, x_first ? "z" : "x");
}

TEST(Acquisition, EmptyVolumeHasNoFileRows) {
  fx::FixtureSpec s;
  auto p = testsupport::fat16(8);
  p.sectors_per_cluster = 2;
  s.partitions.push_back(p);
  const auto built = fx::build_in_memory(s);
  const InspectReport ins = inspect(*built.image, config());
  for (const auto& a : ins.artifacts) EXPECT_NE(a.kind, ArtifactKind::FileData);
}

TEST(Acquisition, ModifiedFilesAreTheOnlyNewFileData) {
  fx::FixtureSpec base;
  auto p = testsupport::fat32(48);
  for (int i = 0; i < 200; ++i) {
    p.files.push_back(testsupport::file("/D" + std::to_string(i % 8) + "/F" + std::to_string(i) + ".DAT", 30000 + i * 17, 9000 + i));
  }
  base.partitions.push_back(p);
  fx::FixtureSpec changed = base;
  changed.partitions[0].modify_fraction = fx::ModifyFraction{0.05, 3};

  const auto a = fx::build_in_memory(base);
  const auto b = fx::build_in_memory(changed);
  ASSERT_EQ(b.truth.modified.size(), 10u);

  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  acquire(*a.image, repo, config("a"));
  const auto rep = acquire(*b.image, repo, config("b"));
  EXPECT_EQ(rep.file_count, 200u);
  EXPECT_EQ(rep.file_duplicate_count, 190u);
  EXPECT_DOUBLE_EQ(rep.file_duplicate_ratio(), 0.95);
  EXPECT_GE(rep.payload_bytes_transferred, b.truth.modified_bytes);
  EXPECT_LE(rep.payload_bytes_transferred, 2 * b.truth.modified_bytes);
}

TEST(Acquisition, SharedArtifactsUploadOnceAcrossImages) {
  const auto a = fx::build_in_memory(mixed_spec(1));
  fx::FixtureSpec sb = mixed_spec(1);
  sb.partitions[0].files.resize(20);
  sb.partitions[0].deletes.clear();
  sb.partitions[0].files.push_back(testsupport::file("/NEW.BIN", 33333, 77));
  const auto b = fx::build_in_memory(sb);

  const auto ia = inspect(*a.image, config());
  const auto ib = inspect(*b.image, config());
  const auto da = digest_set(ia.artifacts), db = digest_set(ib.artifacts);
  std::size_t fresh = 0;
  for (const auto& d : db) fresh += !da.count(d);

  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  const auto ra = acquire(*a.image, repo, config("a"));
  EXPECT_EQ(ra.unique_uploaded_count, da.size());
  const auto rb = acquire(*b.image, repo, config("b"));
  EXPECT_EQ(rb.unique_uploaded_count, fresh);
  EXPECT_EQ(store.stats().unique_artifacts, da.size() + fresh);
}

TEST(Acquisition, TinyBudgetAndQueuesStillComplete) {
  const auto built = fx::build_in_memory(mixed_spec(3));
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  AcquisitionConfig c = config();
  c.memory_budget = 1;
  c.queue_capacity = 1;
  c.check_batch = 1;
  c.hash_workers = 3;
  c.upload_workers = 2;
  c.max_artifact_size = 64 * 1024;
  const auto rep = acquire(*built.image, repo, c);
  EXPECT_EQ(rep.bytes_read, rep.image_size);
  EXPECT_EQ(rep.image_digest, content_hash(*built.image));
  EXPECT_TRUE(store.audit().ok());
}

TEST(Acquisition, ParseErrorCommitsNothing) {
  MemorySource junk(Bytes(1 << 20, 0x5A));
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  LocalRepository repo(store);
  try {
    acquire(junk, repo, config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotAnMbr);
  }
  EXPECT_EQ(store.stats(), StoreStats{});
}

TEST(Acquisition, NetworkFailureIsResumable) {
  const auto built = fx::build_in_memory(mixed_spec(4));
  TempDir dir;
  EvidenceStore store(dir.path(), fast());
  net::Server server(store, net::Endpoint{"127.0.0.1", 0});
  server.start();
  std::atomic<int> puts{0};
  net::ClientOptions o;
  o.before_send = [&](const proto::Message& m, int, net::Connection&) {
    if (std::holds_alternative<proto::Put>(m) && ++puts > 5) throw Error(ErrorCode::IoError, "link down");
  };
  {
    RemoteRepository repo(net::Endpoint{"127.0.0.1", server.port()}, o, 2);
    try {
      acquire(*built.image, repo, config());
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ResumableFailure);
    }
  }
  EXPECT_EQ(store.stats().manifest_count, 0u);
  EXPECT_TRUE(store.audit().ok());

  // Rerunning over a healthy link finishes, uploading only what is missing.
  const std::uint64_t already = store.stats().unique_artifacts;
  EXPECT_GT(already, 0u);
  RemoteRepository repo(net::Endpoint{"127.0.0.1", server.port()});
  const auto rep = acquire(*built.image, repo, config());
  EXPECT_EQ(rep.unique_uploaded_count + already, store.stats().unique_artifacts);
  EXPECT_EQ(store.stats().manifest_count, 1u);
}

TEST(Acquisition, OverTheWireMatchesLocal) {
  const auto built = fx::build_in_memory(mixed_spec(5));
  TempDir d1, d2;
  EvidenceStore local(d1.path(), fast());
  LocalRepository lrepo(local);
  const auto lr = acquire(*built.image, lrepo, config());

  EvidenceStore remote(d2.path(), fast());
  net::Server server(remote, net::Endpoint{"127.0.0.1", 0});
  server.start();
  RemoteRepository rrepo(net::Endpoint{"127.0.0.1", server.port()});
  const auto rr = acquire(*built.image, rrepo, config());
  EXPECT_EQ(rr.manifest_id, lr.manifest_id);
  EXPECT_EQ(rr.payload_bytes_transferred, lr.payload_bytes_transferred);
  EXPECT_EQ(remote.stats(), local.stats());
}

TEST(Acquisition, BenchmarkReacquisitionSendsNothing) {
  TempDir dir;
  const auto path = dir / "img.dd";
  fx::build_file(mixed_spec(6), path);
  BenchmarkOptions o;
  o.repetitions = 2;
  o.work_dir = dir.path();
  const auto rep = benchmark(path, config(), o);
  ASSERT_EQ(rep.runs.size(), 2u);
  for (const auto& r : rep.runs) {
    EXPECT_GT(r.initial.payload_bytes_transferred, 0u);
    EXPECT_EQ(r.reacquisition.payload_bytes_transferred, 0u);
    EXPECT_EQ(r.initial.bytes_read, rep.image_size);
    EXPECT_EQ(r.reacquisition.bytes_read, rep.image_size);
  }
}
