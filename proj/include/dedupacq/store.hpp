#pragma once

// Server-side content-addressed evidence store.
//
// Layout under the root directory:
//   blobs/<hex2>/<hex62>   one file per unique artifact, named by its digest
//   manifests/<id>.json    canonical manifest bytes; id = digest of those bytes
//   index.log              append-only, one lowercase hex digest per line
//   fuzzy.idx              "<hex digest>\t<fuzzy text>" per line
//   tmp/                   staging area for in-flight writes (emptied on open)

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dedupacq/ctph.hpp"
#include "dedupacq/error.hpp"
#include "dedupacq/digest.hpp"
#include "dedupacq/image_model.hpp"

namespace dedupacq {

struct OccurrenceRecord {
  Digest digest;
  std::string manifest_id;
  std::string where;  // file path, or the artifact label / kind
  std::uint64_t offset = 0;  // first extent offset
  bool operator==(const OccurrenceRecord&) const = default;
};

struct StoreStats {
  std::uint64_t unique_artifacts = 0;
  std::uint64_t logical_bytes = 0;
  std::uint64_t physical_bytes = 0;
  std::uint64_t manifest_count = 0;

  double dedup_ratio() const noexcept {
    return logical_bytes == 0 ? 0.0 : 1.0 - static_cast<double>(physical_bytes) / static_cast<double>(logical_bytes);
  }
  bool operator==(const StoreStats&) const = default;
};

struct AuditReport {
  std::uint64_t blobs_checked = 0;
  std::uint64_t manifests_checked = 0;
  std::uint64_t unindexed_blobs = 0;  // present on disk, missing from index.log (harmless)
  std::uint64_t orphan_blobs = 0;     // stored but referenced by no manifest (harmless)
  std::uint64_t temp_files = 0;
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
};

enum class PutStatus { Stored, AlreadyPresent };

class EvidenceStore {
 public:
  struct Options {
    std::size_t max_check_batch = 512;
    bool durable = true;  // fsync blobs and manifests before rename
    // Test hook, called with "temp_written" and "renamed" during put_artifact.
    std::function<void(std::string_view stage)> fault_hook;
  };

  explicit EvidenceStore(std::filesystem::path root);
  EvidenceStore(std::filesystem::path root, Options options);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::size_t max_check_batch() const noexcept { return options_.max_check_batch; }

  // Throws BatchTooLarge.
  std::vector<bool> has_digests(std::span<const Digest> batch) const;
  bool contains(const Digest& d) const;

  // Re-hashes the payload. Throws DigestMismatch or StorageError.
  PutStatus put_artifact(const Digest& claimed, std::span<const std::uint8_t> payload);

  // Throws NotFound.
  Bytes get_artifact(const Digest& d) const;
  std::uint64_t blob_size(const Digest& d) const;
  std::filesystem::path blob_path(const Digest& d) const;

  // Throws DanglingDigest (details list the missing digests) or InvalidManifest.
  std::string commit_manifest(const Manifest& m);
  // Same, for manifest bytes received over the wire.
  std::string commit_manifest_bytes(std::string_view canonical_json);
  // Throws NotFound.
  Manifest get_manifest(const std::string& manifest_id) const;
  std::string get_manifest_bytes(const std::string& manifest_id) const;
  std::vector<std::string> manifest_ids() const;

  std::vector<OccurrenceRecord> query_duplicates(const Digest& d) const;
  StoreStats stats() const;
  AuditReport audit() const;

  std::size_t rebuild_fuzzy_index();
  const FuzzyIndex& fuzzy_index() const noexcept { return fuzzy_; }

 private:
  void open();
  void replay_index();
  void load_manifests();
  void load_fuzzy();
  void index_manifest(const std::string& id, const Manifest& m);
  void append_index(const Digest& d);
  std::mutex& stripe(const Digest& d) const;
  std::filesystem::path temp_path(std::string_view hint) const;

  std::filesystem::path root_;
  Options options_;

  mutable std::shared_mutex blobs_mutex_;
  std::unordered_map<Digest, std::uint64_t> blobs_;  // digest -> size
  std::uint64_t physical_bytes_ = 0;
  std::mutex log_mutex_;
  mutable std::array<std::mutex, 64> stripes_;

  mutable std::shared_mutex manifests_mutex_;
  std::map<std::string, std::uint64_t> manifests_;  // id -> logical bytes
  std::uint64_t logical_bytes_ = 0;
  std::unordered_map<Digest, std::vector<OccurrenceRecord>> occurrences_;
  std::mutex commit_mutex_;

  FuzzyIndex fuzzy_;
};

}  // namespace dedupacq
