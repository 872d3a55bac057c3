#pragma once

// Core value types shared by every module: extents, artifacts, manifests,
// and the coverage check that guarantees a manifest can rebuild its image.
// All types are immutable after construction and safe to share.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/ctph.hpp"
#include "dedupacq/digest.hpp"

namespace dedupacq {

struct Extent {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  std::uint64_t end() const noexcept { return offset + length; }
  bool operator==(const Extent&) const = default;
};

// Byte regions of one artifact in content order. Regions never overlap.
// They ascend by offset except for file data whose cluster chain runs
// backwards on disk, where content order wins.
class ExtentList {
 public:
  ExtentList() = default;
  // Throws InvalidManifest on zero-length, overflowing or overlapping extents.
  explicit ExtentList(std::vector<Extent> extents);

  // Appends, merging with the last extent when contiguous.
  void append(Extent e);

  const std::vector<Extent>& extents() const noexcept { return extents_; }
  std::size_t size() const noexcept { return extents_.size(); }
  bool empty() const noexcept { return extents_.empty(); }
  std::uint64_t total_length() const noexcept { return total_; }
  std::uint64_t first_offset() const noexcept { return extents_.empty() ? 0 : extents_.front().offset; }
  // Largest end offset.
  std::uint64_t max_end() const noexcept;

  // Splits into consecutive pieces of at most `max_piece` bytes each.
  std::vector<ExtentList> split(std::uint64_t max_piece) const;

  bool operator==(const ExtentList& o) const { return extents_ == o.extents_; }

 private:
  std::vector<Extent> extents_;
  std::uint64_t total_ = 0;
};

enum class ArtifactKind { FileData, FileSlack, Unallocated, FsMetadata, InterPartitionGap };

std::string_view to_string(ArtifactKind kind);
ArtifactKind artifact_kind_from_string(std::string_view text);

struct FileTimes {
  std::int64_t created = 0;   // seconds since epoch, UTC
  std::int64_t modified = 0;
  bool operator==(const FileTimes&) const = default;
};

// Position of one piece of an artifact that was split at max_artifact_size.
struct PieceInfo {
  std::uint32_t index = 0;
  std::uint32_t count = 1;
  bool operator==(const PieceInfo&) const = default;
};

struct Artifact {
  ArtifactKind kind = ArtifactKind::Unallocated;
  ExtentList extents;
  Digest digest;
  std::optional<FuzzyDigest> fuzzy;
  std::optional<std::string> path;        // FileData only
  std::optional<FileTimes> times;         // FileData only
  std::optional<std::uint32_t> partition; // MBR slot of the owning volume
  std::optional<PieceInfo> piece;
  std::string label;                      // e.g. "mbr", "fat1", "dir:/DOCS"

  std::uint64_t logical_size() const noexcept { return extents.total_length(); }
  bool operator==(const Artifact&) const = default;
};

struct Manifest {
  std::string manifest_id;  // hex digest of the canonical bytes; set by the store
  std::string case_id;
  std::string investigator_id;
  std::string disk_id;
  std::int64_t acquired_at = 0;  // seconds since epoch, UTC
  std::uint64_t image_size = 0;
  Digest image_digest;
  std::vector<Artifact> artifacts;

  bool operator==(const Manifest&) const = default;
};

struct CoverageReport {
  std::vector<Extent> gaps;
  std::vector<Extent> overlaps;
  std::vector<Extent> out_of_bounds;

  bool ok() const noexcept { return gaps.empty() && overlaps.empty() && out_of_bounds.empty(); }
  std::string describe(std::size_t max_items = 8) const;
};

CoverageReport coverage_check(std::span<const Artifact> artifacts, std::uint64_t image_size);

// Streams the bytes at each extent, in list order, to `sink` in chunks of at
// most `chunk` bytes. Throws OutOfBounds naming the first bad extent before
// reading anything.
void stream_extents(const ByteSource& image, const ExtentList& extents,
                    const std::function<void(std::span<const std::uint8_t>)>& sink,
                    std::size_t chunk = 1 << 20);
Bytes extent_bytes(const ByteSource& image, const ExtentList& extents);

// Artifacts sorted by first extent offset.
void sort_canonical(std::vector<Artifact>& artifacts);

// UTF-8 JSON with sorted keys and no whitespace. manifest_id is not part of
// the canonical form (it is derived from it). Throws InvalidManifest when
// coverage fails.
std::string manifest_canonical_bytes(const Manifest& m);
// Parses canonical (or any equivalent) manifest JSON; manifest_id is set to
// the digest of the re-canonicalized bytes.
Manifest parse_manifest(std::string_view json_text);
// Hex digest of the canonical bytes.
std::string manifest_id_of(const Manifest& m);

std::string format_utc(std::int64_t seconds);
std::int64_t parse_utc(std::string_view text);

}  // namespace dedupacq
