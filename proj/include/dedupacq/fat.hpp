#pragma once

// MBR + FAT16/FAT32 parsing and exhaustive artifact enumeration.
//
// enumerate_artifacts() decomposes a raw image into FileData, FileSlack,
// Unallocated, FsMetadata and InterPartitionGap artifacts whose extents tile
// the whole image. Digests are left unset; the acquisition pipeline fills
// them in during its single sequential read.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/image_model.hpp"

namespace dedupacq::fat {

constexpr std::uint64_t kMbrSectorSize = 512;
constexpr std::uint64_t kDefaultMaxArtifactSize = 64ull << 20;

struct PartitionEntry {
  std::uint32_t index = 0;  // slot 0..3 in the MBR table
  std::uint8_t type_code = 0;
  std::uint64_t start_lba = 0;
  std::uint64_t sector_count = 0;
  bool bootable = false;

  std::uint64_t byte_offset() const noexcept { return start_lba * kMbrSectorSize; }
  std::uint64_t byte_size() const noexcept { return sector_count * kMbrSectorSize; }
  std::uint64_t byte_end() const noexcept { return byte_offset() + byte_size(); }
  bool operator==(const PartitionEntry&) const = default;
};

bool is_fat_type_code(std::uint8_t type_code);

// Non-empty entries of the classic MBR table, in slot order. Throws
// NotAnMbr (no 0x55AA signature) or CorruptPartitionTable.
std::vector<PartitionEntry> parse_mbr(const ByteSource& image);

enum class Variant { Fat12, Fat16, Fat32 };
std::string_view to_string(Variant v);

struct VolumeLayout {
  std::uint64_t volume_offset = 0;  // absolute byte offset of the boot sector
  std::uint32_t bytes_per_sector = 0;
  std::uint32_t sectors_per_cluster = 0;
  std::uint32_t reserved_sectors = 0;
  std::uint32_t fat_count = 0;
  std::uint32_t sectors_per_fat = 0;
  std::uint32_t root_entry_count = 0;        // FAT16
  std::uint32_t root_dir_first_cluster = 0;  // FAT32
  std::uint64_t total_sectors = 0;
  std::uint64_t data_region_start = 0;  // absolute byte offset of cluster 2
  std::uint32_t cluster_size = 0;
  std::uint32_t cluster_count = 0;  // data clusters, numbered 2..cluster_count+1
  Variant variant = Variant::Fat16;

  std::uint64_t fat_offset(std::uint32_t copy) const noexcept {
    return volume_offset + (std::uint64_t{reserved_sectors} + std::uint64_t{copy} * sectors_per_fat) * bytes_per_sector;
  }
  std::uint64_t fat_bytes() const noexcept { return std::uint64_t{sectors_per_fat} * bytes_per_sector; }
  std::uint64_t root_dir_offset() const noexcept { return fat_offset(fat_count); }
  std::uint64_t root_dir_bytes() const noexcept { return std::uint64_t{root_entry_count} * 32; }
  std::uint64_t cluster_offset(std::uint32_t cluster) const noexcept {
    return data_region_start + std::uint64_t{cluster - 2} * cluster_size;
  }
  std::uint64_t volume_bytes() const noexcept { return total_sectors * bytes_per_sector; }
  std::uint32_t max_cluster() const noexcept { return cluster_count + 1; }
};

// Decodes the BIOS Parameter Block of `partition`. Throws CorruptBootSector
// naming the offending field, or UnsupportedVariant for FAT12.
VolumeLayout parse_volume(const ByteSource& image, const PartitionEntry& partition);

class AllocationTable {
 public:
  enum class State { Free, Next, EndOfChain, Bad, Invalid };

  AllocationTable(Variant variant, std::vector<std::uint32_t> entries)
      : variant_(variant), entries_(std::move(entries)) {}

  State state(std::uint32_t cluster) const noexcept;
  // Valid only when state(cluster) == Next.
  std::uint32_t next(std::uint32_t cluster) const noexcept { return entries_[cluster]; }
  std::uint32_t raw(std::uint32_t cluster) const noexcept { return entries_[cluster]; }
  std::size_t entry_count() const noexcept { return entries_.size(); }
  std::size_t free_count() const noexcept;

 private:
  Variant variant_;
  std::vector<std::uint32_t> entries_;
};

// Decodes the first FAT copy. Throws CorruptVolume if it is truncated.
AllocationTable read_fat(const ByteSource& image, const VolumeLayout& layout);

struct FileEntry {
  std::string path;  // "/dir/name.ext"
  std::uint64_t size = 0;
  std::vector<std::uint32_t> cluster_chain;
  std::int64_t created = 0;  // seconds since epoch, UTC
  std::int64_t modified = 0;
  bool is_directory = false;
};

struct VolumeTree {
  std::vector<FileEntry> files;
  std::vector<FileEntry> directories;  // includes "/" on FAT32 (it owns clusters)
};

// Depth-first walk from the root. Throws CorruptChain (cycle, cross-link or
// broken link) or TruncatedFile (chain shorter than the size implies).
VolumeTree walk_volume(const ByteSource& image, const VolumeLayout& layout, const AllocationTable& fat);
std::vector<FileEntry> enumerate_files(const ByteSource& image, const VolumeLayout& layout,
                                       const AllocationTable& fat);

struct EnumerationOptions {
  std::uint64_t max_artifact_size = kDefaultMaxArtifactSize;
};

struct VolumeInfo {
  PartitionEntry partition;
  VolumeLayout layout;
  std::size_t file_count = 0;
  std::size_t directory_count = 0;
  std::size_t free_clusters = 0;
};

struct ArtifactInventory {
  std::uint64_t image_size = 0;
  std::vector<Artifact> artifacts;  // canonical order, digests unset
  std::vector<PartitionEntry> partitions;
  std::vector<VolumeInfo> volumes;
};

ArtifactInventory enumerate_artifacts(const ByteSource& image, const EnumerationOptions& options = {});

}  // namespace dedupacq::fat
