#pragma once

// Synthetic MBR + FAT16/FAT32 disk images with recorded ground truth.
//
// A FixtureSpec describes partitions, the files written to each, and the
// deletions and modifications applied afterwards. Building is fully
// deterministic: the same spec always yields the same image bytes, so a
// spec with a `modify` list differs from its base only where those files
// (and the directory entries recording their timestamps) live.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/digest.hpp"
#include "dedupacq/fat.hpp"

namespace dedupacq::fixture {

struct FileSpec {
  std::string path;
  std::optional<std::string> content;  // literal bytes; otherwise size + seed
  std::uint64_t size = 0;
  std::uint64_t seed = 0;
  bool fragmented = false;                  // allocate every other free cluster
  std::vector<std::uint32_t> clusters;      // explicit chain (overrides fragmented)
  std::optional<std::int64_t> created;
  std::optional<std::int64_t> modified;
};

struct ModifySpec {
  std::string path;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> size;  // new size; default keeps the old one
};

struct ModifyFraction {
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

struct PartitionSpec {
  fat::Variant variant = fat::Variant::Fat16;
  std::uint64_t start_lba = 2048;
  std::uint64_t size = 0;  // bytes
  std::uint32_t bytes_per_sector = 512;
  std::uint32_t sectors_per_cluster = 8;
  std::uint32_t fat_count = 2;
  std::uint32_t root_entries = 512;        // FAT16 only
  std::uint32_t reserved_sectors = 0;      // 0 = 4 on FAT16, 32 on FAT32
  std::optional<std::uint8_t> type_code;   // default 0x0E / 0x0C
  bool bootable = false;
  std::string label = "DEDUPACQ";
  std::uint64_t fill_seed = 0;             // nonzero: free clusters hold noise
  std::vector<FileSpec> files;
  std::vector<std::string> deletes;
  std::vector<ModifySpec> modifies;
  std::optional<ModifyFraction> modify_fraction;
};

struct FixtureSpec {
  std::uint64_t image_size = 0;  // 0 = end of the last partition
  std::uint64_t seed = 1;
  std::int64_t base_time = 1483228800;  // 2017-01-01T00:00:00Z
  std::vector<PartitionSpec> partitions;
};

// Parses the documented fixture JSON (see docs/fixture-spec.md).
// Throws InvalidFixture.
FixtureSpec parse_spec(std::string_view json_text);
FixtureSpec load_spec(const std::filesystem::path& path);

struct TruthFile {
  std::uint32_t partition = 0;  // MBR slot
  std::string path;
  std::uint64_t size = 0;
  Digest digest;  // SHA-256 of the content
  std::vector<std::uint32_t> chain;
  std::int64_t created = 0;
  std::int64_t modified = 0;
};

struct GroundTruth {
  std::uint64_t image_size = 0;
  std::vector<fat::PartitionEntry> partitions;
  std::vector<TruthFile> files;  // live files after deletes and modifications
  std::vector<std::string> deleted;
  std::vector<std::string> modified;
  std::uint64_t modified_bytes = 0;  // total size of modified files
};

std::uint64_t image_size_of(const FixtureSpec& spec);

// Deterministic content of a size+seed file.
Bytes generate_content(std::uint64_t size, std::uint64_t seed);

// Formats and populates `out`, which must be zero-filled and exactly
// image_size_of(spec) bytes. Throws CapacityError when files do not fit,
// InvalidFixture for inconsistent specs.
GroundTruth build_image(const FixtureSpec& spec, WritableImage& out);

// Convenience: builds into a sparse in-memory image.
struct BuiltImage {
  std::unique_ptr<SparseImage> image;
  GroundTruth truth;
};
BuiltImage build_in_memory(const FixtureSpec& spec);
// Builds straight into a (sparse) file.
GroundTruth build_file(const FixtureSpec& spec, const std::filesystem::path& path);

}  // namespace dedupacq::fixture
