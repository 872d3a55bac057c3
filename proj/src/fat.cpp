#include "dedupacq/fat.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <string_view>

#include "dedupacq/error.hpp"
#include "fat_format.hpp"

namespace dedupacq::fat {

using namespace detail;

bool is_fat_type_code(std::uint8_t type_code) {
  switch (type_code) {
    case 0x01: case 0x04: case 0x06: case 0x0B: case 0x0C: case 0x0E:
      return true;
    default:
      return false;
  }
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Fat12: return "FAT12";
    case Variant::Fat16: return "FAT16";
    case Variant::Fat32: return "FAT32";
  }
  return "?";
}

std::vector<PartitionEntry> parse_mbr(const ByteSource& image) {
  if (image.size() < kMbrSectorSize) throw Error(ErrorCode::NotAnMbr, "image shorter than one sector");
  const Bytes sector = image.read(0, kMbrSectorSize);
  if (sector[510] != 0x55 || sector[511] != 0xAA) throw Error(ErrorCode::NotAnMbr, "missing 0x55AA signature");

  std::vector<PartitionEntry> entries;
  for (std::uint32_t i = 0; i < 4; ++i) {
    const std::size_t at = 446 + 16 * i;
    PartitionEntry p;
    p.index = i;
    p.bootable = (sector[at] & 0x80) != 0;
    p.type_code = sector[at + 4];
    p.start_lba = le32(sector, at + 8);
    p.sector_count = le32(sector, at + 12);
    if (p.type_code == 0 || p.sector_count == 0) continue;
    if (sector[at] != 0x00 && sector[at] != 0x80) {
      throw Error(ErrorCode::CorruptPartitionTable, "entry " + std::to_string(i) + " has bad status byte");
    }
    if (p.start_lba == 0) {
      throw Error(ErrorCode::CorruptPartitionTable, "entry " + std::to_string(i) + " overlaps the MBR sector");
    }
    if (p.byte_end() > image.size()) {
      throw Error(ErrorCode::CorruptPartitionTable, "entry " + std::to_string(i) + " extends past end of image");
    }
    entries.push_back(p);
  }
  for (std::size_t a = 0; a < entries.size(); ++a) {
    for (std::size_t b = a + 1; b < entries.size(); ++b) {
      const auto& x = entries[a];
      const auto& y = entries[b];
      if (x.start_lba < y.start_lba + y.sector_count && y.start_lba < x.start_lba + x.sector_count) {
        throw Error(ErrorCode::CorruptPartitionTable,
                    "entries " + std::to_string(x.index) + " and " + std::to_string(y.index) + " overlap");
      }
    }
  }
  return entries;
}

VolumeLayout parse_volume(const ByteSource& image, const PartitionEntry& partition) {
  if (partition.byte_end() > image.size() || partition.byte_size() < 512) {
    throw Error(ErrorCode::CorruptBootSector, "partition " + std::to_string(partition.index) + " out of bounds");
  }
  const Bytes bs = image.read(partition.byte_offset(), 512);
  auto corrupt = [&](const std::string& field) {
    return Error(ErrorCode::CorruptBootSector, "partition " + std::to_string(partition.index) + ": " + field);
  };

  VolumeLayout l;
  l.volume_offset = partition.byte_offset();
  l.bytes_per_sector = le16(bs, 11);
  l.sectors_per_cluster = bs[13];
  l.reserved_sectors = le16(bs, 14);
  l.fat_count = bs[16];
  l.root_entry_count = le16(bs, 17);
  const std::uint32_t tot16 = le16(bs, 19);
  const std::uint32_t fat16_size = le16(bs, 22);
  const std::uint32_t tot32 = le32(bs, 32);

  if (l.bytes_per_sector != 512 && l.bytes_per_sector != 1024 && l.bytes_per_sector != 2048 &&
      l.bytes_per_sector != 4096) {
    throw corrupt("bytes_per_sector = " + std::to_string(l.bytes_per_sector));
  }
  if (l.sectors_per_cluster == 0 || !std::has_single_bit(l.sectors_per_cluster) || l.sectors_per_cluster > 128) {
    throw corrupt("sectors_per_cluster = " + std::to_string(l.sectors_per_cluster));
  }
  if (l.reserved_sectors == 0) throw corrupt("reserved_sectors = 0");
  if (l.fat_count == 0) throw corrupt("fat_count = 0");
  if (bs[510] != 0x55 || bs[511] != 0xAA) throw corrupt("boot signature");

  l.sectors_per_fat = fat16_size != 0 ? fat16_size : le32(bs, 36);
  l.total_sectors = tot16 != 0 ? tot16 : tot32;
  if (l.sectors_per_fat == 0) throw corrupt("sectors_per_fat = 0");
  if (l.total_sectors == 0) throw corrupt("total_sectors = 0");
  if (l.total_sectors * l.bytes_per_sector > partition.byte_size()) {
    throw corrupt("total_sectors = " + std::to_string(l.total_sectors) + " exceeds partition");
  }
  l.cluster_size = l.bytes_per_sector * l.sectors_per_cluster;

  const std::uint64_t root_dir_sectors =
      (std::uint64_t{l.root_entry_count} * 32 + l.bytes_per_sector - 1) / l.bytes_per_sector;
  const std::uint64_t meta_sectors =
      l.reserved_sectors + std::uint64_t{l.fat_count} * l.sectors_per_fat + root_dir_sectors;
  if (meta_sectors >= l.total_sectors) throw corrupt("metadata regions exceed total_sectors");
  const std::uint64_t clusters = (l.total_sectors - meta_sectors) / l.sectors_per_cluster;
  l.data_region_start = l.volume_offset + meta_sectors * l.bytes_per_sector;

  if (clusters < kMinFat16Clusters) {
    throw Error(ErrorCode::UnsupportedVariant,
                "partition " + std::to_string(partition.index) + " is FAT12 (" + std::to_string(clusters) + " clusters)");
  }
  l.variant = clusters < kMinFat32Clusters ? Variant::Fat16 : Variant::Fat32;
  if (clusters > kFat32Mask - 10) throw corrupt("cluster count");
  l.cluster_count = static_cast<std::uint32_t>(clusters);

  const std::uint64_t entry_bytes = l.variant == Variant::Fat16 ? 2 : 4;
  if (l.fat_bytes() < (std::uint64_t{l.cluster_count} + 2) * entry_bytes) {
    throw corrupt("sectors_per_fat = " + std::to_string(l.sectors_per_fat) + " too small for " +
                  std::to_string(l.cluster_count) + " clusters");
  }

  if (l.variant == Variant::Fat32) {
    if (l.root_entry_count != 0) throw corrupt("root_entry_count must be 0 on FAT32");
    if (fat16_size != 0) throw corrupt("16-bit sectors_per_fat must be 0 on FAT32");
    l.root_dir_first_cluster = le32(bs, 44);
    if (l.root_dir_first_cluster < 2 || l.root_dir_first_cluster > l.max_cluster()) {
      throw corrupt("root_dir_first_cluster = " + std::to_string(l.root_dir_first_cluster));
    }
  } else if (l.root_entry_count == 0) {
    throw corrupt("root_entry_count = 0 on FAT16");
  }
  return l;
}

AllocationTable::State AllocationTable::state(std::uint32_t cluster) const noexcept {
  if (cluster >= entries_.size()) return State::Invalid;
  const std::uint32_t v = entries_[cluster];
  if (v == 0) return State::Free;
  if (variant_ == Variant::Fat16) {
    if (v >= kFat16Eoc) return State::EndOfChain;
    if (v == kFat16Bad) return State::Bad;
  } else {
    if (v >= kFat32Eoc) return State::EndOfChain;
    if (v == kFat32Bad) return State::Bad;
  }
  if (v < 2 || v >= entries_.size()) return State::Invalid;
  return State::Next;
}

std::size_t AllocationTable::free_count() const noexcept {
  return static_cast<std::size_t>(std::count(entries_.begin() + std::min<std::size_t>(2, entries_.size()), entries_.end(), 0u));
}

AllocationTable read_fat(const ByteSource& image, const VolumeLayout& layout) {
  const std::uint64_t entry_bytes = layout.variant == Variant::Fat16 ? 2 : 4;
  const std::uint64_t n = std::uint64_t{layout.cluster_count} + 2;
  const std::uint64_t offset = layout.fat_offset(0);
  if (offset > image.size() || n * entry_bytes > image.size() - offset) {
    throw Error(ErrorCode::CorruptVolume, "FAT region truncated at image end");
  }
  const Bytes raw = image.read(offset, n * entry_bytes);
  std::vector<std::uint32_t> entries(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    entries[i] = layout.variant == Variant::Fat16 ? le16(raw, i * 2) : (le32(raw, i * 4) & kFat32Mask);
  }
  return AllocationTable(layout.variant, std::move(entries));
}

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | cp >> 6));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | cp >> 12));
    out.push_back(static_cast<char>(0x80 | (cp >> 6 & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | cp >> 18));
    out.push_back(static_cast<char>(0x80 | (cp >> 12 & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp >> 6 & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string utf16_to_utf8(const std::vector<std::uint16_t>& units) {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    std::uint32_t cp = units[i];
    if (cp >= 0xD800 && cp <= 0xDBFF && i + 1 < units.size() && units[i + 1] >= 0xDC00 && units[i + 1] <= 0xDFFF) {
      cp = 0x10000 + ((cp - 0xD800) << 10) + (units[i + 1] - 0xDC00);
      ++i;
    } else if (cp >= 0xD800 && cp <= 0xDFFF) {
      cp = 0xFFFD;
    }
    append_utf8(out, cp);
  }
  return out;
}

// 8.3 name with NT lowercase flags applied. High bytes are mapped as
// Latin-1 so the result is always valid UTF-8.
std::string short_name(std::span<const std::uint8_t> e) {
  auto part = [&](std::size_t from, std::size_t len, bool lower) {
    std::string s;
    for (std::size_t i = from; i < from + len; ++i) {
      std::uint8_t c = e[i];
      if (i == 0 && c == 0x05) c = 0xE5;
      if (lower && c >= 'A' && c <= 'Z') c = static_cast<std::uint8_t>(c - 'A' + 'a');
      append_utf8(s, c);
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  };
  std::string base = part(0, 8, (e[12] & 0x08) != 0);
  std::string ext = part(8, 3, (e[12] & 0x10) != 0);
  return ext.empty() ? base : base + "." + ext;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return dir == "/" ? "/" + name : dir + "/" + name;
}

class Walker {
 public:
  Walker(const ByteSource& image, const VolumeLayout& layout, const AllocationTable& fat)
      : image_(image), layout_(layout), fat_(fat), owner_(std::size_t{layout.cluster_count} + 2, kNoOwner) {}

  VolumeTree run() {
    if (layout_.variant == Variant::Fat32) {
      FileEntry root;
      root.path = "/";
      root.is_directory = true;
      root.cluster_chain = chain(layout_.root_dir_first_cluster, "/", std::nullopt);
      const Bytes data = read_clusters(root.cluster_chain);
      tree_.directories.push_back(root);
      walk_directory(data, "/");
    } else {
      const Bytes data = image_.read(layout_.root_dir_offset(), layout_.root_dir_bytes());
      walk_directory(data, "/");
    }
    return std::move(tree_);
  }

 private:
  static constexpr std::uint32_t kNoOwner = 0xFFFFFFFF;

  // Follows a chain from `start`, claiming each cluster for a new owner.
  // With `size`, the chain must hold at least ceil(size / cluster_size)
  // clusters; without it (directories) the chain runs to end-of-chain.
  std::vector<std::uint32_t> chain(std::uint32_t start, const std::string& path, std::optional<std::uint64_t> size) {
    const std::uint32_t id = next_owner_++;
    std::vector<std::uint32_t> out;
    std::uint32_t c = start;
    while (true) {
      if (c < 2 || c > layout_.max_cluster()) {
        throw Error(ErrorCode::CorruptChain, path + ": cluster " + std::to_string(c) + " out of range");
      }
      if (owner_[c] == id) throw Error(ErrorCode::CorruptChain, path + ": cycle at cluster " + std::to_string(c));
      if (owner_[c] != kNoOwner) {
        throw Error(ErrorCode::CorruptChain, path + ": cluster " + std::to_string(c) + " is cross-linked");
      }
      owner_[c] = id;
      out.push_back(c);
      const auto st = fat_.state(c);
      if (st == AllocationTable::State::EndOfChain) break;
      if (st != AllocationTable::State::Next) {
        throw Error(ErrorCode::CorruptChain, path + ": broken link after cluster " + std::to_string(c));
      }
      c = fat_.next(c);
    }
    if (size) {
      const std::uint64_t needed = (*size + layout_.cluster_size - 1) / layout_.cluster_size;
      if (out.size() < needed) {
        throw Error(ErrorCode::TruncatedFile, path + ": chain holds " + std::to_string(out.size()) +
                                                  " clusters, size needs " + std::to_string(needed));
      }
    }
    return out;
  }

  Bytes read_clusters(const std::vector<std::uint32_t>& clusters) const {
    Bytes out(clusters.size() * std::size_t{layout_.cluster_size});
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      image_.read_at(layout_.cluster_offset(clusters[i]),
                     std::span(out.data() + i * layout_.cluster_size, layout_.cluster_size));
    }
    return out;
  }

  void walk_directory(const Bytes& data, const std::string& dir_path) {
    std::vector<std::uint16_t> lfn;
    int lfn_expected = 0;
    std::uint8_t lfn_checksum = 0;

    for (std::size_t at = 0; at + kDirEntrySize <= data.size(); at += kDirEntrySize) {
      const std::span<const std::uint8_t> e(data.data() + at, kDirEntrySize);
      if (e[0] == 0x00) break;
      if (e[0] == kDeletedMarker) {
        lfn.clear();
        lfn_expected = 0;
        continue;
      }
      const std::uint8_t attr = e[11];
      if ((attr & 0x3F) == kAttrLongName) {
        const int ord = e[0] & 0x1F;
        if (e[0] & 0x40) {
          lfn.assign(std::size_t(ord) * 13, 0xFFFF);
          lfn_expected = ord;
          lfn_checksum = e[13];
        } else if (ord != lfn_expected || e[13] != lfn_checksum) {
          lfn.clear();
          lfn_expected = 0;
          continue;
        }
        if (ord == 0 || lfn_expected == 0) continue;
        for (std::size_t k = 0; k < 13; ++k) lfn[std::size_t(ord - 1) * 13 + k] = le16(e, kLfnCharOffsets[k]);
        lfn_expected = ord - 1;
        continue;
      }
      if (attr & kAttrVolumeId) {
        lfn.clear();
        continue;
      }

      std::string name;
      if (!lfn.empty() && lfn_expected == 0 && short_name_checksum(e.subspan(0, 11)) == lfn_checksum) {
        std::vector<std::uint16_t> units;
        for (std::uint16_t u : lfn) {
          if (u == 0x0000 || u == 0xFFFF) break;
          units.push_back(u);
        }
        name = utf16_to_utf8(units);
      } else {
        name = short_name(e);
      }
      lfn.clear();
      lfn_expected = 0;
      if (name == "." || name == "..") continue;

      FileEntry f;
      f.path = join_path(dir_path, name);
      f.is_directory = (attr & kAttrDirectory) != 0;
      f.size = le32(e, 28);
      f.created = dos_to_unix(le16(e, 16), le16(e, 14), e[13]);
      f.modified = dos_to_unix(le16(e, 24), le16(e, 22));
      std::uint32_t first = le16(e, 26);
      if (layout_.variant == Variant::Fat32) first |= std::uint32_t{le16(e, 20)} << 16;

      if (f.is_directory) {
        f.size = 0;
        if (first == 0) continue;  // empty directory entry with no clusters
        f.cluster_chain = chain(first, f.path, std::nullopt);
        const Bytes sub = read_clusters(f.cluster_chain);
        tree_.directories.push_back(f);
        walk_directory(sub, f.path);
      } else {
        if (first != 0) {
          f.cluster_chain = chain(first, f.path, f.size);
        } else if (f.size != 0) {
          throw Error(ErrorCode::TruncatedFile, f.path + ": size " + std::to_string(f.size) + " with no clusters");
        }
        tree_.files.push_back(std::move(f));
      }
    }
  }

  const ByteSource& image_;
  const VolumeLayout& layout_;
  const AllocationTable& fat_;
  std::vector<std::uint32_t> owner_;
  std::uint32_t next_owner_ = 0;
  VolumeTree tree_;
};

class InventoryBuilder {
 public:
  explicit InventoryBuilder(const EnumerationOptions& options) : options_(options) {}

  void add(ArtifactKind kind, ExtentList extents, std::string label, std::optional<std::uint32_t> partition) {
    if (extents.empty()) return;
    Artifact a;
    a.kind = kind;
    a.extents = std::move(extents);
    a.label = std::move(label);
    a.partition = partition;
    push(std::move(a));
  }

  void add_range(ArtifactKind kind, std::uint64_t offset, std::uint64_t length, std::string label,
                 std::optional<std::uint32_t> partition) {
    if (length == 0) return;
    ExtentList e;
    e.append({offset, length});
    add(kind, std::move(e), std::move(label), partition);
  }

  void push(Artifact a) {
    auto pieces = a.extents.split(options_.max_artifact_size);
    if (pieces.size() == 1) {
      artifacts_.push_back(std::move(a));
      return;
    }
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      Artifact p = a;
      p.extents = std::move(pieces[i]);
      p.piece = PieceInfo{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(pieces.size())};
      artifacts_.push_back(std::move(p));
    }
  }

  std::vector<Artifact> take() { return std::move(artifacts_); }

 private:
  const EnumerationOptions& options_;
  std::vector<Artifact> artifacts_;
};

// Emits every artifact of one FAT volume, covering exactly
// [volume_offset, partition end).
VolumeInfo enumerate_volume(const ByteSource& image, const PartitionEntry& p, InventoryBuilder& out) {
  const VolumeLayout layout = parse_volume(image, p);
  const AllocationTable fat = read_fat(image, layout);
  const VolumeTree tree = walk_volume(image, layout, fat);
  const std::uint32_t part = p.index;
  const std::string prefix = "p" + std::to_string(part) + ":";
  const std::uint64_t bps = layout.bytes_per_sector;
  const std::uint64_t cs = layout.cluster_size;

  out.add_range(ArtifactKind::FsMetadata, layout.volume_offset, layout.reserved_sectors * bps, prefix + "reserved", part);
  for (std::uint32_t i = 0; i < layout.fat_count; ++i) {
    out.add_range(ArtifactKind::FsMetadata, layout.fat_offset(i), layout.fat_bytes(), prefix + "fat" + std::to_string(i + 1), part);
  }
  if (layout.variant == Variant::Fat16) {
    out.add_range(ArtifactKind::FsMetadata, layout.root_dir_offset(), layout.data_region_start - layout.root_dir_offset(),
                  prefix + "root_dir", part);
  }

  std::vector<bool> used(std::size_t{layout.cluster_count} + 2, false);

  for (const FileEntry& d : tree.directories) {
    ExtentList e;
    for (std::uint32_t c : d.cluster_chain) {
      e.append({layout.cluster_offset(c), cs});
      used[c] = true;
    }
    out.add(ArtifactKind::FsMetadata, std::move(e), prefix + "dir:" + d.path, part);
  }

  for (const FileEntry& f : tree.files) {
    ExtentList data, slack;
    std::uint64_t remaining = f.size;
    for (std::uint32_t c : f.cluster_chain) {
      used[c] = true;
      const std::uint64_t off = layout.cluster_offset(c);
      const std::uint64_t take = std::min(remaining, cs);
      if (take > 0) data.append({off, take});
      if (take < cs) slack.append({off + take, cs - take});
      remaining -= take;
    }
    if (!data.empty()) {
      Artifact a;
      a.kind = ArtifactKind::FileData;
      a.extents = std::move(data);
      a.path = f.path;
      a.times = FileTimes{f.created, f.modified};
      a.partition = part;
      out.push(std::move(a));
    }
    out.add(ArtifactKind::FileSlack, std::move(slack), prefix + "slack:" + f.path, part);
  }

  // Maximal runs of clusters no live file or directory owns: free space,
  // deleted-file remnants, bad and orphaned clusters.
  std::uint32_t c = 2;
  while (c <= layout.max_cluster()) {
    if (used[c]) {
      ++c;
      continue;
    }
    const std::uint32_t start = c;
    while (c <= layout.max_cluster() && !used[c]) ++c;
    out.add_range(ArtifactKind::Unallocated, layout.cluster_offset(start), std::uint64_t{c - start} * cs,
                  prefix + "unallocated", part);
  }

  const std::uint64_t data_end = layout.cluster_offset(layout.max_cluster() + 1);
  const std::uint64_t volume_end = layout.volume_offset + layout.volume_bytes();
  out.add_range(ArtifactKind::Unallocated, data_end, volume_end - data_end, prefix + "data_tail", part);
  out.add_range(ArtifactKind::Unallocated, volume_end, p.byte_end() - volume_end, prefix + "volume_tail", part);

  VolumeInfo info;
  info.partition = p;
  info.layout = layout;
  info.file_count = tree.files.size();
  info.directory_count = tree.directories.size();
  info.free_clusters = fat.free_count();
  return info;
}

}  // namespace

VolumeTree walk_volume(const ByteSource& image, const VolumeLayout& layout, const AllocationTable& fat) {
  return Walker(image, layout, fat).run();
}

std::vector<FileEntry> enumerate_files(const ByteSource& image, const VolumeLayout& layout, const AllocationTable& fat) {
  return walk_volume(image, layout, fat).files;
}

ArtifactInventory enumerate_artifacts(const ByteSource& image, const EnumerationOptions& options) {
  ArtifactInventory inv;
  inv.image_size = image.size();
  inv.partitions = parse_mbr(image);

  std::vector<PartitionEntry> by_start = inv.partitions;
  std::sort(by_start.begin(), by_start.end(),
            [](const PartitionEntry& a, const PartitionEntry& b) { return a.start_lba < b.start_lba; });
  if (std::none_of(by_start.begin(), by_start.end(), [](const PartitionEntry& p) { return is_fat_type_code(p.type_code); })) {
    throw Error(ErrorCode::UnsupportedVariant, "image has no FAT partition");
  }

  InventoryBuilder out(options);
  const std::uint64_t first = by_start.front().byte_offset();
  out.add_range(ArtifactKind::FsMetadata, 0, first, "mbr", std::nullopt);

  std::uint64_t cursor = first;
  for (const PartitionEntry& p : by_start) {
    out.add_range(ArtifactKind::InterPartitionGap, cursor, p.byte_offset() - cursor, "gap", std::nullopt);
    if (is_fat_type_code(p.type_code)) {
      inv.volumes.push_back(enumerate_volume(image, p, out));
    } else {
      out.add_range(ArtifactKind::Unallocated, p.byte_offset(), p.byte_size(),
                    "p" + std::to_string(p.index) + ":unparsed", p.index);
    }
    cursor = p.byte_end();
  }
  out.add_range(ArtifactKind::InterPartitionGap, cursor, image.size() - cursor, "gap", std::nullopt);

  inv.artifacts = out.take();
  sort_canonical(inv.artifacts);
  const CoverageReport cov = coverage_check(inv.artifacts, inv.image_size);
  if (!cov.ok()) throw Error(ErrorCode::CorruptVolume, "artifact inventory does not tile the image: " + cov.describe());
  return inv;
}

}  // namespace dedupacq::fat
