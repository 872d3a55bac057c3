#pragma once

// On-disk constants and little-endian helpers shared by the FAT parser and
// the fixture builder. Private to the library.

#include <cstdint>
#include <ctime>
#include <span>
#include <string>

namespace dedupacq::fat::detail {

constexpr std::size_t kDirEntrySize = 32;
constexpr std::uint8_t kAttrReadOnly = 0x01;
constexpr std::uint8_t kAttrHidden = 0x02;
constexpr std::uint8_t kAttrSystem = 0x04;
constexpr std::uint8_t kAttrVolumeId = 0x08;
constexpr std::uint8_t kAttrDirectory = 0x10;
constexpr std::uint8_t kAttrArchive = 0x20;
constexpr std::uint8_t kAttrLongName = 0x0F;
constexpr std::uint8_t kDeletedMarker = 0xE5;

constexpr std::uint32_t kFat16Eoc = 0xFFF8;
constexpr std::uint32_t kFat16Bad = 0xFFF7;
constexpr std::uint32_t kFat32Mask = 0x0FFFFFFF;
constexpr std::uint32_t kFat32Eoc = 0x0FFFFFF8;
constexpr std::uint32_t kFat32Bad = 0x0FFFFFF7;

constexpr std::uint32_t kMinFat16Clusters = 4085;
constexpr std::uint32_t kMinFat32Clusters = 65525;

inline std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}
inline std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}
inline void put16(std::span<std::uint8_t> b, std::size_t at, std::uint32_t v) {
  b[at] = static_cast<std::uint8_t>(v);
  b[at + 1] = static_cast<std::uint8_t>(v >> 8);
}
inline void put32(std::span<std::uint8_t> b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// FAT stores local wall-clock time; the project treats it as UTC.
inline std::int64_t dos_to_unix(std::uint16_t date, std::uint16_t time, std::uint8_t tenths = 0) {
  std::tm tm{};
  tm.tm_year = 80 + (date >> 9);
  tm.tm_mon = ((date >> 5) & 0xF) - 1;
  tm.tm_mday = date & 0x1F;
  tm.tm_hour = time >> 11;
  tm.tm_min = (time >> 5) & 0x3F;
  tm.tm_sec = (time & 0x1F) * 2;
  if (tm.tm_mon < 0 || tm.tm_mon > 11 || tm.tm_mday == 0) return 0;
  return static_cast<std::int64_t>(timegm(&tm)) + tenths / 100;
}

struct DosTime {
  std::uint16_t date = 0;
  std::uint16_t time = 0;
  std::uint8_t tenths = 0;
};

inline DosTime unix_to_dos(std::int64_t seconds) {
  std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  DosTime d;
  const int year = tm.tm_year - 80;
  d.date = static_cast<std::uint16_t>((year < 0 ? 0 : year) << 9 | (tm.tm_mon + 1) << 5 | tm.tm_mday);
  d.time = static_cast<std::uint16_t>(tm.tm_hour << 11 | tm.tm_min << 5 | tm.tm_sec / 2);
  d.tenths = static_cast<std::uint8_t>((tm.tm_sec % 2) * 100);
  return d;
}

// Checksum of an 11-byte short name, stored in each long-name entry.
inline std::uint8_t short_name_checksum(std::span<const std::uint8_t> name11) {
  std::uint8_t sum = 0;
  for (std::size_t i = 0; i < 11; ++i) sum = static_cast<std::uint8_t>(((sum & 1) << 7) + (sum >> 1) + name11[i]);
  return sum;
}

// Byte offsets of the 13 UTF-16 code units within a long-name entry.
constexpr std::size_t kLfnCharOffsets[13] = {1, 3, 5, 7, 9, 14, 16, 18, 20, 22, 24, 28, 30};

}  // namespace dedupacq::fat::detail
