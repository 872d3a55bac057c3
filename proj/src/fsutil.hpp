#pragma once

// Small POSIX file helpers shared by the store and reconstruction.

#include <filesystem>
#include <span>
#include <string>

#include "dedupacq/byte_source.hpp"

namespace dedupacq::fsutil {

// Writes `data` to `temp`, optionally fsyncs, then renames it to `target`.
// ENOSPC maps to StorageError, other failures to IoError. The temp file is
// removed on failure.
void write_atomic(const std::filesystem::path& temp, const std::filesystem::path& target,
                  std::span<const std::uint8_t> data, bool durable);

Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Appends one line (and flushes) to a log file opened in append mode.
void append_line(const std::filesystem::path& path, const std::string& line, bool durable);

void fsync_dir(const std::filesystem::path& dir);

}  // namespace dedupacq::fsutil
