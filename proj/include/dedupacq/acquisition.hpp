#pragma once

// Acquisition client: enumerate, hash, check, upload misses, commit.
//
// The image is read exactly once, front to back. Metadata parsing goes
// through a ReadOnceCache so the sequential pass reuses those pages instead
// of reading them again. Stages are connected by bounded queues:
//
//   reader -> hash workers -> checker (CHECK batches) -> uploaders (PUT)
//
// and the manifest is committed after every stage has drained.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/fat.hpp"
#include "dedupacq/image_model.hpp"
#include "dedupacq/repository.hpp"

namespace dedupacq {

struct AcquisitionConfig {
  std::string case_id;
  std::string investigator_id;
  std::string disk_id;
  std::size_t check_batch = 512;  // 1..512
  std::size_t hash_workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t upload_workers = 4;
  bool compute_fuzzy = true;
  std::uint64_t fuzzy_min_size = 4096;
  std::uint64_t max_artifact_size = fat::kDefaultMaxArtifactSize;
  std::size_t queue_capacity = 256;
  std::uint64_t memory_budget = 512ull << 20;
  std::optional<std::int64_t> acquired_at;  // defaults to now

  // Throws std::invalid_argument naming the bad field.
  void validate() const;
};

// Seconds. Stage figures are summed busy time across that stage's threads,
// so with parallel workers they can exceed the wall time.
struct PhaseTimings {
  double enumerate = 0;
  double read = 0;
  double hash = 0;
  double check = 0;
  double upload = 0;
  double commit = 0;
  double total = 0;
};

struct DuplicateGroup {
  Digest digest;
  std::uint64_t count = 0;
  std::uint64_t size = 0;
  ArtifactKind kind = ArtifactKind::FileData;
  std::string where;  // first path or label in canonical order
};

struct AcquisitionReport {
  std::string manifest_id;
  std::uint64_t image_size = 0;
  Digest image_digest;
  std::uint64_t artifact_count = 0;
  std::uint64_t duplicate_count = 0;
  std::uint64_t unique_uploaded_count = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t payload_bytes_transferred = 0;
  std::uint64_t file_count = 0;            // FileData artifacts
  std::uint64_t file_duplicate_count = 0;  // FileData artifacts not uploaded
  PhaseTimings timings;
  std::vector<DuplicateGroup> histogram;  // count >= 2, descending count, then digest

  double duplicate_ratio() const noexcept {
    return artifact_count == 0 ? 0.0 : static_cast<double>(duplicate_count) / static_cast<double>(artifact_count);
  }
  double file_duplicate_ratio() const noexcept {
    return file_count == 0 ? 0.0 : static_cast<double>(file_duplicate_count) / static_cast<double>(file_count);
  }
};

// `device` must stay unchanged for the duration. Errors from parsing the
// image propagate unchanged and nothing is uploaded. Failures after the
// pipeline has started raise ResumableFailure; blobs already stored stay
// (harmless orphans) and no manifest is committed.
AcquisitionReport acquire(const ByteSource& device, Repository& repo, const AcquisitionConfig& config);
AcquisitionReport acquire(const std::filesystem::path& image, Repository& repo, const AcquisitionConfig& config);

struct InspectReport {
  std::uint64_t image_size = 0;
  Digest image_digest;
  std::uint64_t bytes_read = 0;
  std::vector<fat::PartitionEntry> partitions;
  std::vector<fat::VolumeInfo> volumes;
  std::vector<Artifact> artifacts;  // canonical order, digests filled in
  std::vector<DuplicateGroup> histogram;
  PhaseTimings timings;
};

// Local dry run: enumerate and hash, no repository.
InspectReport inspect(const ByteSource& device, const AcquisitionConfig& config = {});
InspectReport inspect(const std::filesystem::path& image, const AcquisitionConfig& config = {});

// Groups by digest; keeps groups with count >= 2, sorted by descending count
// then ascending digest hex.
std::vector<DuplicateGroup> duplicate_histogram(const std::vector<Artifact>& artifacts);

struct BenchmarkOptions {
  int repetitions = 1;
  bool via_network = true;         // loopback DFD1 server instead of a direct store
  double throttle_bytes_per_sec = 0;  // 0 = unthrottled; applies to the client link
  std::filesystem::path work_dir;  // fresh stores are created here (default: temp dir)
};

struct BenchmarkRun {
  AcquisitionReport initial;
  AcquisitionReport reacquisition;
  double initial_wall = 0;
  double reacquisition_wall = 0;
};

struct BenchmarkReport {
  std::uint64_t image_size = 0;
  std::vector<BenchmarkRun> runs;

  std::size_t reacquisition_faster() const;
};

// Each repetition: fresh empty store, acquire (initial), acquire again.
BenchmarkReport benchmark(const std::filesystem::path& image, const AcquisitionConfig& config,
                          const BenchmarkOptions& options);

}  // namespace dedupacq
