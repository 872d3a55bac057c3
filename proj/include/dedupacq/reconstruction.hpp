#pragma once

// Rebuilds a raw image from a manifest plus the store and proves it matches.
// Output only ever appears at the target path after verification passed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dedupacq/image_model.hpp"
#include "dedupacq/repository.hpp"

namespace dedupacq {

struct ReconstructOptions {
  bool sparse = true;  // false: write zeros over the whole staging file first
  std::size_t fetch_workers = 4;
  // Tests only: place artifacts in a shuffled order.
  std::optional<std::uint64_t> shuffle_seed;
};

struct ReconstructionReport {
  std::string manifest_id;
  std::filesystem::path output;
  std::uint64_t bytes_written = 0;
  std::uint64_t artifacts_placed = 0;
  std::uint64_t blobs_fetched = 0;
  bool verified = false;
  Digest expected;
  Digest computed;
  double seconds = 0;
};

// Throws NotFound (manifest), DanglingDigest (details = missing hex digests,
// nothing written) or VerificationFailed (details = expected, computed).
ReconstructionReport reconstruct(Repository& repo, const std::string& manifest_id,
                                 const std::filesystem::path& out, const ReconstructOptions& options = {});
ReconstructionReport reconstruct(Repository& repo, const Manifest& manifest, const std::filesystem::path& out,
                                 const ReconstructOptions& options = {});

struct SampledArtifact {
  std::size_t index = 0;
  bool ok = false;
};

struct VerifyResult {
  bool size_ok = false;
  bool digest_ok = false;
  std::uint64_t expected_size = 0;
  std::uint64_t actual_size = 0;
  Digest expected;
  Digest computed;
  std::vector<SampledArtifact> sampled;

  bool spot_ok() const noexcept;
  bool passed() const noexcept { return size_ok && digest_ok && spot_ok(); }
  std::vector<std::size_t> failed_artifacts() const;
};

// Whole-image size and digest check. With spot_check > 0, that many distinct
// artifacts are also re-read from the image and re-hashed. Never throws for
// a mismatch; I/O errors on the image itself propagate.
VerifyResult verify_image(const ByteSource& image, const Manifest& manifest, std::size_t spot_check = 0,
                          std::uint64_t seed = 0);
VerifyResult verify_image(const std::filesystem::path& image, const Manifest& manifest, std::size_t spot_check = 0,
                          std::uint64_t seed = 0);

struct ArtifactSelector {
  std::optional<std::string> path;  // "/DIR/FILE.TXT" or "p<slot>:/DIR/FILE.TXT"
  std::optional<Digest> digest;
};

struct Placement {
  std::string where;
  std::optional<std::uint32_t> partition;
  std::uint64_t offset = 0;
};

struct ExtractReport {
  std::uint64_t bytes_written = 0;
  std::vector<Digest> pieces;          // content digests, in order
  std::vector<Placement> placements;  // every artifact the selector matched
};

// Path selectors gather every piece of the file; digest selectors fetch one
// blob and list all of its placements. Throws NotFound, Ambiguous (details =
// candidate paths) or VerificationFailed.
ExtractReport extract_artifact(Repository& repo, const Manifest& manifest, const ArtifactSelector& selector,
                               const std::filesystem::path& out);

}  // namespace dedupacq
