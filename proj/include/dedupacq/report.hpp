#pragma once

// Human-readable tables and schema-versioned JSON for every CLI result.
// JSON schemas are documented in docs/report-json.md.

#include <string>
#include <vector>

#include "dedupacq/acquisition.hpp"
#include "dedupacq/fixture.hpp"
#include "dedupacq/reconstruction.hpp"
#include "dedupacq/store.hpp"

namespace dedupacq::report {

enum class Format { Table, Json };

Format parse_format(std::string_view text);  // "table" | "json"; throws std::invalid_argument

std::string render(const AcquisitionReport& r, Format f);
std::string render(const InspectReport& r, Format f, bool list_artifacts = false);
std::string render(const BenchmarkReport& r, Format f);
std::string render(const StoreStats& s, Format f);
std::string render(const AuditReport& a, Format f);
std::string render(const ReconstructionReport& r, Format f);
std::string render(const VerifyResult& v, const Manifest& m, Format f);
std::string render(const ExtractReport& r, Format f);
std::string render_dupes(const Digest& d, const std::vector<OccurrenceRecord>& occurrences, Format f);
std::string render_mkimage(const fixture::GroundTruth& truth, const std::string& out, Format f);

std::string human_bytes(std::uint64_t n);

}  // namespace dedupacq::report
