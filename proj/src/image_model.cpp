#include "dedupacq/image_model.hpp"

#include <algorithm>
#include <ctime>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "dedupacq/error.hpp"

namespace dedupacq {

using json = nlohmann::json;

namespace {

void check_extent(const Extent& e) {
  if (e.length == 0) {
    throw Error(ErrorCode::InvalidManifest, "zero-length extent at offset " + std::to_string(e.offset));
  }
  if (e.offset > std::numeric_limits<std::uint64_t>::max() - e.length) {
    throw Error(ErrorCode::InvalidManifest, "extent at offset " + std::to_string(e.offset) + " overflows");
  }
}

std::string extent_text(const Extent& e) {
  return "(" + std::to_string(e.offset) + ", " + std::to_string(e.length) + ")";
}

}  // namespace

ExtentList::ExtentList(std::vector<Extent> extents) {
  for (const Extent& e : extents) check_extent(e);
  std::vector<Extent> sorted = extents;
  std::sort(sorted.begin(), sorted.end(), [](const Extent& a, const Extent& b) { return a.offset < b.offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].offset < sorted[i - 1].end()) {
      throw Error(ErrorCode::InvalidManifest,
                  "overlapping extents " + extent_text(sorted[i - 1]) + " and " + extent_text(sorted[i]));
    }
  }
  for (const Extent& e : extents) append(e);
}

void ExtentList::append(Extent e) {
  check_extent(e);
  total_ += e.length;
  if (!extents_.empty() && extents_.back().end() == e.offset) {
    extents_.back().length += e.length;
    return;
  }
  extents_.push_back(e);
}

std::uint64_t ExtentList::max_end() const noexcept {
  std::uint64_t end = 0;
  for (const Extent& e : extents_) end = std::max(end, e.end());
  return end;
}

std::vector<ExtentList> ExtentList::split(std::uint64_t max_piece) const {
  std::vector<ExtentList> pieces;
  if (max_piece == 0 || total_ <= max_piece) {
    pieces.push_back(*this);
    return pieces;
  }
  ExtentList current;
  for (Extent e : extents_) {
    while (e.length > 0) {
      const std::uint64_t room = max_piece - current.total_length();
      const std::uint64_t take = std::min(room, e.length);
      current.append({e.offset, take});
      e.offset += take;
      e.length -= take;
      if (current.total_length() == max_piece) {
        pieces.push_back(std::move(current));
        current = ExtentList();
      }
    }
  }
  if (!current.empty()) pieces.push_back(std::move(current));
  return pieces;
}

std::string_view to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::FileData: return "file_data";
    case ArtifactKind::FileSlack: return "file_slack";
    case ArtifactKind::Unallocated: return "unallocated";
    case ArtifactKind::FsMetadata: return "fs_metadata";
    case ArtifactKind::InterPartitionGap: return "inter_partition_gap";
  }
  return "unknown";
}

ArtifactKind artifact_kind_from_string(std::string_view text) {
  for (ArtifactKind k : {ArtifactKind::FileData, ArtifactKind::FileSlack, ArtifactKind::Unallocated,
                         ArtifactKind::FsMetadata, ArtifactKind::InterPartitionGap}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::InvalidManifest, "unknown artifact kind '" + std::string(text) + "'");
}

std::string CoverageReport::describe(std::size_t max_items) const {
  std::ostringstream out;
  auto list = [&](const char* name, const std::vector<Extent>& v) {
    if (v.empty()) return;
    out << v.size() << ' ' << name << ':';
    for (std::size_t i = 0; i < v.size() && i < max_items; ++i) out << ' ' << extent_text(v[i]);
    if (v.size() > max_items) out << " ...";
    out << "; ";
  };
  list("gaps", gaps);
  list("overlaps", overlaps);
  list("out-of-bounds", out_of_bounds);
  std::string s = out.str();
  return s.empty() ? "ok" : s.substr(0, s.size() - 2);
}

CoverageReport coverage_check(std::span<const Artifact> artifacts, std::uint64_t image_size) {
  std::vector<Extent> all;
  for (const Artifact& a : artifacts) {
    all.insert(all.end(), a.extents.extents().begin(), a.extents.extents().end());
  }
  std::sort(all.begin(), all.end(), [](const Extent& a, const Extent& b) {
    return a.offset != b.offset ? a.offset < b.offset : a.length < b.length;
  });

  CoverageReport report;
  std::uint64_t cursor = 0;
  for (const Extent& e : all) {
    if (e.end() > image_size) {
      const std::uint64_t start = std::max(e.offset, image_size);
      report.out_of_bounds.push_back({start, e.end() - start});
    }
    if (e.offset > cursor) {
      report.gaps.push_back({cursor, e.offset - cursor});
    } else if (e.offset < cursor) {
      report.overlaps.push_back({e.offset, std::min(cursor, e.end()) - e.offset});
    }
    cursor = std::max(cursor, e.end());
  }
  if (cursor < image_size) report.gaps.push_back({cursor, image_size - cursor});
  return report;
}

void stream_extents(const ByteSource& image, const ExtentList& extents,
                    const std::function<void(std::span<const std::uint8_t>)>& sink, std::size_t chunk) {
  for (const Extent& e : extents.extents()) {
    if (e.offset > image.size() || e.length > image.size() - e.offset) {
      throw Error(ErrorCode::OutOfBounds, "extent " + extent_text(e) + " exceeds image size " +
                                              std::to_string(image.size()));
    }
  }
  Bytes buf(static_cast<std::size_t>(std::min<std::uint64_t>(chunk, std::max<std::uint64_t>(extents.total_length(), 1))));
  for (const Extent& e : extents.extents()) {
    std::uint64_t done = 0;
    while (done < e.length) {
      const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(buf.size(), e.length - done));
      image.read_at(e.offset + done, std::span(buf.data(), n));
      sink(std::span<const std::uint8_t>(buf.data(), n));
      done += n;
    }
  }
}

Bytes extent_bytes(const ByteSource& image, const ExtentList& extents) {
  Bytes out;
  out.reserve(static_cast<std::size_t>(extents.total_length()));
  stream_extents(image, extents, [&](std::span<const std::uint8_t> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

void sort_canonical(std::vector<Artifact>& artifacts) {
  std::sort(artifacts.begin(), artifacts.end(), [](const Artifact& a, const Artifact& b) {
    return a.extents.first_offset() < b.extents.first_offset();
  });
}

std::string format_utc(std::int64_t seconds) {
  std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::int64_t parse_utc(std::string_view text) {
  std::tm tm{};
  std::istringstream in{std::string(text)};
  in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  if (in.fail()) throw Error(ErrorCode::InvalidManifest, "bad UTC timestamp '" + std::string(text) + "'");
  return static_cast<std::int64_t>(timegm(&tm));
}

namespace {

json artifact_to_json(const Artifact& a) {
  json j;
  j["kind"] = to_string(a.kind);
  json ext = json::array();
  for (const Extent& e : a.extents.extents()) ext.push_back({e.offset, e.length});
  j["extents"] = std::move(ext);
  j["digest"] = a.digest.hex();
  j["size"] = a.logical_size();
  if (a.fuzzy) j["fuzzy"] = a.fuzzy->text();
  if (a.path) j["path"] = *a.path;
  if (a.times) {
    j["created"] = a.times->created;
    j["modified"] = a.times->modified;
  }
  if (a.partition) j["partition"] = *a.partition;
  if (a.piece) j["piece"] = {a.piece->index, a.piece->count};
  if (!a.label.empty()) j["label"] = a.label;
  return j;
}

Artifact artifact_from_json(const json& j) {
  Artifact a;
  a.kind = artifact_kind_from_string(j.at("kind").get<std::string>());
  std::vector<Extent> ext;
  for (const json& e : j.at("extents")) ext.push_back({e.at(0).get<std::uint64_t>(), e.at(1).get<std::uint64_t>()});
  a.extents = ExtentList(std::move(ext));
  if (a.extents.empty()) throw Error(ErrorCode::InvalidManifest, "artifact without extents");
  a.digest = Digest::from_hex(j.at("digest").get<std::string>());
  if (j.at("size").get<std::uint64_t>() != a.logical_size()) {
    throw Error(ErrorCode::InvalidManifest, "artifact size does not match its extents");
  }
  if (j.contains("fuzzy")) a.fuzzy = FuzzyDigest::parse(j["fuzzy"].get<std::string>());
  if (j.contains("path")) a.path = j["path"].get<std::string>();
  if (j.contains("created") || j.contains("modified")) {
    a.times = FileTimes{j.at("created").get<std::int64_t>(), j.at("modified").get<std::int64_t>()};
  }
  if (j.contains("partition")) a.partition = j["partition"].get<std::uint32_t>();
  if (j.contains("piece")) a.piece = PieceInfo{j["piece"].at(0).get<std::uint32_t>(), j["piece"].at(1).get<std::uint32_t>()};
  if (j.contains("label")) a.label = j["label"].get<std::string>();
  if (a.path.has_value() != (a.kind == ArtifactKind::FileData)) {
    throw Error(ErrorCode::InvalidManifest, "path must be present exactly for file_data artifacts");
  }
  return a;
}

}  // namespace

std::string manifest_canonical_bytes(const Manifest& m) {
  const CoverageReport cov = coverage_check(m.artifacts, m.image_size);
  if (!cov.ok()) throw Error(ErrorCode::InvalidManifest, "coverage check failed: " + cov.describe());

  std::vector<const Artifact*> order;
  order.reserve(m.artifacts.size());
  for (const Artifact& a : m.artifacts) order.push_back(&a);
  std::sort(order.begin(), order.end(), [](const Artifact* a, const Artifact* b) {
    return a->extents.first_offset() < b->extents.first_offset();
  });

  json j;
  j["format"] = "dedupacq-manifest/1";
  j["case_id"] = m.case_id;
  j["investigator_id"] = m.investigator_id;
  j["disk_id"] = m.disk_id;
  j["acquired_at"] = format_utc(m.acquired_at);
  j["image_size"] = m.image_size;
  j["image_digest"] = m.image_digest.hex();
  json arts = json::array();
  for (const Artifact* a : order) arts.push_back(artifact_to_json(*a));
  j["artifacts"] = std::move(arts);
  // nlohmann::json objects are std::map backed, so keys come out sorted.
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string manifest_id_of(const Manifest& m) { return content_hash(manifest_canonical_bytes(m)).hex(); }

Manifest parse_manifest(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, std::string("manifest JSON: ") + e.what());
  }
  Manifest m;
  try {
    if (j.at("format").get<std::string>() != "dedupacq-manifest/1") {
      throw Error(ErrorCode::InvalidManifest, "unsupported manifest format");
    }
    m.case_id = j.at("case_id").get<std::string>();
    m.investigator_id = j.at("investigator_id").get<std::string>();
    m.disk_id = j.at("disk_id").get<std::string>();
    m.acquired_at = parse_utc(j.at("acquired_at").get<std::string>());
    m.image_size = j.at("image_size").get<std::uint64_t>();
    m.image_digest = Digest::from_hex(j.at("image_digest").get<std::string>());
    for (const json& a : j.at("artifacts")) m.artifacts.push_back(artifact_from_json(a));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, std::string("manifest field: ") + e.what());
  }
  sort_canonical(m.artifacts);
  m.manifest_id = manifest_id_of(m);
  return m;
}

}  // namespace dedupacq
